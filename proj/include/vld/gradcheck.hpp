#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vld/tape.hpp"
#include "vld/tensor.hpp"

namespace vld {

// Builds a scalar value on the given tape from leaves created for each parameter
// tensor, in order. Rebuilt from scratch for every finite-difference probe.
using ScalarGraph = std::function<Value(Tape&, const std::vector<Value>&)>;

struct GradCheckReport {
    bool ok = true;
    double max_rel_err = 0.0;  // over every coordinate, sub-floor noise included
    double max_tol_frac = 0.0; // worst |fd - an| as a fraction of its tolerance
    std::string detail;        // first failing coordinate, empty when ok
};

// Central differences with step h against the tape's analytic gradients.
// A coordinate passes when
//   |fd - an| <= abs_floor * max(1, |loss|) + rel_tol * max(|fd|, |an|).
// The floor absorbs f32 forward rounding amplified by 1/(2h); it scales with
// the loss because each probe rounds the full loss value to f32. A wrong
// backward formula shows up as errors proportional to the gradient itself,
// far above this floor.
GradCheckReport grad_check(const ScalarGraph& build, const std::vector<Tensor>& params,
                           float h = 1e-3f, double rel_tol = 1e-3, double abs_floor = 5e-4);

// Loss value at the given parameter setting (forward only).
double eval_scalar(const ScalarGraph& build, const std::vector<Tensor>& params);

} // namespace vld

#include "vld/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "vld/errors.hpp"

namespace vld {

double eval_scalar(const ScalarGraph& build, const std::vector<Tensor>& params) {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    const Value root = build(tape, leaves);
    const Tensor& v = tape.value(root);
    if (v.size() != 1) throw ContractError("grad_check graph must produce a scalar");
    return v.at(0);
}

GradCheckReport grad_check(const ScalarGraph& build, const std::vector<Tensor>& params, float h,
                           double rel_tol, double abs_floor) {
    // Analytic pass.
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    tape.backward(build(tape, leaves));

    // Probe noise grows with the magnitude of the loss itself: each forward
    // pass rounds to f32, and the difference quotient amplifies that by 1/2h.
    const double f0 = eval_scalar(build, params);
    const double floor = abs_floor * std::max(1.0, std::abs(f0));

    GradCheckReport rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const bool have = tape.has_grad(leaves[pi]);
        for (int e = 0; e < params[pi].size(); ++e) {
            std::vector<Tensor> probe = params;
            const float x0 = probe[pi].at(e);
            probe[pi].at(e) = x0 + h;
            const double hp = static_cast<double>(probe[pi].at(e)) - x0;
            const double fp = eval_scalar(build, probe);
            probe[pi].at(e) = x0 - h;
            const double hm = static_cast<double>(x0) - probe[pi].at(e);
            const double fm = eval_scalar(build, probe);
            const double fd = (fp - fm) / (hp + hm);
            const double an = have ? tape.grad(leaves[pi]).at(e) : 0.0;
            const double err = std::abs(fd - an);
            const double tol = floor + rel_tol * std::max(std::abs(fd), std::abs(an));
            const double rel = err / std::max(1e-12, std::max(std::abs(fd), std::abs(an)));
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            rep.max_tol_frac = std::max(rep.max_tol_frac, err / tol);
            if (err > tol && rep.ok) {
                rep.ok = false;
                std::ostringstream os;
                os << "param " << pi << " elem " << e << ": analytic " << an << " vs fd " << fd
                   << " (|diff| " << err << " > tol " << tol << ")";
                rep.detail = os.str();
            }
        }
    }
    return rep;
}

} // namespace vld

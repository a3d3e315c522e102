#include "vld/tensor.hpp"

#include <cmath>
#include <numeric>

#include "vld/errors.hpp"

namespace vld {

namespace {
size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw ContractError("tensor rank must be 1..3, got " + shape_str(shape));
    }
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ContractError("tensor dims must be positive, got " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    return n;
}
} // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
        throw ContractError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + vld::shape_str(shape_));
    }
}

Tensor Tensor::full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(float v) { data_.assign(data_.size(), v); }

std::string Tensor::shape_str() const { return vld::shape_str(shape_); }

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace vld

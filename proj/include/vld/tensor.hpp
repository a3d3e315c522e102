#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vld {

// Dense rank-1..3 float tensor, row-major. Storage and elementwise compute
// are 32-bit; reductions elsewhere accumulate in 64-bit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }
    static Tensor identity(int n);

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    int size() const { return static_cast<int>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // rank-2 convenience
    int rows() const { return shape_[0]; }
    int cols() const { return shape_[1]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int i) { return data_[static_cast<size_t>(i)]; }
    float at(int i) const { return data_[static_cast<size_t>(i)]; }
    float& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    float at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(float v);

    std::string shape_str() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::string shape_str(const std::vector<int>& shape);

} // namespace vld

#include "fedtgp/tensor.hpp"

#include <functional>
#include <numeric>

#include "fedtgp/errors.hpp"

namespace fedtgp {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one extent");
    }
    for (auto e : shape) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + fedtgp::shape_string(shape));
        }
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(extent_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != extent_product(shape_)) {
        throw DimensionError("tensor of shape " + fedtgp::shape_string(shape_) + " given " +
                             std::to_string(values_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return shape_[0];
    throw DimensionError("matrix view of rank-" + std::to_string(rank()) + " tensor " + shape_string());
}

std::size_t Tensor::cols() const {
    if (rank() == 1) return shape_[0];
    if (rank() == 2) return shape_[1];
    throw DimensionError("matrix view of rank-" + std::to_string(rank()) + " tensor " + shape_string());
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_string());
    }
    return values_[0];
}

std::span<double> Tensor::grad() {
    if (!grad_) grad_.emplace(values_.size(), 0.0);
    return *grad_;
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw ContractError("tensor " + shape_string() + " has no gradient");
    return *grad_;
}

std::string Tensor::shape_string() const { return fedtgp::shape_string(shape_); }

}  // namespace fedtgp

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedtgp {

// Dense row-major array of doubles with an optional gradient buffer.
// Rank 1 tensors are treated as a single row wherever a matrix is expected.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    // Matrix view: rank 1 is 1×n, rank 2 is rows×cols.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

    double item() const;

    bool has_grad() const noexcept { return grad_.has_value(); }
    // Allocates a zeroed gradient buffer on first use.
    std::span<double> grad();
    std::span<const double> grad() const;
    void clear_grad() noexcept { grad_.reset(); }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    std::string shape_string() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
    std::optional<std::vector<double>> grad_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace fedtgp

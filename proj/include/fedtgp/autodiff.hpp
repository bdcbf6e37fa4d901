#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Tape records every operation applied to Vars in creation order. Leaves are
// either constants or parameters bound to an external Tensor; after backward()
// the parameter gradients are accumulated into those tensors' grad buffers.
// A Tape built with tracking disabled runs the identical forward code but keeps
// no backward rules.
//
// A Tape and the Vars it hands out belong to one thread.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedtgp/tensor.hpp"

namespace fedtgp {

class Tape;

// Handle to a node on a tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    // Propagates the output gradient to the inputs through Tape::accumulate.
    using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

    explicit Tape(bool tracking = true) : tracking_(tracking) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool tracking() const noexcept { return tracking_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var constant(Tensor value);
    // Leaf whose gradient lands in param.grad() after backward(). The tensor
    // must outlive the tape.
    Var parameter(Tensor& param);

    // Reverse sweep from a scalar node. Each node is visited at most once.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() w.r.t. v (zeros if v was not reached).
    std::vector<double> grad(Var v) const;

    // Used by op implementations.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);
    bool requires_grad(Var v) const;
    void accumulate(Var v, std::span<const double> g);
    void accumulate(Var v, std::size_t index, double g);

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor* param = nullptr;
        bool requires_grad = false;
        std::vector<double> grad;
    };

    void check_owned(Var v) const;

    bool tracking_;
    std::vector<Node> nodes_;
};

// Operations. All inputs must live on the same tape.

// a[m×k] · b[k×n]
Var matmul(Var a, Var b);
// x[B×n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sum(Var a);
Var mean(Var a);
// Rows of a[N×K] selected by index; result [idx.size()×K].
Var gather_rows(Var a, std::span<const std::size_t> idx);

enum class Reduction { mean, sum };

// −log softmax(logits)[label] per row, reduced over the batch. Stabilized by
// subtracting each row's maximum.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                          Reduction reduction = Reduction::mean);

// √Σ(a−b)² for two equal-length vectors. Gradient at a == b is zero.
Var euclidean_distance(Var a, Var b);
// Row-wise distances of two [B×K] matrices; result [B].
Var row_distances(Var a, Var b);
// All pairwise distances between rows of a[N×K] and rows of b[C×K]; result [N×C].
Var pairwise_distances(Var a, Var b);

// p ← p − lr·grad(p), then clears the gradient. Throws ContractError when a
// parameter has no gradient.
void sgd_step(std::span<Tensor* const> params, double lr);

}  // namespace fedtgp

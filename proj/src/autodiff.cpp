#include "fedtgp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedtgp/errors.hpp"

namespace fedtgp {

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("value() on an unbound Var");
    return tape_->value(*this);
}

void Tape::check_owned(Var v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
        throw ContractError("Var does not belong to this tape");
    }
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
    Node n;
    n.value = param;
    n.value.clear_grad();
    n.param = &param;
    n.requires_grad = tracking_;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    if (tracking_) {
        n.inputs.reserve(inputs.size());
        for (const auto& in : inputs) {
            check_owned(in);
            n.inputs.push_back(in.id());
            n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
        }
        if (n.requires_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

bool Tape::requires_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
}

void Tape::accumulate(Var v, std::span<const double> g) {
    auto& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::accumulate(Var v, std::size_t index, double g) {
    auto& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    n.grad[index] += g;
}

void Tape::backward(Var loss) {
    check_owned(loss);
    if (!tracking_) throw ContractError("backward() on a tape with tracking disabled");
    if (value(loss).size() != 1) {
        throw DimensionError("backward() needs a scalar, got " + value(loss).shape_string());
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad.assign(1, 1.0);

    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (n.param && n.requires_grad) n.param->grad();  // unreached parameters get an explicit zero
        if (n.grad.empty()) continue;
        if (n.backward) {
            // Copy: the callback may accumulate into nodes_ but never into itself.
            const std::vector<double> g = n.grad;
            n.backward(*this, g);
        }
        if (n.param) {
            auto pg = n.param->grad();
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
        }
    }
}

std::vector<double> Tape::grad(Var v) const {
    check_owned(v);
    const auto& n = nodes_[v.id()];
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
}

namespace {

Tape& same_tape(Var a, Var b) {
    if (!a.valid() || a.tape() != b.tape()) throw ContractError("operands live on different tapes");
    return *a.tape();
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() > 2) {
        throw DimensionError(std::string(op) + " expects a vector or matrix, got " + t.shape_string());
    }
}

std::vector<std::size_t> matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) {
        throw DimensionError("matmul shape mismatch: " + A.shape_string() + " x " + B.shape_string());
    }
    Tensor out(matrix_shape(m, n));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        if (t.requires_grad(a)) {
            // dA = g · Bᵀ
            std::vector<double> ga(m * k, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B.data()[p * n + j];
                    ga[i * k + p] = acc;
                }
            t.accumulate(a, ga);
        }
        if (t.requires_grad(b)) {
            // dB = Aᵀ · g
            std::vector<double> gb(k * n, 0.0);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A.data()[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                }
            t.accumulate(b, gb);
        }
    });
}

Var add_bias(Var x, Var bias) {
    Tape& tape = same_tape(x, bias);
    const Tensor& X = x.value();
    const Tensor& b = bias.value();
    require_matrix(X, "add_bias");
    const std::size_t rows = X.rows(), cols = X.cols();
    if (b.size() != cols) {
        throw DimensionError("add_bias: bias " + b.shape_string() + " does not match " + X.shape_string());
    }
    Tensor out = X;
    out.clear_grad();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.data()[i * cols + j] += b[j];
    return tape.record(std::move(out), {x, bias}, [x, bias, rows, cols](Tape& t, std::span<const double> g) {
        t.accumulate(x, g);
        if (t.requires_grad(bias)) {
            std::vector<double> gb(cols, 0.0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
            t.accumulate(bias, gb);
        }
    });
}

namespace {

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + " shape mismatch: " + a.shape_string() + " vs " + b.shape_string());
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

}  // namespace

Var add(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    Tensor out = zip(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    Tensor out = zip(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        t.accumulate(a, g);
        if (t.requires_grad(b)) {
            std::vector<double> gb(g.begin(), g.end());
            for (auto& v : gb) v = -v;
            t.accumulate(b, gb);
        }
    });
}

Var mul(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    Tensor out = zip(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        // Computing both before accumulating keeps mul(x, x) correct.
        std::vector<double> ga(g.size()), gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] * B[i];
            gb[i] = g[i] * A[i];
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var scale(Var a, double s) {
    Tape& tape = *a.tape();
    Tensor out = a.value();
    out.clear_grad();
    for (auto& v : out.values()) v *= s;
    return tape.record(std::move(out), {a}, [a, s](Tape& t, std::span<const double> g) {
        std::vector<double> ga(g.begin(), g.end());
        for (auto& v : ga) v *= s;
        t.accumulate(a, ga);
    });
}

Var relu(Var a) {
    Tape& tape = *a.tape();
    Tensor out = a.value();
    out.clear_grad();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return tape.record(std::move(out), {a}, [a](Tape& t, std::span<const double> g) {
        const Tensor& A = t.value(a);
        std::vector<double> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = A[i] > 0.0 ? g[i] : 0.0;
        t.accumulate(a, ga);
    });
}

Var sum(Var a) {
    Tape& tape = *a.tape();
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const std::size_t n = a.value().size();
    return tape.record(Tensor::scalar(s), {a}, [a, n](Tape& t, std::span<const double> g) {
        t.accumulate(a, std::vector<double>(n, g[0]));
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var gather_rows(Var a, std::span<const std::size_t> idx) {
    Tape& tape = *a.tape();
    const Tensor& A = a.value();
    require_matrix(A, "gather_rows");
    const std::size_t rows = A.rows(), cols = A.cols();
    if (idx.empty()) throw DimensionError("gather_rows with no indices");
    Tensor out(matrix_shape(idx.size(), cols));
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= rows) {
            throw DimensionError("gather_rows index " + std::to_string(idx[r]) + " out of " + A.shape_string());
        }
        std::copy_n(A.data() + idx[r] * cols, cols, out.data() + r * cols);
    }
    std::vector<std::size_t> rows_taken(idx.begin(), idx.end());
    return tape.record(std::move(out), {a}, [a, rows_taken, cols](Tape& t, std::span<const double> g) {
        if (!t.requires_grad(a)) return;
        for (std::size_t r = 0; r < rows_taken.size(); ++r)
            for (std::size_t j = 0; j < cols; ++j) t.accumulate(a, rows_taken[r] * cols + j, g[r * cols + j]);
    });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels, Reduction reduction) {
    Tape& tape = *logits.tape();
    const Tensor& L = logits.value();
    require_matrix(L, "softmax_cross_entropy");
    const std::size_t batch = L.rows(), classes = L.cols();
    if (labels.size() != batch) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             L.shape_string());
    }
    for (auto y : labels) {
        if (y >= classes) {
            throw ValidationError("label " + std::to_string(y) + " out of range [0, " + std::to_string(classes) + ")");
        }
    }
    // probs kept for the backward rule.
    std::vector<double> probs(batch * classes);
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = L.data() + i * classes;
        const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
        const double mx = row[top];
        // z = 1 + rest; log1p keeps confident rows accurate.
        double rest = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            probs[i * classes + j] = std::exp(row[j] - mx);
            if (j != top) rest += probs[i * classes + j];
        }
        const double z = 1.0 + rest;
        for (std::size_t j = 0; j < classes; ++j) probs[i * classes + j] /= z;
        total += (mx - row[labels[i]]) + std::log1p(rest);
    }
    const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;
    std::vector<std::size_t> ys(labels.begin(), labels.end());
    return tape.record(Tensor::scalar(total * factor), {logits},
                       [logits, probs = std::move(probs), ys = std::move(ys), classes, factor](
                           Tape& t, std::span<const double> g) {
                           std::vector<double> gl(probs.size());
                           for (std::size_t i = 0; i < ys.size(); ++i)
                               for (std::size_t j = 0; j < classes; ++j) {
                                   const double onehot = j == ys[i] ? 1.0 : 0.0;
                                   gl[i * classes + j] = g[0] * factor * (probs[i * classes + j] - onehot);
                               }
                           t.accumulate(logits, gl);
                       });
}

Var euclidean_distance(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.size() != B.size()) {
        throw DimensionError("euclidean_distance length mismatch: " + A.shape_string() + " vs " + B.shape_string());
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) ss += (A[i] - B[i]) * (A[i] - B[i]);
    const double d = std::sqrt(ss);
    return tape.record(Tensor::scalar(d), {a, b}, [a, b, d](Tape& t, std::span<const double> g) {
        if (d == 0.0) return;
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        std::vector<double> ga(A.size()), gb(A.size());
        for (std::size_t i = 0; i < A.size(); ++i) {
            ga[i] = g[0] * (A[i] - B[i]) / d;
            gb[i] = -ga[i];
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var row_distances(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "row_distances");
    if (!A.same_shape(B)) {
        throw DimensionError("row_distances shape mismatch: " + A.shape_string() + " vs " + B.shape_string());
    }
    const std::size_t rows = A.rows(), cols = A.cols();
    Tensor out({rows});
    for (std::size_t i = 0; i < rows; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double diff = A.data()[i * cols + j] - B.data()[i * cols + j];
            ss += diff * diff;
        }
        out[i] = std::sqrt(ss);
    }
    std::vector<double> dist(out.values().begin(), out.values().end());
    return tape.record(std::move(out), {a, b}, [a, b, rows, cols, dist](Tape& t, std::span<const double> g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        std::vector<double> ga(rows * cols, 0.0), gb(rows * cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            if (dist[i] == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) {
                const double v = g[i] * (A.data()[i * cols + j] - B.data()[i * cols + j]) / dist[i];
                ga[i * cols + j] = v;
                gb[i * cols + j] = -v;
            }
        }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

Var pairwise_distances(Var a, Var b) {
    Tape& tape = same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "pairwise_distances");
    require_matrix(B, "pairwise_distances");
    if (A.cols() != B.cols()) {
        throw DimensionError("pairwise_distances width mismatch: " + A.shape_string() + " vs " + B.shape_string());
    }
    const std::size_t n = A.rows(), c = B.rows(), k = A.cols();
    Tensor out(matrix_shape(n, c));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double ss = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double diff = A.data()[i * k + p] - B.data()[j * k + p];
                ss += diff * diff;
            }
            out.data()[i * c + j] = std::sqrt(ss);
        }
    std::vector<double> dist(out.values().begin(), out.values().end());
    return tape.record(std::move(out), {a, b}, [a, b, n, c, k, dist](Tape& t, std::span<const double> g) {
        const Tensor& A = t.value(a);
        const Tensor& B = t.value(b);
        std::vector<double> ga(n * k, 0.0), gb(c * k, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double d = dist[i * c + j];
                if (d == 0.0) continue;
                const double w = g[i * c + j] / d;
                for (std::size_t p = 0; p < k; ++p) {
                    const double v = w * (A.data()[i * k + p] - B.data()[j * k + p]);
                    ga[i * k + p] += v;
                    gb[j * k + p] -= v;
                }
            }
        t.accumulate(a, ga);
        t.accumulate(b, gb);
    });
}

void sgd_step(std::span<Tensor* const> params, double lr) {
    if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
    for (Tensor* p : params) {
        if (!p->has_grad()) {
            throw ContractError("sgd_step: parameter " + p->shape_string() + " has no gradient; run backward() first");
        }
    }
    for (Tensor* p : params) {
        auto g = p->grad();
        auto v = p->values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
        p->clear_grad();
    }
}

}  // namespace fedtgp

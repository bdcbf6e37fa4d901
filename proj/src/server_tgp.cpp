#include "fedtgp/server_tgp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "fedtgp/errors.hpp"
#include "fedtgp/rng.hpp"

namespace fedtgp {

void MarginPolicy::validate() const {
    switch (mode) {
        case MarginMode::none:
            break;
        case MarginMode::fixed:
            if (!(fixed_delta >= 0.0)) throw ConfigError("fixed_margin: must be >= 0");
            break;
        case MarginMode::adaptive:
            if (!(tau > 0.0)) throw ConfigError("tau: margin threshold must be > 0");
            break;
    }
}

ServerPrototypeModel::ServerPrototypeModel(std::size_t num_classes, std::size_t dim, std::size_t hidden,
                                           bool use_transform, std::uint64_t seed)
    : embeddings_({num_classes, dim}), use_transform_(use_transform) {
    if (num_classes < 2) throw ConfigError("num_classes: server model needs at least 2 classes");
    if (hidden == 0) hidden = dim;
    Rng rng = make_rng(seed, "server/init");
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : embeddings_.values()) v = unit(rng);

    first_ = {Tensor({dim, hidden}), Tensor({hidden})};
    second_ = {Tensor({hidden, dim}), Tensor({dim})};
    if (!use_transform_) return;
    for (Linear* layer : {&first_, &second_}) {
        const double fan_in = static_cast<double>(layer->weight.rows());
        std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
        std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (auto& v : layer->weight.values()) v = w(rng);
        for (auto& v : layer->bias.values()) v = b(rng);
    }
}

Var ServerPrototypeModel::forward(Tape& tape) {
    Var x = tape.parameter(embeddings_);
    if (!use_transform_) return x;
    return second_.forward(tape, relu(first_.forward(tape, x)));
}

std::vector<Tensor*> ServerPrototypeModel::parameters() {
    if (!use_transform_) return {&embeddings_};
    return {&embeddings_, &first_.weight, &first_.bias, &second_.weight, &second_.bias};
}

PrototypeSet materialize_globals(ServerPrototypeModel& model) {
    Tape tape(false);
    const Tensor g = model.forward(tape).value();
    PrototypeSet out(model.num_classes(), model.dim(), kGlobalOwner);
    for (std::size_t c = 0; c < model.num_classes(); ++c) out.set_row(c, g.row(c));
    return out;
}

PrototypeSet cluster_centers(std::span<const PrototypeSet> client_sets) {
    if (client_sets.empty()) throw ValidationError("cluster_centers: no client prototypes");
    const std::size_t C = client_sets.front().num_classes(), K = client_sets.front().dim();
    PrototypeSet out(C, K, kGlobalOwner);
    std::vector<double> acc(K);
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t holders = 0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto& s : client_sets) {
            if (s.num_classes() != C || s.dim() != K) throw DimensionError("cluster_centers: inconsistent C or K");
            if (!s.present(c)) continue;
            ++holders;
            auto r = s.row(c);
            for (std::size_t k = 0; k < K; ++k) acc[k] += r[k];
        }
        if (holders == 0) continue;
        for (auto& v : acc) v /= static_cast<double>(holders);
        out.set_row(c, acc);
    }
    return out;
}

double adaptive_margin(const PrototypeSet& centers, double tau) {
    if (!(tau > 0.0)) throw ValidationError("adaptive_margin: tau must be > 0");
    const auto cs = centers.present_classes();
    if (cs.size() < 2) throw ValidationError("adaptive_margin: fewer than 2 cluster centers present");
    double widest = 0.0;
    for (std::size_t a = 0; a < cs.size(); ++a)
        for (std::size_t b = a + 1; b < cs.size(); ++b) {
            auto ra = centers.row(cs[a]);
            auto rb = centers.row(cs[b]);
            double ss = 0.0;
            for (std::size_t k = 0; k < ra.size(); ++k) ss += (ra[k] - rb[k]) * (ra[k] - rb[k]);
            widest = std::max(widest, std::sqrt(ss));
        }
    return std::min(widest, tau);
}

Var acl_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets, double delta) {
    if (!(delta >= 0.0)) throw ValidationError("acl_loss: delta must be >= 0");
    const Tensor& G = globals.value();
    const std::size_t C = G.rows(), K = G.cols();
    if (C < 2) throw ValidationError("acl_loss: need at least 2 classes");

    std::vector<double> rows;
    std::vector<std::size_t> labels;
    for (const auto& s : client_sets) {
        if (s.num_classes() != C || s.dim() != K) {
            throw DimensionError("acl_loss: client prototypes are " + std::to_string(s.num_classes()) + "x" +
                                 std::to_string(s.dim()) + " but globals " + G.shape_string());
        }
        for (auto c : s.present_classes()) {
            auto r = s.row(c);
            rows.insert(rows.end(), r.begin(), r.end());
            labels.push_back(c);
        }
    }
    if (labels.empty()) throw ValidationError("acl_loss: no client prototypes");
    const std::size_t n = labels.size();

    // Logits are negated distances; the target class additionally pays δ.
    Var client = tape.constant(Tensor::matrix(n, K, std::move(rows)));
    Var dist = pairwise_distances(client, globals);
    Tensor shift({n, C});
    for (std::size_t i = 0; i < n; ++i) shift(i, labels[i]) = -delta;
    Var logits = add(scale(dist, -1.0), tape.constant(std::move(shift)));
    return softmax_cross_entropy(logits, labels, Reduction::sum);
}

Var fixed_margin_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets, double delta) {
    if (!(delta >= 0.0)) throw ValidationError("fixed_margin_loss: delta must be >= 0");
    return acl_loss(tape, globals, client_sets, delta);
}

Var standard_contrastive_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets) {
    return acl_loss(tape, globals, client_sets, 0.0);
}

double round_margin(const MarginPolicy& policy, std::span<const PrototypeSet> client_sets,
                    std::optional<double> previous_delta) {
    policy.validate();
    switch (policy.mode) {
        case MarginMode::none:
            return 0.0;
        case MarginMode::fixed:
            return policy.fixed_delta;
        case MarginMode::adaptive: {
            const auto centers = cluster_centers(client_sets);
            if (centers.present_count() < 2) return previous_delta.value_or(0.0);
            return adaptive_margin(centers, policy.tau);
        }
    }
    return 0.0;
}

std::pair<PrototypeSet, TrainReport> train_globals(ServerPrototypeModel& model,
                                                   std::span<const PrototypeSet> client_sets,
                                                   const MarginPolicy& policy, std::size_t epochs, double lr,
                                                   std::optional<double> previous_delta) {
    if (!(lr > 0.0)) throw ConfigError("server_lr: must be > 0");
    TrainReport report;
    report.delta = round_margin(policy, client_sets, previous_delta);
    report.losses.reserve(epochs);

    auto params = model.parameters();
    for (std::size_t e = 0; e < epochs; ++e) {
        Tape tape;
        Var loss = acl_loss(tape, model.forward(tape), client_sets, report.delta);
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
            std::ostringstream msg;
            msg << "server prototype training diverged: loss=" << value << " at epoch " << e
                << " with delta=" << report.delta << " over " << client_sets.size() << " client sets";
            throw NumericError(msg.str());
        }
        report.losses.push_back(value);
        tape.backward(loss);
        sgd_step(params, lr);
    }
    {
        Tape tape(false);
        report.final_loss = acl_loss(tape, model.forward(tape), client_sets, report.delta).value().item();
    }
    return {materialize_globals(model), std::move(report)};
}

}  // namespace fedtgp

#pragma once

// Trainable global prototypes.
//
// The server keeps one trainable vector per class and a small shared network
// F (affine K→H, relu, affine H→K). Global prototypes are F applied to each
// vector. Each round they are fit to the uploaded client prototypes with a
// margin-augmented contrastive loss: for client prototype P of class c,
//
//   −log  e^{−(d(P, G_c) + δ)} / (e^{−(d(P, G_c) + δ)} + Σ_{c'≠c} e^{−d(P, G_c')})
//
// summed over every uploaded (client, class) pair. δ is either zero, a fixed
// constant, or min(max pairwise distance of the per-class client centers, τ).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedtgp/autodiff.hpp"
#include "fedtgp/models.hpp"
#include "fedtgp/prototypes.hpp"

namespace fedtgp {

enum class MarginMode { none, fixed, adaptive };

struct MarginPolicy {
    MarginMode mode = MarginMode::adaptive;
    double tau = 100.0;
    double fixed_delta = 1.0;

    static MarginPolicy none() { return {MarginMode::none, 100.0, 0.0}; }
    static MarginPolicy fixed(double delta) { return {MarginMode::fixed, 100.0, delta}; }
    static MarginPolicy adaptive(double tau) { return {MarginMode::adaptive, tau, 0.0}; }

    void validate() const;
};

class ServerPrototypeModel {
public:
    // hidden == 0 selects hidden = dim. use_transform == false drops F so the
    // globals are the trainable vectors themselves.
    ServerPrototypeModel(std::size_t num_classes, std::size_t dim, std::size_t hidden, bool use_transform,
                         std::uint64_t seed);

    std::size_t num_classes() const noexcept { return embeddings_.rows(); }
    std::size_t dim() const noexcept { return embeddings_.cols(); }
    bool has_transform() const noexcept { return use_transform_; }

    Tensor& embeddings() noexcept { return embeddings_; }
    const Tensor& embeddings() const noexcept { return embeddings_; }
    Linear& first() noexcept { return first_; }
    Linear& second() noexcept { return second_; }

    // All C global prototypes as a [C×K] node.
    Var forward(Tape& tape);
    std::vector<Tensor*> parameters();

private:
    Tensor embeddings_;
    bool use_transform_;
    Linear first_;
    Linear second_;
};

PrototypeSet materialize_globals(ServerPrototypeModel& model);

// Unweighted per-class mean over the sets presenting each class.
PrototypeSet cluster_centers(std::span<const PrototypeSet> client_sets);

// min(max pairwise distance between present centers, tau). Needs >= 2 centers.
double adaptive_margin(const PrototypeSet& centers, double tau);

// Margin contrastive loss summed over classes and uploaded client prototypes.
// globals is [C×K]; client prototypes enter as constants.
Var acl_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets, double delta);
// Same formula with a constant δ > 0.
Var fixed_margin_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets, double delta);
// δ = 0.
Var standard_contrastive_loss(Tape& tape, Var globals, std::span<const PrototypeSet> client_sets);

struct TrainReport {
    double delta = 0.0;
    // Loss before each epoch's step.
    std::vector<double> losses;
    // Loss after the last step.
    double final_loss = 0.0;
};

// δ for this round under the policy. Adaptive mode with fewer than two centers
// reuses previous_delta (0 if none).
double round_margin(const MarginPolicy& policy, std::span<const PrototypeSet> client_sets,
                    std::optional<double> previous_delta);

// Full-batch SGD on embeddings and F for the given number of epochs, δ held
// fixed for the whole call.
std::pair<PrototypeSet, TrainReport> train_globals(ServerPrototypeModel& model,
                                                   std::span<const PrototypeSet> client_sets,
                                                   const MarginPolicy& policy, std::size_t epochs, double lr,
                                                   std::optional<double> previous_delta = std::nullopt);

}  // namespace fedtgp

#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedtgp/data.hpp"
#include "fedtgp/models.hpp"
#include "fedtgp/prototypes.hpp"

namespace fedtgp {

enum class EvalMode { nearest_prototype, classifier };

// Fraction of test samples classified correctly; nullopt for an empty split.
// globals is only read in nearest_prototype mode.
std::optional<double> evaluate_client(ClientModel& model, const PrototypeSet* globals, const Dataset& test,
                                      EvalMode mode);

// Float elements moved in one round.
struct CommCost {
    std::size_t uplink = 0;
    std::size_t downlink = 0;
    std::size_t total() const noexcept { return uplink + downlink; }
    std::size_t bytes() const noexcept { return total() * sizeof(double); }
};

// Each participant uploads unit·C_i floats and downloads unit·C. unit is K for
// prototype methods and C for logit sharing.
CommCost comm_cost(std::span<const std::size_t> participant_classes, std::size_t num_classes, std::size_t unit);
inline CommCost prototype_comm_cost(std::span<const std::size_t> participant_classes, std::size_t num_classes,
                                    std::size_t feature_dim) {
    return comm_cost(participant_classes, num_classes, feature_dim);
}
inline CommCost logit_comm_cost(std::span<const std::size_t> participant_classes, std::size_t num_classes) {
    return comm_cost(participant_classes, num_classes, num_classes);
}

struct MarginRow {
    std::size_t cls = 0;
    std::optional<double> global;
    std::optional<double> max_client;
    std::optional<double> global_normalized;
    std::optional<double> max_client_normalized;
};

// Per class: margin among the globals and the best client margin. Both series
// are normalized together by the largest value in the report.
std::vector<MarginRow> margin_report(const PrototypeSet& globals, std::span<const PrototypeSet> client_sets);
void write_margin_csv(std::ostream& os, std::span<const MarginRow> rows);

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<std::size_t> participants;
    // Per client; nullopt where the test split is empty.
    std::vector<std::optional<double>> client_accuracy;
    // Unweighted mean over clients with a test split.
    double mean_accuracy = 0.0;
    // Weighted by test split size.
    double weighted_accuracy = 0.0;
    // Classifier-head accuracy for prototype methods (diagnostic only).
    std::optional<double> classifier_accuracy;
    std::optional<double> server_loss_initial;
    std::optional<double> server_loss_final;
    std::vector<double> server_losses;
    std::optional<double> delta;
    // Mean local training loss per sampled client, in participant order.
    std::vector<double> client_losses;
    std::vector<std::size_t> skipped_clients;
    CommCost comm;
    std::vector<MarginRow> margins;
};

// Aggregates per-client accuracies into the unweighted and size-weighted means.
void summarize_accuracy(RoundMetrics& m, std::span<const std::size_t> test_sizes);

// Fixed-width text for CSV cells: "%.10g", empty for nullopt.
std::string format_number(double v);
std::string format_number(const std::optional<double>& v);

}  // namespace fedtgp

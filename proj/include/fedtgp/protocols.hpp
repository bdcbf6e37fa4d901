#pragma once

// Round orchestration for FedProto, FedTGP and FedDistill.
//
// Clients exchange only PrototypeSet or LogitTable artifacts with the server.
// Each sampled client's work in a round is a pure function of its model, its
// data, the broadcast artifact and a seed derived from (run seed, client,
// round), so sequential and parallel scheduling give identical results.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtgp/config.hpp"
#include "fedtgp/data.hpp"
#include "fedtgp/metrics.hpp"
#include "fedtgp/models.hpp"
#include "fedtgp/prototypes.hpp"
#include "fedtgp/server_tgp.hpp"

namespace fedtgp {

class RoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Class-averaged logits (C×C) with a presence mask; the FedDistill upload.
struct LogitTable {
    PrototypeSet rows;
};

LogitTable compute_logit_table(ClientModel& model, const Dataset& train, std::int64_t owner);
LogitTable average_logit_tables(std::span<const LogitTable> tables);

struct LocalTrainOptions {
    double lambda = 0.1;  // guidance weight (gamma for FedDistill)
    std::size_t epochs = 1;
    std::size_t batch_size = 10;
    double lr = 0.01;
    std::uint64_t shuffle_seed = 0;
};

struct LocalTrainReport {
    bool skipped = false;
    std::size_t steps = 0;
    // Total loss of each step, before the update.
    std::vector<double> losses;
    // Mean guidance term of each step (distance or MSE), before the update.
    std::vector<double> guidance;

    double mean_loss() const;
};

// Cross-entropy plus lambda times the mean distance from each sample's feature
// to its class's global prototype. Samples whose class is masked in guide get
// no guidance term. guide may be null (no guidance yet).
LocalTrainReport guided_local_train(ClientModel& model, const Dataset& data, const PrototypeSet* guide,
                                    const LocalTrainOptions& opts);

LocalTrainReport local_train_fedtgp(ClientModel& model, const Dataset& data, const PrototypeSet& globals,
                                    const LocalTrainOptions& opts);
LocalTrainReport local_train_fedproto(ClientModel& model, const Dataset& data, const PrototypeSet* averaged,
                                      const LocalTrainOptions& opts);
// Cross-entropy plus gamma (opts.lambda) times the mean squared error between
// the sample's logits and the global logits of its label.
LocalTrainReport local_train_feddistill(ClientModel& model, const Dataset& data, const LogitTable* global,
                                        const LocalTrainOptions& opts);

// The guided client objective on one batch, recorded on tape.
Var guided_objective(Tape& tape, ClientModel& model, const Dataset& batch, const PrototypeSet* guide,
                     double lambda);

// Single-batch loss of a guided step without updating anything. Exposed so the
// loss assembly can be checked by hand.
double guided_loss(ClientModel& model, const Dataset& batch, const PrototypeSet* guide, double lambda);

struct ClientState {
    std::size_t id = 0;
    ClientModel model;
    Dataset train;
    Dataset test;
};

struct FederationState {
    RunConfig cfg;
    std::uint64_t seed = 0;
    std::vector<ClientState> clients;
    // Last broadcast prototypes (averaged or trained).
    std::optional<PrototypeSet> globals;
    std::optional<ServerPrototypeModel> server;
    std::optional<LogitTable> global_logits;
    std::optional<double> previous_delta;
    // Most recent uploads, for margin reports.
    std::vector<PrototypeSet> last_uploads;
    std::size_t rounds_done = 0;
};

// Dataset described by cfg (blobs drawn from seed, or IDX files).
Dataset load_dataset(const RunConfig& cfg, std::uint64_t seed);

// Partition, split, and seeded client/server models for one trial.
FederationState make_federation(const RunConfig& cfg, const Dataset& ds, std::uint64_t seed);

// max(1, round-half-up(rho·M)) distinct clients, ascending, seeded by (seed, round).
std::vector<std::size_t> sample_clients(std::size_t clients, double participation, std::uint64_t seed,
                                        std::size_t round);

RoundMetrics run_round_fedtgp(FederationState& state, std::size_t round);
RoundMetrics run_round_fedproto(FederationState& state, std::size_t round);
RoundMetrics run_round_feddistill(FederationState& state, std::size_t round);
RoundMetrics run_round(FederationState& state, std::size_t round);

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<RoundMetrics> rounds;
    // Running max of mean_accuracy, one per round.
    std::vector<double> best_so_far;
    double best() const { return best_so_far.empty() ? 0.0 : best_so_far.back(); }
    std::optional<PrototypeSet> final_globals;
    std::vector<PrototypeSet> final_uploads;
};

struct ExperimentResult {
    RunConfig cfg;
    std::vector<SeedResult> seeds;
    double mean_best = 0.0;
    // Sample standard deviation of per-seed bests (0 for one seed).
    double std_best = 0.0;
};

ExperimentResult run_experiment(const RunConfig& cfg);
// Reuses an already loaded dataset for IDX runs.
ExperimentResult run_experiment(const RunConfig& cfg, const Dataset* preloaded);

// Metrics CSV: seed,round,protocol,mean_test_acc,best_acc,server_loss_final,
// delta,uplink_floats,downlink_floats (+ margin columns when logged).
void write_metrics_csv(std::ostream& os, const ExperimentResult& result);
// Server trace: seed,round,epoch,loss,delta.
void write_server_trace_csv(std::ostream& os, const ExperimentResult& result);

}  // namespace fedtgp

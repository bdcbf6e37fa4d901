#include "fedtgp/protocols.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "fedtgp/errors.hpp"
#include "fedtgp/rng.hpp"

namespace fedtgp {

double LocalTrainReport::mean_loss() const {
    if (losses.empty()) return 0.0;
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

LogitTable compute_logit_table(ClientModel& model, const Dataset& train, std::int64_t owner) {
    if (train.size() == 0) throw ValidationError("compute_logit_table: empty training split");
    const std::size_t C = model.num_classes();
    const Tensor logits = model.logits(train.features);
    std::vector<double> sums(C * C, 0.0);
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t r = 0; r < train.size(); ++r) {
        const auto y = train.labels[r];
        ++counts[y];
        for (std::size_t k = 0; k < C; ++k) sums[y * C + k] += logits(r, k);
    }
    LogitTable table{PrototypeSet(C, C, owner)};
    std::vector<double> mean(C);
    for (std::size_t c = 0; c < C; ++c) {
        if (!counts[c]) continue;
        for (std::size_t k = 0; k < C; ++k) mean[k] = sums[c * C + k] / static_cast<double>(counts[c]);
        table.rows.set_row(c, mean);
        table.rows.set_count(c, counts[c]);
    }
    return table;
}

LogitTable average_logit_tables(std::span<const LogitTable> tables) {
    std::vector<PrototypeSet> rows;
    rows.reserve(tables.size());
    for (const auto& t : tables) rows.push_back(t.rows);
    return {weighted_average(rows)};
}

namespace {

enum class Guidance { prototype, logits };

Tensor batch_features(const Dataset& data, std::span<const std::size_t> idx) {
    const std::size_t d = data.dim();
    std::vector<double> values(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = data.features.row(idx[r]);
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return Tensor::matrix(idx.size(), d, std::move(values));
}

struct Objective {
    Var loss;
    double guidance = 0.0;
};

// Cross-entropy plus weight × guidance. The guidance term averages over the
// samples whose class has a row in guide.
Objective guided_objective(Tape& tape, ClientModel& model, const Tensor& x, std::span<const std::size_t> labels,
                           const PrototypeSet* guide, double weight, Guidance kind) {
    Var feats = model.forward_features(tape, tape.constant(x));
    Var logits = model.forward_classifier(tape, feats);
    Var loss = softmax_cross_entropy(logits, labels);
    Objective out{loss, 0.0};
    if (!guide) return out;

    std::vector<std::size_t> rows;
    std::vector<double> targets;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] >= guide->num_classes() || !guide->present(labels[b])) continue;
        rows.push_back(b);
        auto t = guide->row(labels[b]);
        targets.insert(targets.end(), t.begin(), t.end());
    }
    if (rows.empty()) return out;

    const std::size_t width = guide->dim();
    Var target = tape.constant(Tensor::matrix(rows.size(), width, std::move(targets)));
    Var term;
    if (kind == Guidance::prototype) {
        term = mean(row_distances(gather_rows(feats, rows), target));
    } else {
        Var diff = sub(gather_rows(logits, rows), target);
        term = mean(mul(diff, diff));
    }
    out.guidance = term.value().item();
    out.loss = add(loss, scale(term, weight));
    return out;
}

LocalTrainReport train_loop(ClientModel& model, const Dataset& data, const PrototypeSet* guide,
                            const LocalTrainOptions& opts, Guidance kind) {
    LocalTrainReport report;
    if (data.size() == 0) {
        report.skipped = true;
        return report;
    }
    if (opts.batch_size == 0 || opts.epochs == 0) throw ConfigError("local training needs batch_size, epochs >= 1");
    if (!(opts.lambda >= 0.0)) throw ConfigError("lambda: must be >= 0");
    if (guide) {
        const std::size_t want = kind == Guidance::prototype ? model.feature_dim() : model.num_classes();
        if (guide->dim() != want) {
            throw DimensionError("guidance rows have width " + std::to_string(guide->dim()) + ", model expects " +
                                 std::to_string(want));
        }
    }

    Rng rng(opts.shuffle_seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    auto params = model.parameters();
    std::vector<std::size_t> labels;
    for (std::size_t e = 0; e < opts.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            labels.assign(idx.size(), 0);
            for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = data.labels[idx[b]];

            Tape tape;
            auto obj = guided_objective(tape, model, batch_features(data, idx), labels, guide, opts.lambda, kind);
            const double value = obj.loss.value().item();
            if (!std::isfinite(value)) throw NumericError("local training diverged: non-finite loss");
            report.losses.push_back(value);
            report.guidance.push_back(obj.guidance);
            tape.backward(obj.loss);
            sgd_step(params, opts.lr);
            ++report.steps;
        }
    }
    return report;
}

}  // namespace

LocalTrainReport guided_local_train(ClientModel& model, const Dataset& data, const PrototypeSet* guide,
                                    const LocalTrainOptions& opts) {
    return train_loop(model, data, guide, opts, Guidance::prototype);
}

LocalTrainReport local_train_fedtgp(ClientModel& model, const Dataset& data, const PrototypeSet& globals,
                                    const LocalTrainOptions& opts) {
    return train_loop(model, data, &globals, opts, Guidance::prototype);
}

LocalTrainReport local_train_fedproto(ClientModel& model, const Dataset& data, const PrototypeSet* averaged,
                                      const LocalTrainOptions& opts) {
    return train_loop(model, data, averaged, opts, Guidance::prototype);
}

LocalTrainReport local_train_feddistill(ClientModel& model, const Dataset& data, const LogitTable* global,
                                        const LocalTrainOptions& opts) {
    return train_loop(model, data, global ? &global->rows : nullptr, opts, Guidance::logits);
}

Var guided_objective(Tape& tape, ClientModel& model, const Dataset& batch, const PrototypeSet* guide,
                     double lambda) {
    return guided_objective(tape, model, batch.features, batch.labels, guide, lambda, Guidance::prototype).loss;
}

double guided_loss(ClientModel& model, const Dataset& batch, const PrototypeSet* guide, double lambda) {
    Tape tape(false);
    return guided_objective(tape, model, batch, guide, lambda).value().item();
}

Dataset load_dataset(const RunConfig& cfg, std::uint64_t seed) {
    Dataset ds = cfg.dataset == DatasetKind::blobs
                     ? synth_blobs(cfg.num_classes, cfg.input_dim, cfg.per_class, cfg.spread, derive_seed(seed, "data"))
                     : load_idx(cfg.idx_images, cfg.idx_labels);
    ds.validate();
    return ds;
}

FederationState make_federation(const RunConfig& cfg, const Dataset& ds, std::uint64_t seed) {
    cfg.validate();
    FederationState st;
    st.cfg = cfg;
    st.seed = seed;

    const Partition part = cfg.partition == PartitionKind::dirichlet
                               ? partition_dirichlet(ds, cfg.clients, cfg.beta, seed)
                               : partition_pathological(ds, cfg.clients, cfg.classes_per_client, seed);
    const auto [train, test] = train_test_split(ds, part, cfg.train_fraction, seed);

    const ModelGroup group = make_model_group(cfg.model_group, cfg.feature_dim);
    const auto archs = assign_architectures(group, cfg.clients);
    const auto heads = assign_classifiers(group, cfg.clients);
    st.clients.reserve(cfg.clients);
    for (std::size_t i = 0; i < cfg.clients; ++i) {
        st.clients.push_back({i,
                              init_model(ds.dim(), archs[i], heads[i], ds.num_classes, derive_seed(seed, "client", {i})),
                              subset(ds, train.client_indices[i]), subset(ds, test.client_indices[i])});
        st.clients.back().train.num_classes = ds.num_classes;
        st.clients.back().test.num_classes = ds.num_classes;
    }
    if (cfg.protocol == Protocol::fedtgp) {
        st.server.emplace(ds.num_classes, cfg.feature_dim, cfg.server_hidden, cfg.server_transform, seed);
    }
    return st;
}

std::vector<std::size_t> sample_clients(std::size_t clients, double participation, std::uint64_t seed,
                                        std::size_t round) {
    if (clients == 0) return {};
    auto k = static_cast<std::size_t>(std::floor(participation * static_cast<double>(clients) + 0.5));
    k = std::clamp<std::size_t>(k, 1, clients);
    std::vector<std::size_t> ids(clients);
    std::iota(ids.begin(), ids.end(), 0);
    if (k == clients) return ids;
    Rng rng = make_rng(seed, "sampling", {round});
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

// Runs work(slot) for every slot, on worker threads when parallel is set.
template <typename Work>
void for_each_slot(std::size_t slots, bool parallel, Work&& work) {
    std::vector<std::exception_ptr> errors(slots);
    auto guarded = [&](std::size_t s) {
        try {
            work(s);
        } catch (...) {
            errors[s] = std::current_exception();
        }
    };
    if (!parallel || slots < 2) {
        for (std::size_t s = 0; s < slots; ++s) guarded(s);
    } else {
        const std::size_t workers =
            std::min<std::size_t>(slots, std::max<std::size_t>(2, std::thread::hardware_concurrency()));
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t s = next++; s < slots; s = next++) guarded(s);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

LocalTrainOptions client_options(const FederationState& st, std::size_t client, std::size_t round, double weight) {
    return {weight, st.cfg.local_epochs, st.cfg.batch_size, st.cfg.lr, derive_seed(st.seed, "shuffle", {client, round})};
}

std::vector<std::size_t> test_sizes(const FederationState& st) {
    std::vector<std::size_t> sizes;
    for (const auto& c : st.clients) sizes.push_back(c.test.size());
    return sizes;
}

void evaluate_all(FederationState& st, RoundMetrics& m, const PrototypeSet* globals, EvalMode mode,
                  bool classifier_diagnostic) {
    m.client_accuracy.assign(st.clients.size(), std::nullopt);
    std::vector<std::optional<double>> head(st.clients.size());
    for_each_slot(st.clients.size(), st.cfg.parallel, [&](std::size_t i) {
        auto& c = st.clients[i];
        if (mode == EvalMode::classifier || (globals && globals->present_count() > 0)) {
            m.client_accuracy[i] = evaluate_client(c.model, globals, c.test, mode);
        }
        if (classifier_diagnostic) head[i] = evaluate_client(c.model, nullptr, c.test, EvalMode::classifier);
    });
    const auto sizes = test_sizes(st);
    summarize_accuracy(m, sizes);
    if (classifier_diagnostic) {
        RoundMetrics tmp;
        tmp.client_accuracy = head;
        summarize_accuracy(tmp, sizes);
        m.classifier_accuracy = tmp.mean_accuracy;
    }
}

template <typename Upload, typename Train, typename Extract>
std::vector<Upload> run_clients(FederationState& st, RoundMetrics& m, Train&& train, Extract&& extract) {
    const std::size_t n = m.participants.size();
    std::vector<std::optional<Upload>> slots(n);
    std::vector<LocalTrainReport> reports(n);
    for_each_slot(n, st.cfg.parallel, [&](std::size_t s) {
        const std::size_t id = m.participants[s];
        auto& c = st.clients[id];
        try {
            reports[s] = train(c);
            if (!reports[s].skipped) slots[s] = extract(c);
        } catch (const std::exception& e) {
            throw RoundError("round " + std::to_string(m.round) + ", client " + std::to_string(id) + ": " + e.what());
        }
    });
    std::vector<Upload> uploads;
    for (std::size_t s = 0; s < n; ++s) {
        m.client_losses.push_back(reports[s].mean_loss());
        if (reports[s].skipped) m.skipped_clients.push_back(m.participants[s]);
        if (slots[s]) uploads.push_back(std::move(*slots[s]));
    }
    return uploads;
}

std::vector<std::size_t> uploaded_classes(const RoundMetrics& m, std::span<const PrototypeSet> uploads) {
    // Skipped participants upload nothing but still receive the broadcast.
    std::vector<std::size_t> ci(m.participants.size(), 0);
    for (const auto& u : uploads) {
        auto it = std::find(m.participants.begin(), m.participants.end(), static_cast<std::size_t>(u.owner()));
        ci[static_cast<std::size_t>(it - m.participants.begin())] = u.present_count();
    }
    return ci;
}

RoundMetrics begin_round(FederationState& st, std::size_t round) {
    if (round < 1) throw RoundError("rounds are numbered from 1");
    RoundMetrics m;
    m.round = round;
    m.participants = sample_clients(st.clients.size(), st.cfg.participation, st.seed, round);
    return m;
}

template <typename F>
RoundMetrics with_round_context(std::size_t round, F&& f) {
    try {
        return f();
    } catch (const RoundError&) {
        throw;
    } catch (const std::exception& e) {
        throw RoundError("round " + std::to_string(round) + ": " + e.what());
    }
}

}  // namespace

RoundMetrics run_round_fedtgp(FederationState& st, std::size_t round) {
    return with_round_context(round, [&] {
        if (!st.server) throw ContractError("run_round_fedtgp: federation has no server prototype model");
        RoundMetrics m = begin_round(st, round);
        const std::size_t C = st.server->num_classes(), K = st.server->dim();
        const PrototypeSet broadcast = st.globals ? *st.globals : materialize_globals(*st.server);

        auto uploads = run_clients<PrototypeSet>(
            st, m,
            [&](ClientState& c) {
                return local_train_fedtgp(c.model, c.train, broadcast, client_options(st, c.id, round, st.cfg.lambda));
            },
            [&](ClientState& c) { return compute_prototypes(c.model, c.train, static_cast<std::int64_t>(c.id)); });

        const auto ci = uploaded_classes(m, uploads);
        m.comm = prototype_comm_cost(ci, C, K);

        if (!uploads.empty()) {
            auto [globals, report] = train_globals(*st.server, uploads, st.cfg.margin_policy(), st.cfg.server_epochs,
                                                   st.cfg.server_lr, st.previous_delta);
            st.globals = std::move(globals);
            st.previous_delta = report.delta;
            m.delta = report.delta;
            m.server_loss_initial = report.losses.empty() ? report.final_loss : report.losses.front();
            m.server_loss_final = report.final_loss;
            m.server_losses = std::move(report.losses);
        } else {
            st.globals = broadcast;
        }

        evaluate_all(st, m, &*st.globals, EvalMode::nearest_prototype, true);
        if (st.cfg.log_margins && !uploads.empty()) m.margins = margin_report(*st.globals, uploads);
        st.last_uploads = std::move(uploads);
        ++st.rounds_done;
        return m;
    });
}

RoundMetrics run_round_fedproto(FederationState& st, std::size_t round) {
    return with_round_context(round, [&] {
        RoundMetrics m = begin_round(st, round);
        const std::size_t C = st.clients.front().model.num_classes();
        const std::size_t K = st.clients.front().model.feature_dim();
        const std::optional<PrototypeSet> broadcast = st.globals;
        const PrototypeSet* guide = broadcast ? &*broadcast : nullptr;

        auto uploads = run_clients<PrototypeSet>(
            st, m,
            [&](ClientState& c) {
                return local_train_fedproto(c.model, c.train, guide, client_options(st, c.id, round, st.cfg.lambda));
            },
            [&](ClientState& c) { return compute_prototypes(c.model, c.train, static_cast<std::int64_t>(c.id)); });

        const auto ci = uploaded_classes(m, uploads);
        m.comm = prototype_comm_cost(ci, C, K);
        if (!broadcast) m.comm.downlink = 0;

        if (!uploads.empty()) st.globals = weighted_average(uploads, st.cfg.strict_eq3);

        if (st.globals) evaluate_all(st, m, &*st.globals, EvalMode::nearest_prototype, true);
        if (st.cfg.log_margins && st.globals && !uploads.empty()) m.margins = margin_report(*st.globals, uploads);
        st.last_uploads = std::move(uploads);
        ++st.rounds_done;
        return m;
    });
}

RoundMetrics run_round_feddistill(FederationState& st, std::size_t round) {
    return with_round_context(round, [&] {
        RoundMetrics m = begin_round(st, round);
        const std::size_t C = st.clients.front().model.num_classes();
        const std::optional<LogitTable> broadcast = st.global_logits;
        const LogitTable* guide = broadcast ? &*broadcast : nullptr;

        auto uploads = run_clients<LogitTable>(
            st, m,
            [&](ClientState& c) {
                return local_train_feddistill(c.model, c.train, guide, client_options(st, c.id, round, st.cfg.gamma));
            },
            [&](ClientState& c) { return compute_logit_table(c.model, c.train, static_cast<std::int64_t>(c.id)); });

        std::vector<PrototypeSet> rows;
        for (const auto& u : uploads) rows.push_back(u.rows);
        const auto ci = uploaded_classes(m, rows);
        m.comm = logit_comm_cost(ci, C);
        if (!broadcast) m.comm.downlink = 0;

        if (!uploads.empty()) st.global_logits = average_logit_tables(uploads);
        evaluate_all(st, m, nullptr, EvalMode::classifier, false);
        st.last_uploads.clear();
        ++st.rounds_done;
        return m;
    });
}

RoundMetrics run_round(FederationState& st, std::size_t round) {
    switch (st.cfg.protocol) {
        case Protocol::fedtgp:
            return run_round_fedtgp(st, round);
        case Protocol::fedproto:
            return run_round_fedproto(st, round);
        case Protocol::feddistill:
            return run_round_feddistill(st, round);
    }
    throw ContractError("unknown protocol");
}

ExperimentResult run_experiment(const RunConfig& cfg) { return run_experiment(cfg, nullptr); }

ExperimentResult run_experiment(const RunConfig& cfg, const Dataset* preloaded) {
    cfg.validate();
    ExperimentResult out;
    out.cfg = cfg;
    std::optional<Dataset> idx_data;
    if (!preloaded && cfg.dataset == DatasetKind::idx) {
        idx_data = load_dataset(cfg, 0);
        preloaded = &*idx_data;
    }
    for (auto seed : cfg.seeds) {
        const Dataset ds = preloaded ? *preloaded : load_dataset(cfg, seed);
        FederationState st = make_federation(cfg, ds, seed);
        SeedResult sr;
        sr.seed = seed;
        double best = 0.0;
        for (std::size_t t = 1; t <= cfg.rounds; ++t) {
            sr.rounds.push_back(run_round(st, t));
            best = std::max(best, sr.rounds.back().mean_accuracy);
            sr.best_so_far.push_back(best);
        }
        sr.final_globals = st.globals;
        sr.final_uploads = st.last_uploads;
        out.seeds.push_back(std::move(sr));
    }
    double sum = 0.0;
    for (const auto& s : out.seeds) sum += s.best();
    const auto n = static_cast<double>(out.seeds.size());
    out.mean_best = sum / n;
    if (out.seeds.size() > 1) {
        double ss = 0.0;
        for (const auto& s : out.seeds) ss += (s.best() - out.mean_best) * (s.best() - out.mean_best);
        out.std_best = std::sqrt(ss / (n - 1.0));
    }
    return out;
}

void write_metrics_csv(std::ostream& os, const ExperimentResult& result) {
    const bool margins = result.cfg.log_margins;
    std::size_t classes = 0;
    if (margins)
        for (const auto& s : result.seeds)
            for (const auto& r : s.rounds) classes = std::max(classes, r.margins.size());

    os << "seed,round,protocol,mean_test_acc,best_acc,server_loss_final,delta,uplink_floats,downlink_floats";
    for (std::size_t c = 0; c < classes; ++c) os << ",global_margin_c" << c << ",max_client_margin_c" << c;
    os << '\n';
    const std::string proto = to_string(result.cfg.protocol);
    for (const auto& s : result.seeds) {
        for (std::size_t i = 0; i < s.rounds.size(); ++i) {
            const auto& r = s.rounds[i];
            os << s.seed << ',' << r.round << ',' << proto << ',' << format_number(r.mean_accuracy) << ','
               << format_number(s.best_so_far[i]) << ',' << format_number(r.server_loss_final) << ','
               << format_number(r.delta) << ',' << r.comm.uplink << ',' << r.comm.downlink;
            for (std::size_t c = 0; c < classes; ++c) {
                if (c < r.margins.size()) {
                    os << ',' << format_number(r.margins[c].global) << ',' << format_number(r.margins[c].max_client);
                } else {
                    os << ",,";
                }
            }
            os << '\n';
        }
    }
}

void write_server_trace_csv(std::ostream& os, const ExperimentResult& result) {
    os << "seed,round,epoch,loss,delta\n";
    for (const auto& s : result.seeds)
        for (const auto& r : s.rounds)
            for (std::size_t e = 0; e < r.server_losses.size(); ++e)
                os << s.seed << ',' << r.round << ',' << e << ',' << format_number(r.server_losses[e]) << ','
                   << format_number(r.delta) << '\n';
}

}  // namespace fedtgp

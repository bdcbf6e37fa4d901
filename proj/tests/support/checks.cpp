#include "checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "fedtgp/autodiff.hpp"
#include "fedtgp/metrics.hpp"
#include "fedtgp/protocols.hpp"
#include "fedtgp/rng.hpp"
#include "fedtgp/server_tgp.hpp"

namespace fedtgp::checks {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

template <typename Body>
Outcome timed(int id, std::string name, double limit_seconds, Body&& body) {
    Outcome o{id, std::move(name), Status::fail, "", 0.0};
    const auto start = Clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.status = Status::fail;
        o.detail = std::string("exception: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (o.status == Status::pass && limit_seconds > 0 && o.seconds > limit_seconds) {
        o.status = Status::fail;
        o.detail += "; runtime " + fmt("%.1f", o.seconds) + " s exceeds " + fmt("%.0f", limit_seconds) + " s";
    }
    return o;
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Random client prototype set; at least one class present.
PrototypeSet random_set(Rng& rng, std::size_t C, std::size_t K, std::int64_t owner, double keep = 0.7) {
    PrototypeSet s(C, K, owner);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> row(K);
    for (std::size_t c = 0; c < C; ++c) {
        if (uniform_real(rng, 0.0, 1.0) > keep) continue;
        for (auto& v : row) v = normal(rng);
        s.set_row(c, row);
        s.set_count(c, uniform(rng, 1, 40));
    }
    if (s.present_count() == 0) {
        for (auto& v : row) v = normal(rng);
        const auto c = uniform(rng, 0, C - 1);
        s.set_row(c, row);
        s.set_count(c, uniform(rng, 1, 40));
    }
    return s;
}

// ---- criterion 1 ----------------------------------------------------------

struct OpCase {
    std::string name;
    // Builds tensors and an objective for one random instance.
    std::function<double(Rng&)> run;
};

double check_op(std::vector<Tensor>& inputs, const std::function<Var(Tape&, std::vector<Var>&)>& body) {
    std::vector<Tensor*> ptrs;
    for (auto& t : inputs) ptrs.push_back(&t);
    auto f = [&](Tape& tape) {
        std::vector<Var> vars;
        for (auto& t : inputs) vars.push_back(tape.parameter(t));
        return body(tape, vars);
    };
    return gradcheck::compare(ptrs, f).rel_error;
}

// Scalarizes a node through fixed random weights.
std::function<Var(Tape&, std::vector<Var>&)> projected(Rng& rng, std::vector<std::size_t> out_shape,
                                                       std::function<Var(std::vector<Var>&)> op) {
    Tensor w = gradcheck::random_tensor(rng, std::move(out_shape));
    return [w, op](Tape& tape, std::vector<Var>& v) { return gradcheck::project(tape, op(v), w); };
}

std::vector<OpCase> op_cases() {
    using gradcheck::random_tensor;
    std::vector<OpCase> cases;
    cases.push_back({"matmul", [](Rng& rng) {
                         const auto m = uniform(rng, 1, 5), k = uniform(rng, 1, 5), n = uniform(rng, 1, 5);
                         std::vector<Tensor> in{random_tensor(rng, {m, k}), random_tensor(rng, {k, n})};
                         return check_op(in, projected(rng, {m, n}, [](auto& v) { return matmul(v[0], v[1]); }));
                     }});
    cases.push_back({"add_bias", [](Rng& rng) {
                         const auto b = uniform(rng, 1, 5), n = uniform(rng, 1, 5);
                         std::vector<Tensor> in{random_tensor(rng, {b, n}), random_tensor(rng, {n})};
                         return check_op(in, projected(rng, {b, n}, [](auto& v) { return add_bias(v[0], v[1]); }));
                     }});
    for (int which = 0; which < 3; ++which) {
        const char* names[] = {"add", "sub", "mul"};
        cases.push_back({names[which], [which](Rng& rng) {
                             const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                             std::vector<Tensor> in{random_tensor(rng, {r, c}), random_tensor(rng, {r, c})};
                             return check_op(in, projected(rng, {r, c}, [which](auto& v) {
                                                 if (which == 0) return add(v[0], v[1]);
                                                 if (which == 1) return sub(v[0], v[1]);
                                                 return mul(v[0], v[1]);
                                             }));
                         }});
    }
    cases.push_back({"mul (shared operand)", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                         std::vector<Tensor> in{random_tensor(rng, {r, c})};
                         return check_op(in, projected(rng, {r, c}, [](auto& v) { return mul(v[0], v[0]); }));
                     }});
    cases.push_back({"scale", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                         const double s = uniform_real(rng, -3.0, 3.0);
                         std::vector<Tensor> in{random_tensor(rng, {r, c})};
                         return check_op(in, projected(rng, {r, c}, [s](auto& v) { return scale(v[0], s); }));
                     }});
    cases.push_back({"relu", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                         Tensor x = random_tensor(rng, {r, c});
                         for (auto& v : x.values()) {
                             while (std::abs(v) <= 1e-3) v = std::normal_distribution<double>(0.0, 1.0)(rng);
                         }
                         std::vector<Tensor> in{x};
                         return check_op(in, projected(rng, {r, c}, [](auto& v) { return relu(v[0]); }));
                     }});
    cases.push_back({"sum", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                         std::vector<Tensor> in{random_tensor(rng, {r, c})};
                         return check_op(in, projected(rng, {1}, [](auto& v) { return sum(v[0]); }));
                     }});
    cases.push_back({"mean", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5);
                         std::vector<Tensor> in{random_tensor(rng, {r, c})};
                         return check_op(in, projected(rng, {1}, [](auto& v) { return mean(v[0]); }));
                     }});
    cases.push_back({"gather_rows", [](Rng& rng) {
                         const auto r = uniform(rng, 1, 5), c = uniform(rng, 1, 5), n = uniform(rng, 1, 6);
                         std::vector<std::size_t> idx(n);
                         for (auto& i : idx) i = uniform(rng, 0, r - 1);
                         std::vector<Tensor> in{random_tensor(rng, {r, c})};
                         return check_op(in, projected(rng, {n, c}, [idx](auto& v) { return gather_rows(v[0], idx); }));
                     }});
    for (auto red : {Reduction::mean, Reduction::sum}) {
        cases.push_back({red == Reduction::mean ? "softmax_cross_entropy (mean)" : "softmax_cross_entropy (sum)",
                         [red](Rng& rng) {
                             const auto b = uniform(rng, 1, 6), c = uniform(rng, 2, 6);
                             std::vector<std::size_t> labels(b);
                             for (auto& l : labels) l = uniform(rng, 0, c - 1);
                             std::vector<Tensor> in{random_tensor(rng, {b, c}, 2.0)};
                             return check_op(in, [labels, red](Tape&, std::vector<Var>& v) {
                                 return softmax_cross_entropy(v[0], labels, red);
                             });
                         }});
    }
    cases.push_back({"euclidean_distance", [](Rng& rng) {
                         const auto k = uniform(rng, 1, 8);
                         Tensor a, b;
                         do {
                             a = random_tensor(rng, {k});
                             b = random_tensor(rng, {k});
                         } while (oracle::distance(oracle::Row(a.values().begin(), a.values().end()),
                                                   oracle::Row(b.values().begin(), b.values().end())) <= 1e-2);
                         std::vector<Tensor> in{a, b};
                         return check_op(in, [](Tape&, std::vector<Var>& v) { return euclidean_distance(v[0], v[1]); });
                     }});
    cases.push_back({"row_distances", [](Rng& rng) {
                         const auto b = uniform(rng, 1, 5), k = uniform(rng, 1, 6);
                         std::vector<Tensor> in{random_tensor(rng, {b, k}), random_tensor(rng, {b, k})};
                         return check_op(in, projected(rng, {b}, [](auto& v) { return row_distances(v[0], v[1]); }));
                     }});
    cases.push_back({"pairwise_distances", [](Rng& rng) {
                         const auto n = uniform(rng, 1, 5), c = uniform(rng, 1, 5), k = uniform(rng, 1, 6);
                         std::vector<Tensor> in{random_tensor(rng, {n, k}), random_tensor(rng, {c, k})};
                         return check_op(in,
                                         projected(rng, {n, c}, [](auto& v) { return pairwise_distances(v[0], v[1]); }));
                     }});
    cases.push_back({"margin contrastive loss (server parameters)", [](Rng& rng) {
                         const auto C = uniform(rng, 2, 5), K = uniform(rng, 2, 6), M = uniform(rng, 1, 3);
                         const bool transform = uniform(rng, 0, 3) != 0;
                         ServerPrototypeModel model(C, K, 0, transform, rng());
                         std::vector<PrototypeSet> sets;
                         for (std::size_t i = 0; i < M; ++i) sets.push_back(random_set(rng, C, K, i));
                         const double delta = uniform_real(rng, 0.0, 2.0);
                         auto params = model.parameters();
                         return gradcheck::compare(params, [&](Tape& tape) {
                                    return acl_loss(tape, model.forward(tape), sets, delta);
                                })
                             .rel_error;
                     }});
    cases.push_back({"guided client loss (client parameters)", [](Rng& rng) {
                         const auto D = uniform(rng, 2, 5), K = uniform(rng, 2, 5), C = uniform(rng, 2, 5);
                         ArchSpec arch{{}, K};
                         for (std::size_t l = uniform(rng, 0, 2); l > 0; --l) arch.hidden.push_back(uniform(rng, 2, 6));
                         ClassifierSpec head;
                         if (uniform(rng, 0, 2) == 0) head.hidden.push_back(uniform(rng, 2, 4));
                         ClientModel model = init_model(D, arch, head, C, rng());
                         const auto B = uniform(rng, 1, 6);
                         Dataset batch{gradcheck::random_tensor(rng, {B, D}), std::vector<std::size_t>(B), C};
                         for (auto& y : batch.labels) y = uniform(rng, 0, C - 1);
                         PrototypeSet guide = random_set(rng, C, K, kGlobalOwner, 0.8);
                         const double lambda = uniform_real(rng, 0.0, 1.0);
                         auto params = model.parameters();
                         return gradcheck::compare(params, [&](Tape& tape) {
                                    return guided_objective(tape, model, batch, &guide, lambda);
                                })
                             .rel_error;
                     }});
    return cases;
}

// ---- criteria 6 and 7 -----------------------------------------------------

std::map<std::string, ExperimentResult>& experiment_cache() {
    static std::map<std::string, ExperimentResult> cache;
    return cache;
}

const ExperimentResult& cached_run(const RunConfig& cfg) {
    const std::string key = to_json(cfg).dump();
    auto& cache = experiment_cache();
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, run_experiment(cfg)).first;
    return it->second;
}

std::string pct(double v) { return fmt("%.2f%%", 100.0 * v); }

}  // namespace

RunConfig desk_config() {
    RunConfig cfg;
    cfg.protocol = Protocol::fedtgp;
    cfg.num_classes = 10;
    cfg.input_dim = 32;
    cfg.per_class = 200;
    cfg.spread = 0.3;
    cfg.clients = 8;
    cfg.model_group = "HtMLP_8";
    cfg.partition = PartitionKind::dirichlet;
    cfg.beta = 0.1;
    cfg.feature_dim = 32;
    cfg.rounds = 50;
    cfg.seeds = {0, 1, 2};
    return cfg;
}

double majority_baseline(const RunConfig& cfg) {
    double total = 0.0;
    for (auto seed : cfg.seeds) {
        const Dataset ds = load_dataset(cfg, seed);
        const FederationState st = make_federation(cfg, ds, seed);
        double acc = 0.0;
        std::size_t counted = 0;
        for (const auto& client : st.clients) {
            if (client.test.size() == 0) continue;
            std::vector<std::size_t> freq(cfg.num_classes, 0);
            for (auto y : client.train.labels) ++freq[y];
            const auto guess =
                static_cast<std::size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
            const auto hits = std::count(client.test.labels.begin(), client.test.labels.end(), guess);
            acc += static_cast<double>(hits) / static_cast<double>(client.test.size());
            ++counted;
        }
        total += acc / static_cast<double>(counted);
    }
    return total / static_cast<double>(cfg.seeds.size());
}

Outcome gradient_correctness() {
    return timed(1, "gradient correctness", 30.0, [](Outcome& o) {
        constexpr int kInstances = 100;
        constexpr double kTol = 1e-4;
        double worst = 0.0;
        std::string worst_name;
        std::size_t failures = 0;
        auto cases = op_cases();
        for (std::size_t i = 0; i < cases.size(); ++i) {
            Rng rng = make_rng(2024, "check/gradients", {i});
            for (int n = 0; n < kInstances; ++n) {
                const double err = cases[i].run(rng);
                if (!(err < kTol)) ++failures;
                if (!(err <= worst)) {
                    worst = err;
                    worst_name = cases[i].name;
                }
            }
        }
        o.status = failures == 0 ? Status::pass : Status::fail;
        o.detail = std::to_string(cases.size()) + " ops x " + std::to_string(kInstances) +
                   " instances, worst rel. err " + fmt("%.2e", worst) + " (" + worst_name + "), " +
                   std::to_string(failures) + " over 1e-4";
    });
}

Outcome oracle_equivalence() {
    return timed(2, "oracle equivalence", 10.0, [](Outcome& o) {
        constexpr int kInstances = 200;
        constexpr double kTol = 1e-10;
        std::map<std::string, double> worst;
        std::map<std::string, std::size_t> mismatches;
        auto note = [&](const std::string& name, double err) {
            worst[name] = std::max(worst[name], err);
            if (!(err <= kTol)) ++mismatches[name];
        };
        Rng rng = make_rng(2024, "check/oracles");
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int n = 0; n < kInstances; ++n) {
            const auto C = uniform(rng, 2, 6), K = uniform(rng, 1, 8), M = uniform(rng, 1, 5);

            // compute_prototypes on a random model and data.
            {
                const auto D = uniform(rng, 2, 5);
                ArchSpec arch{{}, std::max<std::size_t>(K, 2)};
                for (std::size_t l = uniform(rng, 0, 2); l > 0; --l) arch.hidden.push_back(uniform(rng, 2, 6));
                ClientModel model = init_model(D, arch, {}, C, rng());
                const auto N = uniform(rng, 1, 20);
                Dataset data{gradcheck::random_tensor(rng, {N, D}), std::vector<std::size_t>(N), C};
                for (auto& y : data.labels) y = uniform(rng, 0, C - 1);
                note("compute_prototypes",
                     oracle::max_abs_diff(oracle::class_means(model, data), compute_prototypes(model, data)));
            }

            std::vector<PrototypeSet> sets;
            std::vector<oracle::Table> tables;
            for (std::size_t i = 0; i < M; ++i) {
                sets.push_back(random_set(rng, C, K, static_cast<std::int64_t>(i)));
                tables.push_back(oracle::from_set(sets.back()));
            }
            note("weighted_average", oracle::max_abs_diff(oracle::weighted_average(tables, false), weighted_average(sets)));
            note("weighted_average (strict)",
                 oracle::max_abs_diff(oracle::weighted_average(tables, true), weighted_average(sets, true)));
            note("cluster_centers", oracle::max_abs_diff(oracle::cluster_centers(tables), cluster_centers(sets)));

            // A fully present set, sometimes with duplicated rows to exercise ties.
            PrototypeSet full = random_set(rng, C, K, kGlobalOwner, 1.1);
            if (uniform(rng, 0, 2) == 0) {
                const auto a = uniform(rng, 0, C - 1), b = uniform(rng, 0, C - 1);
                auto src = full.row(a);
                std::vector<double> copy(src.begin(), src.end());
                full.set_row(b, copy);
            }
            const auto ft = oracle::from_set(full);
            const double tau = uniform_real(rng, 0.5, 5.0);
            note("adaptive_margin", std::abs(oracle::adaptive_margin(ft, tau) - adaptive_margin(full, tau)));
            for (std::size_t c = 0; c < C; ++c) {
                note("prototype_margin", std::abs(oracle::margin(ft, c) - prototype_margin(full, c)));
                const auto lib = max_client_margin(sets, c);
                const auto ref = oracle::max_client_margin(tables, c);
                note("max_client_margin", lib.has_value() != ref.has_value() ? 1.0
                                          : lib                              ? std::abs(*lib - *ref)
                                                                             : 0.0);
            }

            const auto B = uniform(rng, 1, 12);
            Tensor feats = gradcheck::random_tensor(rng, {B, K});
            for (std::size_t b = 0; b < B; ++b) {
                if (uniform(rng, 0, 3) == 0) {
                    auto src = full.row(uniform(rng, 0, C - 1));
                    std::copy(src.begin(), src.end(), feats.row(b).begin());
                }
            }
            oracle::Matrix fm;
            for (std::size_t b = 0; b < B; ++b) fm.emplace_back(feats.row(b).begin(), feats.row(b).end());
            const auto want = oracle::nearest(ft, fm);
            const auto got = nearest_prototype_predict(full, feats);
            note("nearest_prototype_predict", want == got ? 0.0 : 1.0);
        }
        std::size_t total = 0;
        std::string worst_desc;
        for (const auto& [name, err] : worst) {
            total += mismatches[name];
            if (!worst_desc.empty()) worst_desc += ", ";
            worst_desc += name + " " + fmt("%.1e", err);
        }
        o.status = total == 0 ? Status::pass : Status::fail;
        o.detail = std::to_string(kInstances) + " instances; max abs diff: " + worst_desc;
    });
}

Outcome hand_value() {
    return timed(3, "hand value", 0.0, [](Outcome& o) {
        PrototypeSet client(2, 1, 0);
        client.set_row(0, std::vector<double>{0.0});
        client.set_count(0, 1);
        Tape tape(false);
        Var globals = tape.constant(Tensor::matrix(2, 1, {0.0, 2.0}));
        std::vector<PrototypeSet> sets{client};
        const double got = acl_loss(tape, globals, sets, 1.0).value().item();
        const double want = std::log1p(std::exp(-1.0));
        const double err = std::abs(got - want);
        o.status = err <= 1e-9 ? Status::pass : Status::fail;
        o.detail = "loss " + fmt("%.10f", got) + " vs log(1+e^-1) = " + fmt("%.10f", want) + ", |diff| " +
                   fmt("%.1e", err);
    });
}

Outcome margin_shrink() {
    return timed(4, "margin shrink under weighted averaging", 0.0, [](Outcome& o) {
        std::size_t ok = 0, worst_shrunk = 1000;
        const fixtures::CloudParams params;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto sets = fixtures::displaced_clouds(seed, params);
            std::vector<oracle::Table> tables;
            for (const auto& s : sets) tables.push_back(oracle::from_set(s));
            const auto avg = oracle::from_set(weighted_average(sets));
            std::size_t shrunk = 0;
            for (std::size_t c = 0; c < params.num_classes; ++c) {
                if (oracle::margin(avg, c) < *oracle::max_client_margin(tables, c)) ++shrunk;
            }
            worst_shrunk = std::min(worst_shrunk, shrunk);
            if (2 * shrunk >= params.num_classes) ++ok;
        }
        o.status = ok == 10 ? Status::pass : Status::fail;
        o.detail = std::to_string(ok) + "/10 fixtures with >= half the classes shrunk (fewest shrunk: " +
                   std::to_string(worst_shrunk) + "/" + std::to_string(params.num_classes) + ")";
    });
}

Outcome separation() {
    return timed(5, "separation after server training", 60.0, [](Outcome& o) {
        const fixtures::CloudParams params;
        std::size_t ok = 0;
        double worst_ratio = 1e9;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto sets = fixtures::displaced_clouds(seed, params);
            ServerPrototypeModel model(params.num_classes, params.dim, 0, true, derive_seed(seed, "fixture/server"));
            const auto [globals, report] = train_globals(model, sets, MarginPolicy::adaptive(100.0), 100, 0.01);
            std::vector<oracle::Table> tables;
            for (const auto& s : sets) tables.push_back(oracle::from_set(s));
            const auto g = oracle::from_set(globals);
            bool all = true;
            for (std::size_t c = 0; c < params.num_classes; ++c) {
                const double ratio = oracle::margin(g, c) / *oracle::max_client_margin(tables, c);
                worst_ratio = std::min(worst_ratio, ratio);
                if (ratio < 1.0) all = false;
            }
            if (all) ++ok;
        }
        o.status = ok >= 9 ? Status::pass : Status::fail;
        o.detail = std::to_string(ok) + "/10 seeds with every global margin >= max client margin (smallest ratio " +
                   fmt("%.3f", worst_ratio) + ")";
    });
}

Outcome end_to_end_ordering() {
    return timed(6, "end-to-end ordering on blobs", 600.0, [](Outcome& o) {
        RunConfig tgp = desk_config();
        RunConfig proto = tgp;
        proto.protocol = Protocol::fedproto;
        const auto& a = cached_run(tgp);
        const auto& b = cached_run(proto);
        const double base = majority_baseline(tgp);
        const bool order = a.mean_best >= b.mean_best;
        const bool above = a.mean_best - base >= 0.10 && b.mean_best - base >= 0.10;
        o.status = order && above ? Status::pass : Status::fail;
        o.detail = "FedTGP " + pct(a.mean_best) + " +- " + pct(a.std_best) + ", FedProto " + pct(b.mean_best) +
                   " +- " + pct(b.std_best) + ", per-client majority baseline " + pct(base);
    });
}

Outcome ablation_ordering() {
    return timed(7, "ablation ordering", 1800.0, [](Outcome& o) {
        RunConfig full = desk_config();
        RunConfig fm = full;
        fm.margin = MarginMode::fixed;
        RunConfig scl = full;
        scl.margin = MarginMode::none;
        const double a = cached_run(full).mean_best, b = cached_run(fm).mean_best, c = cached_run(scl).mean_best;
        constexpr double kTie = 0.005;
        o.status = a >= b - kTie && b >= c - kTie ? Status::pass : Status::fail;
        o.detail = "FedTGP " + pct(a) + ", FM " + pct(b) + ", SCL " + pct(c) + " (ties within 0.5 points)";
    });
}

Outcome communication_accounting() {
    return timed(8, "communication accounting", 0.0, [](Outcome& o) {
        std::vector<std::string> bad;
        auto expect = [&](const std::string& what, std::size_t got, std::size_t want) {
            if (got != want) bad.push_back(what + " " + std::to_string(got) + " != " + std::to_string(want));
        };
        const std::vector<std::size_t> four(4, 2), one{2}, twenty(20, 10);
        expect("prototype 4 clients", prototype_comm_cost(four, 10, 16).total(), 768);
        expect("logits 4 clients", logit_comm_cost(four, 10).total(), 480);
        expect("prototype 1 client", prototype_comm_cost(one, 10, 16).total(), 192);
        expect("logits 1 client", logit_comm_cost(one, 10).total(), 120);
        expect("prototype K=512 C=100", prototype_comm_cost(twenty, 100, 512).total(), 1126400);

        // Live rounds: 5 clients holding 2 of 10 classes each, so K·(2+10) per
        // client for prototypes and 10·(2+10) for logits.
        RunConfig cfg;
        cfg.partition = PartitionKind::pathological;
        cfg.classes_per_client = 2;
        cfg.clients = 5;
        cfg.per_class = 20;
        cfg.feature_dim = 16;
        cfg.server_epochs = 5;
        cfg.seeds = {0};
        const Dataset ds = load_dataset(cfg, 0);
        for (auto p : {Protocol::fedtgp, Protocol::fedproto, Protocol::feddistill}) {
            cfg.protocol = p;
            FederationState st = make_federation(cfg, ds, 0);
            run_round(st, 1);
            const auto m = run_round(st, 2);
            expect("live " + to_string(p), m.comm.total(), p == Protocol::feddistill ? 600 : 960);
        }
        o.status = bad.empty() ? Status::pass : Status::fail;
        o.detail = bad.empty() ? "768 / 480 / 192 / 120 / 1126400 floats; live rounds agree" : bad.front();
    });
}

Outcome determinism() {
    return timed(9, "determinism", 120.0, [](Outcome& o) {
        RunConfig cfg = desk_config();
        cfg.rounds = 8;
        cfg.seeds = {0, 1};
        cfg.server_epochs = 50;
        cfg.log_margins = true;
        std::vector<std::string> bad;
        for (auto p : {Protocol::fedtgp, Protocol::fedproto, Protocol::feddistill}) {
            cfg.protocol = p;
            auto csv = [&](bool parallel) {
                RunConfig c = cfg;
                c.parallel = parallel;
                const auto r = run_experiment(c);
                std::ostringstream os;
                write_metrics_csv(os, r);
                write_server_trace_csv(os, r);
                return os.str();
            };
            const auto first = csv(false), second = csv(false), threaded = csv(true);
            if (first != second) bad.push_back(to_string(p) + " repeat differs");
            if (first != threaded) bad.push_back(to_string(p) + " parallel differs");
        }
        o.status = bad.empty() ? Status::pass : Status::fail;
        o.detail = bad.empty() ? "byte-identical CSV for repeat and parallel runs of all three protocols"
                               : bad.front();
    });
}

Outcome fmnist_pathological() {
    const char* dir = std::getenv("FEDTGP_FMNIST_DIR");
    if (!dir || !*dir) {
        return {10, "FMNIST pathological (optional)", Status::skip, "set FEDTGP_FMNIST_DIR to run", 0.0};
    }
    return timed(10, "FMNIST pathological (optional)", 3600.0, [dir](Outcome& o) {
        namespace fs = std::filesystem;
        RunConfig cfg;
        cfg.protocol = Protocol::fedtgp;
        cfg.dataset = DatasetKind::idx;
        cfg.idx_images = (fs::path(dir) / "train-images-idx3-ubyte").string();
        cfg.idx_labels = (fs::path(dir) / "train-labels-idx1-ubyte").string();
        cfg.partition = PartitionKind::pathological;
        cfg.classes_per_client = 2;
        cfg.clients = 20;
        cfg.model_group = "HtMLP_8";
        cfg.rounds = 100;
        cfg.seeds = {0};
        const auto r = run_experiment(cfg);
        o.status = r.mean_best >= 0.90 ? Status::pass : Status::fail;
        o.detail = "best mean nearest-prototype accuracy " + pct(r.mean_best) + " (threshold 90%)";
    });
}

void print(std::ostream& os, const Outcome& o) {
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::skip ? "SKIP" : "FAIL";
    char head[128];
    std::snprintf(head, sizeof head, "[%s] criterion %2d  %-40s (%6.1f s)  ", tag, o.id, o.name.c_str(), o.seconds);
    os << head << o.detail << std::endl;
}

bool run_fast_checks(std::ostream& os, bool verbose) {
    bool ok = true;
    for (auto* check : {gradient_correctness, oracle_equivalence, hand_value, margin_shrink, separation,
                        communication_accounting}) {
        Outcome o = check();
        ok = ok && o.status != Status::fail;
        if (verbose || o.status == Status::fail) {
            print(os, o);
        } else {
            os << (o.status == Status::pass ? "ok   " : "skip ") << o.name << '\n';
        }
    }
    os << (ok ? "all checks passed" : "some checks FAILED") << '\n';
    return ok;
}

}  // namespace fedtgp::checks

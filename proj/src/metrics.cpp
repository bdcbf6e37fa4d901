#include "fedtgp/metrics.hpp"

#include <algorithm>
#include <cstdio>

#include "fedtgp/errors.hpp"

namespace fedtgp {

std::optional<double> evaluate_client(ClientModel& model, const PrototypeSet* globals, const Dataset& test,
                                      EvalMode mode) {
    if (test.size() == 0) return std::nullopt;
    std::vector<std::size_t> pred;
    if (mode == EvalMode::nearest_prototype) {
        if (!globals) throw ContractError("evaluate_client: nearest-prototype mode needs global prototypes");
        pred = nearest_prototype_predict(*globals, model.features(test.features));
    } else {
        const Tensor logits = model.logits(test.features);
        pred.resize(test.size());
        for (std::size_t r = 0; r < test.size(); ++r) {
            auto row = logits.row(r);
            pred[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        }
    }
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.size(); ++r) correct += pred[r] == test.labels[r] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

CommCost comm_cost(std::span<const std::size_t> participant_classes, std::size_t num_classes, std::size_t unit) {
    CommCost cost;
    for (auto ci : participant_classes) {
        cost.uplink += unit * ci;
        cost.downlink += unit * num_classes;
    }
    return cost;
}

std::vector<MarginRow> margin_report(const PrototypeSet& globals, std::span<const PrototypeSet> client_sets) {
    const std::size_t C = globals.num_classes();
    if (C < 2) throw ValidationError("margin_report: need at least 2 classes");
    std::vector<MarginRow> rows(C);
    std::vector<std::optional<double>> all;
    for (std::size_t c = 0; c < C; ++c) {
        rows[c].cls = c;
        if (globals.present(c) && globals.present_count() >= 2) rows[c].global = prototype_margin(globals, c);
        rows[c].max_client = max_client_margin(client_sets, c);
        all.push_back(rows[c].global);
        all.push_back(rows[c].max_client);
    }
    const auto norm = normalize_margins(all);
    for (std::size_t c = 0; c < C; ++c) {
        rows[c].global_normalized = norm[2 * c];
        rows[c].max_client_normalized = norm[2 * c + 1];
    }
    return rows;
}

void write_margin_csv(std::ostream& os, std::span<const MarginRow> rows) {
    os << "class,global_margin,max_client_margin,global_margin_norm,max_client_margin_norm\n";
    for (const auto& r : rows) {
        os << r.cls << ',' << format_number(r.global) << ',' << format_number(r.max_client) << ','
           << format_number(r.global_normalized) << ',' << format_number(r.max_client_normalized) << '\n';
    }
}

void summarize_accuracy(RoundMetrics& m, std::span<const std::size_t> test_sizes) {
    double sum = 0.0, wsum = 0.0;
    std::size_t n = 0, total = 0;
    for (std::size_t i = 0; i < m.client_accuracy.size(); ++i) {
        if (!m.client_accuracy[i]) continue;
        sum += *m.client_accuracy[i];
        wsum += *m.client_accuracy[i] * static_cast<double>(test_sizes[i]);
        total += test_sizes[i];
        ++n;
    }
    m.mean_accuracy = n ? sum / static_cast<double>(n) : 0.0;
    m.weighted_accuracy = total ? wsum / static_cast<double>(total) : 0.0;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string format_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace fedtgp

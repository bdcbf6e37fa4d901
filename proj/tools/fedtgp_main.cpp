// fedtgp: experiment runner.
//
//   fedtgp run --config c.json [--set key=value ...]
//   fedtgp ablate --config c.json
//   fedtgp margins --prototypes protos.json
//   fedtgp check
//
// FEDTGP_OUTPUT_DIR, when set, redirects relative output paths.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "checks.hpp"
#include "fedtgp/config.hpp"
#include "fedtgp/errors.hpp"
#include "fedtgp/metrics.hpp"
#include "fedtgp/protocols.hpp"

namespace fs = std::filesystem;
using fedtgp::RunConfig;

namespace {

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string protocol;
    std::optional<std::size_t> rounds;
    std::optional<std::size_t> clients;
    std::vector<std::uint64_t> seeds;
    std::string output;
    bool parallel = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("-c,--config", a.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "override a config key: key=value")->take_all();
    cmd->add_option("--protocol", a.protocol, "fedproto | fedtgp | feddistill");
    cmd->add_option("--rounds", a.rounds, "communication rounds");
    cmd->add_option("--clients", a.clients, "number of clients");
    cmd->add_option("--seeds", a.seeds, "trial seeds")->expected(1, -1);
    cmd->add_option("-o,--output", a.output, "metrics CSV path");
    cmd->add_flag("--parallel", a.parallel, "train sampled clients on worker threads");
}

RunConfig build_config(const CommonArgs& a) {
    nlohmann::json j = nlohmann::json::object();
    if (!a.config.empty()) {
        std::ifstream in(a.config);
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw fedtgp::ConfigError("config: " + a.config + " is not valid JSON: " + e.what());
        }
    }
    if (!a.protocol.empty()) j["protocol"] = a.protocol;
    if (a.rounds) j["rounds"] = *a.rounds;
    if (a.clients) j["clients"] = *a.clients;
    if (!a.seeds.empty()) j["seeds"] = a.seeds;
    if (!a.output.empty()) j["output"] = a.output;
    if (a.parallel) j["parallel"] = true;
    for (const auto& o : a.overrides) fedtgp::apply_override(j, o);
    return fedtgp::parse_config(j);
}

fs::path output_path(const std::string& p) {
    fs::path path(p);
    if (const char* dir = std::getenv("FEDTGP_OUTPUT_DIR"); dir && *dir && path.is_relative()) {
        path = fs::path(dir) / path;
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    return path;
}

nlohmann::json prototypes_to_json(const fedtgp::PrototypeSet& s) {
    nlohmann::json j;
    j["owner"] = s.owner();
    j["num_classes"] = s.num_classes();
    j["dim"] = s.dim();
    nlohmann::json rows = nlohmann::json::object();
    for (auto c : s.present_classes()) {
        auto r = s.row(c);
        rows[std::to_string(c)] = {{"count", s.count(c)}, {"values", std::vector<double>(r.begin(), r.end())}};
    }
    j["rows"] = rows;
    return j;
}

fedtgp::PrototypeSet prototypes_from_json(const nlohmann::json& j) {
    fedtgp::PrototypeSet s(j.at("num_classes").get<std::size_t>(), j.at("dim").get<std::size_t>(),
                           j.at("owner").get<std::int64_t>());
    for (const auto& [key, row] : j.at("rows").items()) {
        const auto c = static_cast<std::size_t>(std::stoul(key));
        s.set_row(c, row.at("values").get<std::vector<double>>());
        s.set_count(c, row.at("count").get<std::size_t>());
    }
    return s;
}

void print_summary(const fedtgp::ExperimentResult& r, std::ostream& os) {
    os << "protocol " << fedtgp::to_string(r.cfg.protocol) << ", " << r.cfg.rounds << " rounds, "
       << r.cfg.clients << " clients\n";
    for (const auto& s : r.seeds) {
        const auto& last = s.rounds.back();
        os << "  seed " << s.seed << ": best acc " << std::fixed << std::setprecision(4) << s.best()
           << ", final acc " << last.mean_accuracy << ", uplink/downlink per round " << last.comm.uplink << "/"
           << last.comm.downlink << " floats\n";
    }
    os << "  best accuracy " << std::fixed << std::setprecision(4) << r.mean_best << " +- " << r.std_best << " over "
       << r.seeds.size() << " seed(s)\n";
}

int cmd_run(const CommonArgs& a) {
    const RunConfig cfg = build_config(a);
    const auto result = fedtgp::run_experiment(cfg);
    const fs::path out = output_path(cfg.output);
    {
        std::ofstream os(out, std::ios::binary);
        fedtgp::write_metrics_csv(os, result);
    }
    if (cfg.protocol == fedtgp::Protocol::fedtgp) {
        fs::path trace = out;
        trace.replace_filename(out.stem().string() + "_server.csv");
        std::ofstream os(trace, std::ios::binary);
        fedtgp::write_server_trace_csv(os, result);
    }
    if (!cfg.save_prototypes.empty()) {
        nlohmann::json j;
        j["protocol"] = fedtgp::to_string(cfg.protocol);
        for (const auto& s : result.seeds) {
            nlohmann::json entry;
            entry["seed"] = s.seed;
            if (s.final_globals) entry["globals"] = prototypes_to_json(*s.final_globals);
            entry["clients"] = nlohmann::json::array();
            for (const auto& u : s.final_uploads) entry["clients"].push_back(prototypes_to_json(u));
            j["seeds"].push_back(entry);
        }
        std::ofstream os(output_path(cfg.save_prototypes));
        os << j.dump(1) << '\n';
    }
    print_summary(result, std::cout);
    std::cout << "metrics written to " << out.string() << '\n';
    return 0;
}

int cmd_ablate(const CommonArgs& a) {
    RunConfig base = build_config(a);
    base.protocol = fedtgp::Protocol::fedtgp;
    struct Variant {
        std::string name;
        fedtgp::MarginMode margin;
        bool transform;
    };
    const std::vector<Variant> variants = {
        {"SCL", fedtgp::MarginMode::none, true},
        {"FM", fedtgp::MarginMode::fixed, true},
        {"w/o F", fedtgp::MarginMode::adaptive, false},
        {"FedTGP", fedtgp::MarginMode::adaptive, true},
    };
    const fs::path out = output_path(base.output);
    std::ofstream csv(out, std::ios::binary);
    csv << "variant,seed,best_acc\n";
    std::cout << std::left << std::setw(8) << "variant" << std::setw(8) << "seed" << "best_acc\n";
    std::vector<std::pair<std::string, fedtgp::ExperimentResult>> results;
    for (const auto& v : variants) {
        RunConfig cfg = base;
        cfg.margin = v.margin;
        cfg.server_transform = v.transform;
        auto r = fedtgp::run_experiment(cfg);
        for (const auto& s : r.seeds) {
            csv << v.name << ',' << s.seed << ',' << fedtgp::format_number(s.best()) << '\n';
            std::cout << std::left << std::setw(8) << v.name << std::setw(8) << s.seed << std::fixed
                      << std::setprecision(4) << s.best() << '\n';
        }
        results.emplace_back(v.name, std::move(r));
    }
    std::cout << "\nsummary (mean +- std of best accuracy)\n";
    for (const auto& [name, r] : results) {
        std::cout << "  " << std::left << std::setw(8) << name << std::fixed << std::setprecision(4) << r.mean_best
                  << " +- " << r.std_best << '\n';
    }
    std::cout << "ablation table written to " << out.string() << '\n';
    return 0;
}

int cmd_margins(const std::string& path, const std::string& output) {
    std::ifstream in(path);
    if (!in) throw fedtgp::ConfigError("prototypes: cannot open " + path);
    nlohmann::json j;
    in >> j;
    std::ofstream file;
    std::ostream* os = &std::cout;
    if (!output.empty()) {
        file.open(output_path(output));
        os = &file;
    }
    for (const auto& entry : j.at("seeds")) {
        if (!entry.contains("globals")) continue;
        const auto globals = prototypes_from_json(entry.at("globals"));
        std::vector<fedtgp::PrototypeSet> clients;
        for (const auto& c : entry.at("clients")) clients.push_back(prototypes_from_json(c));
        *os << "# seed " << entry.at("seed").get<std::uint64_t>() << '\n';
        fedtgp::write_margin_csv(*os, fedtgp::margin_report(globals, clients));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototype-based heterogeneous federated learning simulator"};
    app.require_subcommand(1);

    CommonArgs run_args;
    auto* run = app.add_subcommand("run", "run an experiment and write the metrics CSV");
    add_common(run, run_args);

    CommonArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "SCL / FM / w/o F / full FedTGP sweep over the configured seeds");
    add_common(ablate, ablate_args);

    std::string protos_path, margins_out;
    auto* margins = app.add_subcommand("margins", "prototype margin report from saved prototypes");
    margins->add_option("-p,--prototypes", protos_path, "JSON written by run with save_prototypes")
        ->required()
        ->check(CLI::ExistingFile);
    margins->add_option("-o,--output", margins_out, "CSV path (default stdout)");

    bool check_verbose = false;
    auto* check = app.add_subcommand("check", "run the gradient and oracle checks");
    check->add_flag("-v,--verbose", check_verbose, "print details for each check");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(run_args);
        if (*ablate) return cmd_ablate(ablate_args);
        if (*margins) return cmd_margins(protos_path, margins_out);
        if (*check) return fedtgp::checks::run_fast_checks(std::cout, check_verbose) ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

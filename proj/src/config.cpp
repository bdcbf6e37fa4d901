#include "fedtgp/config.hpp"

#include <fstream>
#include <set>

#include "fedtgp/errors.hpp"
#include "fedtgp/models.hpp"

namespace fedtgp {

std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::fedproto:
            return "fedproto";
        case Protocol::fedtgp:
            return "fedtgp";
        case Protocol::feddistill:
            return "feddistill";
    }
    return "?";
}

Protocol parse_protocol(const std::string& s) {
    if (s == "fedproto") return Protocol::fedproto;
    if (s == "fedtgp") return Protocol::fedtgp;
    if (s == "feddistill") return Protocol::feddistill;
    throw ConfigError("protocol: must be one of fedproto, fedtgp, feddistill (got '" + s + "')");
}

namespace {

std::string margin_name(MarginMode m) {
    switch (m) {
        case MarginMode::none:
            return "none";
        case MarginMode::fixed:
            return "fixed";
        case MarginMode::adaptive:
            return "adaptive";
    }
    return "?";
}

MarginMode parse_margin(const std::string& s) {
    if (s == "none") return MarginMode::none;
    if (s == "fixed") return MarginMode::fixed;
    if (s == "adaptive") return MarginMode::adaptive;
    throw ConfigError("margin: must be one of none, fixed, adaptive (got '" + s + "')");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!it->is_number_integer() || it->get<long long>() < 0) {
                throw ConfigError(std::string(key) + ": must be a non-negative integer");
            }
        }
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type (" + it->dump() + ")");
    }
}

const std::set<std::string> kKeys = {
    "protocol",      "dataset",        "num_classes",    "input_dim",        "per_class",      "spread",
    "idx_images",    "idx_labels",     "partition",      "beta",             "classes_per_client",
    "train_fraction", "clients",       "participation",  "rounds",           "local_epochs",   "batch_size",
    "lr",            "lambda",         "gamma",          "margin",           "tau",            "fixed_margin",
    "server_epochs", "server_lr",      "server_transform", "server_hidden",  "feature_dim",    "model_group",
    "seeds",         "strict_eq3",     "parallel",       "log_margins",      "output",         "save_prototypes",
};

}  // namespace

void RunConfig::validate() const {
    if (dataset == DatasetKind::blobs) {
        if (num_classes < 2) throw ConfigError("num_classes: must be >= 2");
        if (input_dim < 2) throw ConfigError("input_dim: must be >= 2");
        if (per_class < 1) throw ConfigError("per_class: must be >= 1");
        if (!(spread > 0.0)) throw ConfigError("spread: must be > 0");
    } else {
        if (idx_images.empty()) throw ConfigError("idx_images: required when dataset is idx");
        if (idx_labels.empty()) throw ConfigError("idx_labels: required when dataset is idx");
    }
    if (clients < 1) throw ConfigError("clients: must be >= 1");
    if (partition == PartitionKind::dirichlet) {
        if (!(beta > 0.0)) throw ConfigError("beta: Dirichlet concentration must be > 0");
        if (clients < 2) throw ConfigError("clients: Dirichlet partition needs at least 2 clients");
    } else {
        if (classes_per_client < 1) throw ConfigError("classes_per_client: must be >= 1");
        if (dataset == DatasetKind::blobs) {
            if (classes_per_client > num_classes) throw ConfigError("classes_per_client: must be <= num_classes");
            if (clients * classes_per_client < num_classes) {
                throw ConfigError("classes_per_client: clients * classes_per_client must cover all classes");
            }
        }
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction: must be in (0,1)");
    if (!(participation > 0.0 && participation <= 1.0)) {
        throw ConfigError("participation: participation ratio must be in (0,1]");
    }
    if (rounds < 1) throw ConfigError("rounds: must be >= 1");
    if (local_epochs < 1) throw ConfigError("local_epochs: must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr: learning rate must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda: must be >= 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma: must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau: margin threshold must be > 0");
    if (!(fixed_margin >= 0.0)) throw ConfigError("fixed_margin: must be >= 0");
    if (!(server_lr > 0.0)) throw ConfigError("server_lr: must be > 0");
    if (feature_dim < 2) throw ConfigError("feature_dim: must be >= 2");
    make_model_group(model_group, feature_dim);
    if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
    if (output.empty()) throw ConfigError("output: path must not be empty");
}

MarginPolicy RunConfig::margin_policy() const { return {margin, tau, fixed_margin}; }

RunConfig parse_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!kKeys.count(key)) throw ConfigError(key + ": unknown configuration key");
    }
    RunConfig c;
    std::string s;
    if (j.contains("protocol")) {
        read(j, "protocol", s);
        c.protocol = parse_protocol(s);
    }
    if (j.contains("dataset")) {
        read(j, "dataset", s);
        if (s == "blobs") c.dataset = DatasetKind::blobs;
        else if (s == "idx") c.dataset = DatasetKind::idx;
        else throw ConfigError("dataset: must be blobs or idx (got '" + s + "')");
    }
    if (j.contains("partition")) {
        read(j, "partition", s);
        if (s == "dirichlet") c.partition = PartitionKind::dirichlet;
        else if (s == "pathological") c.partition = PartitionKind::pathological;
        else throw ConfigError("partition: must be dirichlet or pathological (got '" + s + "')");
    }
    if (j.contains("margin")) {
        read(j, "margin", s);
        c.margin = parse_margin(s);
    }
    read(j, "num_classes", c.num_classes);
    read(j, "input_dim", c.input_dim);
    read(j, "per_class", c.per_class);
    read(j, "spread", c.spread);
    read(j, "idx_images", c.idx_images);
    read(j, "idx_labels", c.idx_labels);
    read(j, "beta", c.beta);
    read(j, "classes_per_client", c.classes_per_client);
    read(j, "train_fraction", c.train_fraction);
    read(j, "clients", c.clients);
    read(j, "participation", c.participation);
    read(j, "rounds", c.rounds);
    read(j, "local_epochs", c.local_epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "lr", c.lr);
    read(j, "lambda", c.lambda);
    read(j, "gamma", c.gamma);
    read(j, "tau", c.tau);
    read(j, "fixed_margin", c.fixed_margin);
    read(j, "server_epochs", c.server_epochs);
    read(j, "server_lr", c.server_lr);
    read(j, "server_transform", c.server_transform);
    read(j, "server_hidden", c.server_hidden);
    read(j, "feature_dim", c.feature_dim);
    read(j, "model_group", c.model_group);
    if (j.contains("seeds")) {
        const auto& sj = j.at("seeds");
        if (!sj.is_array()) throw ConfigError("seeds: must be an array of non-negative integers");
        c.seeds.clear();
        for (const auto& v : sj) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                throw ConfigError("seeds: must be an array of non-negative integers");
            }
            c.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    read(j, "strict_eq3", c.strict_eq3);
    read(j, "parallel", c.parallel);
    read(j, "log_margins", c.log_margins);
    read(j, "output", c.output);
    read(j, "save_prototypes", c.save_prototypes);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["protocol"] = to_string(c.protocol);
    j["dataset"] = c.dataset == DatasetKind::blobs ? "blobs" : "idx";
    j["num_classes"] = c.num_classes;
    j["input_dim"] = c.input_dim;
    j["per_class"] = c.per_class;
    j["spread"] = c.spread;
    j["idx_images"] = c.idx_images;
    j["idx_labels"] = c.idx_labels;
    j["partition"] = c.partition == PartitionKind::dirichlet ? "dirichlet" : "pathological";
    j["beta"] = c.beta;
    j["classes_per_client"] = c.classes_per_client;
    j["train_fraction"] = c.train_fraction;
    j["clients"] = c.clients;
    j["participation"] = c.participation;
    j["rounds"] = c.rounds;
    j["local_epochs"] = c.local_epochs;
    j["batch_size"] = c.batch_size;
    j["lr"] = c.lr;
    j["lambda"] = c.lambda;
    j["gamma"] = c.gamma;
    j["margin"] = margin_name(c.margin);
    j["tau"] = c.tau;
    j["fixed_margin"] = c.fixed_margin;
    j["server_epochs"] = c.server_epochs;
    j["server_lr"] = c.server_lr;
    j["server_transform"] = c.server_transform;
    j["server_hidden"] = c.server_hidden;
    j["feature_dim"] = c.feature_dim;
    j["model_group"] = c.model_group;
    j["seeds"] = c.seeds;
    j["strict_eq3"] = c.strict_eq3;
    j["parallel"] = c.parallel;
    j["log_margins"] = c.log_margins;
    j["output"] = c.output;
    j["save_prototypes"] = c.save_prototypes;
    return j;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "': expected key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    auto parsed = nlohmann::json::parse(value, nullptr, false);
    j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
}

}  // namespace fedtgp

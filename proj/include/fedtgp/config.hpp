#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedtgp/server_tgp.hpp"

namespace fedtgp {

enum class Protocol { fedproto, fedtgp, feddistill };
enum class DatasetKind { blobs, idx };
enum class PartitionKind { pathological, dirichlet };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& s);

// Full experiment description. Defaults follow the reference setup: batch 10,
// lr 0.01, one local epoch, lambda 0.1, tau 100, 100 server epochs, full
// participation, Dirichlet beta 0.1, 75/25 split.
struct RunConfig {
    Protocol protocol = Protocol::fedtgp;

    DatasetKind dataset = DatasetKind::blobs;
    std::size_t num_classes = 10;
    std::size_t input_dim = 32;
    std::size_t per_class = 200;
    double spread = 0.3;
    std::string idx_images;
    std::string idx_labels;

    PartitionKind partition = PartitionKind::dirichlet;
    double beta = 0.1;
    std::size_t classes_per_client = 2;
    double train_fraction = 0.75;

    std::size_t clients = 20;
    double participation = 1.0;
    std::size_t rounds = 100;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 10;
    double lr = 0.01;
    double lambda = 0.1;
    double gamma = 1.0;

    MarginMode margin = MarginMode::adaptive;
    double tau = 100.0;
    double fixed_margin = 1.0;
    std::size_t server_epochs = 100;
    double server_lr = 0.01;
    bool server_transform = true;
    std::size_t server_hidden = 0;  // 0 means feature_dim

    std::size_t feature_dim = 32;
    std::string model_group = "HtMLP_8";

    std::vector<std::uint64_t> seeds = {0, 1, 2};
    bool strict_eq3 = false;
    bool parallel = false;
    bool log_margins = false;
    std::string output = "metrics.csv";
    std::string save_prototypes;

    // Throws ConfigError naming the first offending field.
    void validate() const;
    MarginPolicy margin_policy() const;
};

// Flat JSON object; missing keys take defaults, unknown keys are rejected.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// Applies "key=value" (value parsed as JSON, falling back to a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace fedtgp

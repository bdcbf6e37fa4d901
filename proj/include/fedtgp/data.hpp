#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "fedtgp/tensor.hpp"

namespace fedtgp {

struct Dataset {
    Tensor features;                  // N×D
    std::vector<std::size_t> labels;  // N
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const { return features.cols(); }

    // Throws ValidationError when labels, row count or finiteness are off.
    void validate() const;
    std::vector<std::size_t> class_totals() const;
};

// Rows of ds selected by idx, in the given order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> idx);

// Assignment of dataset indices to clients.
struct Partition {
    std::size_t num_classes = 0;
    std::vector<std::vector<std::size_t>> client_indices;
    // counts[i][c] = |D_{i,c}|
    std::vector<std::vector<std::size_t>> counts;
    // Per-class proportions over clients drawn by the partitioner (C×M); empty when unused.
    std::vector<std::vector<double>> class_proportions;

    std::size_t num_clients() const noexcept { return client_indices.size(); }
    // Classes with at least one sample on client i.
    std::vector<std::size_t> client_classes(std::size_t i) const;
    std::size_t total_assigned() const;

    // Builds counts from labels. Index lists are taken as given.
    static Partition from_indices(const Dataset& ds, std::vector<std::vector<std::size_t>> client_indices);
};

// Class means used by synth_blobs for this seed (C×D, unit rows).
Tensor blob_means(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

// Gaussian blobs around class means drawn uniformly on the unit sphere.
Dataset synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                    std::uint64_t seed);

// IDX (MNIST family) image + label files. Pixels are scaled by 1/255 and
// flattened row-major.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Each client holds exactly classes_per_client classes; each class is split
// into unbalanced disjoint shards among its holders.
Partition partition_pathological(const Dataset& ds, std::size_t clients, std::size_t classes_per_client,
                                 std::uint64_t seed);

// Per class, proportions over clients ~ Dir(beta), rounded by largest remainder.
Partition partition_dirichlet(const Dataset& ds, std::size_t clients, double beta, std::uint64_t seed);

// Per-client stratified split. Classes with a single sample go to train.
std::pair<Partition, Partition> train_test_split(const Dataset& ds, const Partition& part, double train_fraction,
                                                 std::uint64_t seed);

// Integer counts summing exactly to total, proportional to weights.
// Largest fractional parts receive the leftover units; ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

// One Dirichlet(alpha·1) draw of the given dimension via normalized Gamma draws.
template <typename Rng>
std::vector<double> sample_dirichlet(Rng& rng, std::size_t dim, double alpha);

}  // namespace fedtgp

#include "fedtgp/detail/dirichlet.ipp"

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedtgp/data.hpp"
#include "fedtgp/models.hpp"
#include "fedtgp/tensor.hpp"

namespace fedtgp {

inline constexpr std::int64_t kGlobalOwner = -1;

// Per-class K-dimensional vectors with a presence mask. Rows whose mask bit is
// clear hold zeros and are never read.
class PrototypeSet {
public:
    PrototypeSet() = default;
    PrototypeSet(std::size_t num_classes, std::size_t dim, std::int64_t owner = kGlobalOwner);

    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t dim() const noexcept { return dim_; }
    std::int64_t owner() const noexcept { return owner_; }
    void set_owner(std::int64_t owner) noexcept { owner_ = owner; }

    bool present(std::size_t c) const { return present_.at(c) != 0; }
    std::size_t present_count() const;
    std::vector<std::size_t> present_classes() const;

    std::span<const double> row(std::size_t c) const;
    // Marks c present and stores v.
    void set_row(std::size_t c, std::span<const double> v);
    void clear_row(std::size_t c);

    // |D_{i,c}|; zero for global sets.
    std::size_t count(std::size_t c) const { return counts_.at(c); }
    void set_count(std::size_t c, std::size_t n) { counts_.at(c) = n; }

    // All C rows as a C×K matrix (masked rows are zero).
    Tensor matrix() const;

    // Doubles put on the wire: K per present class.
    std::size_t wire_floats() const noexcept { return dim_ * present_count(); }

    // Flat record: owner, C, K, mask bits, counts, present rows row-major.
    // Integers and doubles are little-endian.
    std::vector<std::uint8_t> serialize() const;
    static PrototypeSet deserialize(std::span<const std::uint8_t> bytes);

    friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;

private:
    std::size_t num_classes_ = 0;
    std::size_t dim_ = 0;
    std::int64_t owner_ = kGlobalOwner;
    std::vector<std::uint8_t> present_;
    std::vector<std::size_t> counts_;
    std::vector<double> values_;
};

// Class means of the extractor output over a client's training split.
PrototypeSet compute_prototypes(ClientModel& model, const Dataset& train, std::int64_t owner = 0);

// Count-weighted mean per class over the clients presenting it. With
// strict_eq3 every weight is further divided by the number of contributing
// clients, so the weights sum to that reciprocal instead of 1.
PrototypeSet weighted_average(std::span<const PrototypeSet> client_sets, bool strict_eq3 = false);

// Minimum distance from class c's prototype to any other present class.
double prototype_margin(const PrototypeSet& set, std::size_t c);

// Largest prototype_margin(set, c) over sets presenting c with >= 2 classes.
std::optional<double> max_client_margin(std::span<const PrototypeSet> client_sets, std::size_t c);

// Divides by the largest present value; all-zero input stays zero.
std::vector<std::optional<double>> normalize_margins(std::span<const std::optional<double>> values);

// Closest present prototype per feature row; ties go to the lowest class id.
std::vector<std::size_t> nearest_prototype_predict(const PrototypeSet& globals, const Tensor& features);

}  // namespace fedtgp

#include "fedtgp/prototypes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "fedtgp/errors.hpp"

namespace fedtgp {

PrototypeSet::PrototypeSet(std::size_t num_classes, std::size_t dim, std::int64_t owner)
    : num_classes_(num_classes),
      dim_(dim),
      owner_(owner),
      present_(num_classes, 0),
      counts_(num_classes, 0),
      values_(num_classes * dim, 0.0) {}

std::size_t PrototypeSet::present_count() const {
    return static_cast<std::size_t>(std::count(present_.begin(), present_.end(), std::uint8_t{1}));
}

std::vector<std::size_t> PrototypeSet::present_classes() const {
    std::vector<std::size_t> cs;
    for (std::size_t c = 0; c < num_classes_; ++c)
        if (present_[c]) cs.push_back(c);
    return cs;
}

std::span<const double> PrototypeSet::row(std::size_t c) const {
    if (c >= num_classes_) throw DimensionError("class " + std::to_string(c) + " out of range");
    return {values_.data() + c * dim_, dim_};
}

void PrototypeSet::set_row(std::size_t c, std::span<const double> v) {
    if (c >= num_classes_) throw DimensionError("class " + std::to_string(c) + " out of range");
    if (v.size() != dim_) {
        throw DimensionError("prototype of length " + std::to_string(v.size()) + " for dimension " +
                             std::to_string(dim_));
    }
    for (double x : v) {
        if (!std::isfinite(x)) throw ValidationError("prototype row for class " + std::to_string(c) + " is not finite");
    }
    std::copy(v.begin(), v.end(), values_.begin() + static_cast<std::ptrdiff_t>(c * dim_));
    present_[c] = 1;
}

void PrototypeSet::clear_row(std::size_t c) {
    std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(c * dim_), dim_, 0.0);
    present_.at(c) = 0;
    counts_.at(c) = 0;
}

Tensor PrototypeSet::matrix() const { return Tensor::matrix(num_classes_, dim_, values_); }

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) throw FormatError("prototype record truncated", off);
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

std::vector<std::uint8_t> PrototypeSet::serialize() const {
    std::vector<std::uint8_t> out;
    put<std::int64_t>(out, owner_);
    put<std::uint64_t>(out, num_classes_);
    put<std::uint64_t>(out, dim_);
    std::vector<std::uint8_t> bits((num_classes_ + 7) / 8, 0);
    for (std::size_t c = 0; c < num_classes_; ++c)
        if (present_[c]) bits[c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
    out.insert(out.end(), bits.begin(), bits.end());
    for (auto n : counts_) put<std::uint64_t>(out, n);
    for (std::size_t c = 0; c < num_classes_; ++c)
        if (present_[c])
            for (double v : row(c)) put<double>(out, v);
    return out;
}

PrototypeSet PrototypeSet::deserialize(std::span<const std::uint8_t> bytes) {
    std::size_t off = 0;
    const auto owner = take<std::int64_t>(bytes, off);
    const auto classes = take<std::uint64_t>(bytes, off);
    const auto dim = take<std::uint64_t>(bytes, off);
    PrototypeSet set(classes, dim, owner);
    const std::size_t nbits = (classes + 7) / 8;
    if (off + nbits > bytes.size()) throw FormatError("prototype mask truncated", off);
    std::vector<std::uint8_t> bits(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(off + nbits));
    off += nbits;
    for (std::size_t c = 0; c < classes; ++c) set.counts_[c] = take<std::uint64_t>(bytes, off);
    std::vector<double> row(dim);
    for (std::size_t c = 0; c < classes; ++c) {
        if (!(bits[c / 8] & (1u << (c % 8)))) continue;
        for (auto& v : row) v = take<double>(bytes, off);
        set.set_row(c, row);
    }
    if (off != bytes.size()) throw FormatError("trailing bytes after prototype record", off);
    return set;
}

PrototypeSet compute_prototypes(ClientModel& model, const Dataset& train, std::int64_t owner) {
    if (train.size() == 0) throw ValidationError("compute_prototypes: empty training split");
    if (train.dim() != model.input_dim()) {
        throw DimensionError("compute_prototypes: data width " + std::to_string(train.dim()) +
                             " but model expects " + std::to_string(model.input_dim()));
    }
    const std::size_t C = model.num_classes(), K = model.feature_dim();
    const Tensor feats = model.features(train.features);
    std::vector<double> sums(C * K, 0.0);
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t r = 0; r < train.size(); ++r) {
        const auto y = train.labels[r];
        ++counts[y];
        for (std::size_t k = 0; k < K; ++k) sums[y * K + k] += feats(r, k);
    }
    PrototypeSet set(C, K, owner);
    std::vector<double> mean(K);
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0) continue;
        for (std::size_t k = 0; k < K; ++k) mean[k] = sums[c * K + k] / static_cast<double>(counts[c]);
        set.set_row(c, mean);
        set.set_count(c, counts[c]);
    }
    return set;
}

PrototypeSet weighted_average(std::span<const PrototypeSet> client_sets, bool strict_eq3) {
    if (client_sets.empty()) throw ValidationError("weighted_average: no client prototypes");
    const std::size_t C = client_sets.front().num_classes(), K = client_sets.front().dim();
    for (const auto& s : client_sets) {
        if (s.num_classes() != C || s.dim() != K) throw DimensionError("weighted_average: inconsistent C or K");
    }
    PrototypeSet out(C, K, kGlobalOwner);
    std::vector<double> acc(K);
    for (std::size_t c = 0; c < C; ++c) {
        std::size_t total = 0, holders = 0;
        for (const auto& s : client_sets)
            if (s.present(c)) {
                total += s.count(c);
                ++holders;
            }
        if (holders == 0) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto& s : client_sets) {
            if (!s.present(c)) continue;
            // Sets without counts (count 0) fall back to equal weights.
            double w = total > 0 ? static_cast<double>(s.count(c)) / static_cast<double>(total)
                                 : 1.0 / static_cast<double>(holders);
            if (strict_eq3) w /= static_cast<double>(holders);
            auto r = s.row(c);
            for (std::size_t k = 0; k < K; ++k) acc[k] += w * r[k];
        }
        out.set_row(c, acc);
        out.set_count(c, total);
    }
    return out;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
    double ss = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(ss);
}

}  // namespace

double prototype_margin(const PrototypeSet& set, std::size_t c) {
    if (!set.present(c)) throw ValidationError("prototype_margin: class " + std::to_string(c) + " not present");
    if (set.present_count() < 2) throw ValidationError("prototype_margin: fewer than 2 classes present");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < set.num_classes(); ++o)
        if (o != c && set.present(o)) best = std::min(best, distance(set.row(c), set.row(o)));
    return best;
}

std::optional<double> max_client_margin(std::span<const PrototypeSet> client_sets, std::size_t c) {
    std::optional<double> best;
    for (const auto& s : client_sets) {
        if (c >= s.num_classes() || !s.present(c) || s.present_count() < 2) continue;
        const double m = prototype_margin(s, c);
        if (!best || m > *best) best = m;
    }
    return best;
}

std::vector<std::optional<double>> normalize_margins(std::span<const std::optional<double>> values) {
    double mx = 0.0;
    for (const auto& v : values)
        if (v) mx = std::max(mx, *v);
    std::vector<std::optional<double>> out(values.begin(), values.end());
    if (mx > 0.0)
        for (auto& v : out)
            if (v) *v /= mx;
    return out;
}

std::vector<std::size_t> nearest_prototype_predict(const PrototypeSet& globals, const Tensor& features) {
    const auto classes = globals.present_classes();
    if (classes.empty()) throw ValidationError("nearest_prototype_predict: no global prototypes present");
    if (features.cols() != globals.dim()) {
        throw DimensionError("nearest_prototype_predict: features " + features.shape_string() +
                             " vs prototype dim " + std::to_string(globals.dim()));
    }
    std::vector<std::size_t> out(features.rows());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = classes.front();
        for (auto c : classes) {
            const double d = distance(features.row(r), globals.row(c));
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        out[r] = arg;
    }
    return out;
}

}  // namespace fedtgp

#include "fedtgp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "fedtgp/errors.hpp"
#include "fedtgp/rng.hpp"

namespace fedtgp {

void Dataset::validate() const {
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (features.rank() != 2 || features.rows() != labels.size()) {
        throw ValidationError("dataset has " + std::to_string(labels.size()) + " labels but features " +
                              features.shape_string());
    }
    for (auto y : labels) {
        if (y >= num_classes) {
            throw ValidationError("label " + std::to_string(y) + " >= num_classes " + std::to_string(num_classes));
        }
    }
    for (double v : features.values()) {
        if (!std::isfinite(v)) throw ValidationError("dataset contains a non-finite feature");
    }
}

std::vector<std::size_t> Dataset::class_totals() const {
    std::vector<std::size_t> totals(num_classes, 0);
    for (auto y : labels) ++totals[y];
    return totals;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    if (idx.empty()) return out;
    const std::size_t d = ds.dim();
    std::vector<double> values(idx.size() * d);
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto src = ds.features.row(idx[r]);
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(r * d));
        out.labels.push_back(ds.labels[idx[r]]);
    }
    out.features = Tensor::matrix(idx.size(), d, std::move(values));
    return out;
}

std::vector<std::size_t> Partition::client_classes(std::size_t i) const {
    std::vector<std::size_t> classes;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[i][c] > 0) classes.push_back(c);
    return classes;
}

std::size_t Partition::total_assigned() const {
    std::size_t n = 0;
    for (const auto& idx : client_indices) n += idx.size();
    return n;
}

Partition Partition::from_indices(const Dataset& ds, std::vector<std::vector<std::size_t>> client_indices) {
    Partition p;
    p.num_classes = ds.num_classes;
    p.client_indices = std::move(client_indices);
    p.counts.assign(p.client_indices.size(), std::vector<std::size_t>(ds.num_classes, 0));
    for (std::size_t i = 0; i < p.client_indices.size(); ++i)
        for (auto idx : p.client_indices[i]) ++p.counts[i][ds.labels.at(idx)];
    return p;
}

Tensor blob_means(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    Rng mean_rng = make_rng(seed, "blobs/means");
    std::normal_distribution<double> unit(0.0, 1.0);
    Tensor means({num_classes, dim});
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto row = means.row(c);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& v : row) {
                v = unit(mean_rng);
                norm += v * v;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& v : row) v /= norm;
    }
    return means;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t dim, std::size_t per_class, double spread,
                    std::uint64_t seed) {
    if (num_classes < 2) throw ValidationError("synth_blobs: need at least 2 classes");
    if (dim < 2) throw ValidationError("synth_blobs: dim must be >= 2");
    if (per_class < 1) throw ValidationError("synth_blobs: per_class must be >= 1");
    if (!(spread > 0.0)) throw ValidationError("synth_blobs: spread must be > 0");

    const Tensor means = blob_means(num_classes, dim, seed);
    Rng noise_rng = make_rng(seed, "blobs/noise");
    std::normal_distribution<double> unit(0.0, 1.0);

    Dataset ds;
    ds.num_classes = num_classes;
    const std::size_t n = num_classes * per_class;
    std::vector<double> values(n * dim);
    ds.labels.reserve(n);
    for (std::size_t c = 0; c < num_classes; ++c)
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t r = c * per_class + s;
            for (std::size_t j = 0; j < dim; ++j) values[r * dim + j] = means(c, j) + spread * unit(noise_rng);
            ds.labels.push_back(c);
        }
    ds.features = Tensor::matrix(n, dim, std::move(values));
    return ds;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
    if (offset + 4 > bytes.size()) throw FormatError(what + ": truncated header", bytes.size());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    const std::string img_name = images.string();
    const std::string lab_name = labels.string();

    const auto img_magic = read_be32(img, 0, img_name);
    if (img_magic != kImageMagic) {
        throw FormatError(img_name + ": bad image magic " + std::to_string(img_magic), 0);
    }
    const std::size_t count = read_be32(img, 4, img_name);
    const std::size_t rows = read_be32(img, 8, img_name);
    const std::size_t cols = read_be32(img, 12, img_name);
    const std::size_t pixels = rows * cols;
    if (count == 0 || pixels == 0) throw FormatError(img_name + ": empty image set", 4);
    if (img.size() < 16 + count * pixels) {
        throw FormatError(img_name + ": truncated pixel data, expected " + std::to_string(16 + count * pixels) +
                              " bytes",
                          img.size());
    }

    const auto lab_magic = read_be32(lab, 0, lab_name);
    if (lab_magic != kLabelMagic) {
        throw FormatError(lab_name + ": bad label magic " + std::to_string(lab_magic), 0);
    }
    const std::size_t label_count = read_be32(lab, 4, lab_name);
    if (label_count != count) {
        throw FormatError(lab_name + ": " + std::to_string(label_count) + " labels for " + std::to_string(count) +
                              " images",
                          4);
    }
    if (lab.size() < 8 + count) {
        throw FormatError(lab_name + ": truncated label data", lab.size());
    }

    Dataset ds;
    std::vector<double> values(count * pixels);
    for (std::size_t i = 0; i < count * pixels; ++i) values[i] = static_cast<double>(img[16 + i]) / 255.0;
    ds.features = Tensor::matrix(count, pixels, std::move(values));
    ds.labels.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = std::max<std::size_t>(max_label + 1, 2);
    return ds;
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
    const std::size_t n = weights.size();
    std::vector<std::size_t> out(n, 0);
    if (n == 0) return out;
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> frac(n, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = wsum > 0.0 ? weights[i] / wsum * static_cast<double>(total) : 0.0;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - std::floor(exact);
        assigned += out[i];
    }
    // Floating error can push the floor sum one over; take it back from the smallest fractions.
    while (assigned > total) {
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i)
            if (out[i] > 0 && (pick == n || frac[i] < frac[pick])) pick = i;
        --out[pick];
        --assigned;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % n, ++assigned) ++out[order[k]];
    return out;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    return by_class;
}

Partition finish(const Dataset& ds, std::vector<std::vector<std::size_t>> client_indices,
                 std::vector<std::vector<double>> proportions) {
    for (auto& idx : client_indices) std::sort(idx.begin(), idx.end());
    Partition p = Partition::from_indices(ds, std::move(client_indices));
    p.class_proportions = std::move(proportions);
    return p;
}

}  // namespace

Partition partition_pathological(const Dataset& ds, std::size_t clients, std::size_t classes_per_client,
                                 std::uint64_t seed) {
    const std::size_t C = ds.num_classes;
    if (clients == 0) throw ConfigError("clients: must be >= 1");
    if (classes_per_client == 0 || classes_per_client > C) {
        throw ConfigError("classes_per_client: must be in [1, " + std::to_string(C) + "]");
    }
    if (clients * classes_per_client < C) {
        throw ConfigError("classes_per_client: clients * classes_per_client (" +
                          std::to_string(clients * classes_per_client) + ") must cover all " + std::to_string(C) +
                          " classes");
    }

    Rng rng = make_rng(seed, "partition/pathological");
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    // Consecutive windows over a cyclic class order: distinct within a client,
    // and M·s >= C windows cover every class.
    std::vector<std::vector<std::size_t>> holders(C);
    for (std::size_t i = 0; i < clients; ++i)
        for (std::size_t j = 0; j < classes_per_client; ++j) holders[perm[(i * classes_per_client + j) % C]].push_back(i);

    auto by_class = indices_by_class(ds);
    std::vector<std::vector<std::size_t>> client_indices(clients);
    std::vector<std::vector<double>> proportions(C, std::vector<double>(clients, 0.0));
    for (std::size_t c = 0; c < C; ++c) {
        auto& idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto& hs = holders[c];
        const auto q = sample_dirichlet(rng, hs.size(), 0.5);
        for (std::size_t h = 0; h < hs.size(); ++h) proportions[c][hs[h]] = q[h];

        // One guaranteed sample per holder when possible, the rest by proportion.
        const std::size_t base = idx.size() >= hs.size() ? 1 : 0;
        auto shard = largest_remainder(q, idx.size() - base * hs.size());
        std::size_t cursor = 0;
        for (std::size_t h = 0; h < hs.size(); ++h) {
            const std::size_t take = shard[h] + base;
            auto& dst = client_indices[hs[h]];
            dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                       idx.begin() + static_cast<std::ptrdiff_t>(cursor + take));
            cursor += take;
        }
    }
    return finish(ds, std::move(client_indices), std::move(proportions));
}

Partition partition_dirichlet(const Dataset& ds, std::size_t clients, double beta, std::uint64_t seed) {
    if (!(beta > 0.0)) throw ConfigError("beta: Dirichlet concentration must be > 0");
    if (clients < 2) throw ConfigError("clients: Dirichlet partition needs at least 2 clients");

    Rng rng = make_rng(seed, "partition/dirichlet");
    auto by_class = indices_by_class(ds);
    std::vector<std::vector<std::size_t>> client_indices(clients);
    std::vector<std::vector<double>> proportions(ds.num_classes);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        proportions[c] = sample_dirichlet(rng, clients, beta);
        const auto take = largest_remainder(proportions[c], idx.size());
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            auto& dst = client_indices[i];
            dst.insert(dst.end(), idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                       idx.begin() + static_cast<std::ptrdiff_t>(cursor + take[i]));
            cursor += take[i];
        }
    }
    return finish(ds, std::move(client_indices), std::move(proportions));
}

std::pair<Partition, Partition> train_test_split(const Dataset& ds, const Partition& part, double train_fraction,
                                                 std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction: must be in (0,1)");
    }
    std::vector<std::vector<std::size_t>> train(part.num_clients()), test(part.num_clients());
    for (std::size_t i = 0; i < part.num_clients(); ++i) {
        Rng rng = make_rng(seed, "split", {i});
        std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
        for (auto idx : part.client_indices[i]) by_class[ds.labels[idx]].push_back(idx);
        for (auto& idx : by_class) {
            if (idx.empty()) continue;
            std::shuffle(idx.begin(), idx.end(), rng);
            std::size_t n_train = idx.size();
            if (idx.size() >= 2) {
                const auto want = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
                n_train = std::clamp<std::size_t>(want, 1, idx.size() - 1);
            }
            train[i].insert(train[i].end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
            test[i].insert(test[i].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        }
    }
    return {finish(ds, std::move(train), {}), finish(ds, std::move(test), {})};
}

}  // namespace fedtgp

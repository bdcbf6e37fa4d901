#include "fixtures.hpp"

#include <cmath>
#include <random>

#include "fedtgp/rng.hpp"

namespace fedtgp::fixtures {

std::vector<PrototypeSet> displaced_clouds(std::uint64_t seed, const CloudParams& p) {
    Rng rng = make_rng(seed, "fixture/clouds");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> count(5, 50);

    std::vector<double> dir(p.dim);
    double norm = 0.0;
    for (auto& v : dir) {
        v = normal(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v *= p.offset / norm;

    std::vector<PrototypeSet> sets;
    for (std::size_t client = 0; client < 2; ++client) {
        const double side = client == 0 ? 1.0 : -1.0;
        PrototypeSet s(p.num_classes, p.dim, static_cast<std::int64_t>(client));
        std::vector<double> row(p.dim);
        for (std::size_t c = 0; c < p.num_classes; ++c) {
            const std::size_t axis = (c + client) % p.num_classes % p.dim;
            for (std::size_t k = 0; k < p.dim; ++k) row[k] = side * dir[k] + p.jitter * normal(rng);
            row[axis] += p.radius;
            s.set_row(c, row);
            s.set_count(c, count(rng));
        }
        sets.push_back(std::move(s));
    }
    return sets;
}

}  // namespace fedtgp::fixtures

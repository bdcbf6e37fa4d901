#pragma once

#include <algorithm>
#include <random>

namespace fedtgp {

template <typename Rng>
std::vector<double> sample_dirichlet(Rng& rng, std::size_t dim, double alpha) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> q(dim);
    // Tiny alphas can underflow every component to zero; redraw in that case.
    for (int attempt = 0; attempt < 64; ++attempt) {
        double total = 0.0;
        for (auto& v : q) {
            v = gamma(rng);
            total += v;
        }
        if (total > 0.0) {
            for (auto& v : q) v /= total;
            return q;
        }
    }
    std::uniform_int_distribution<std::size_t> pick(0, dim - 1);
    std::fill(q.begin(), q.end(), 0.0);
    q[pick(rng)] = 1.0;
    return q;
}

}  // namespace fedtgp

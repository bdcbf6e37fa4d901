#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedtgp/prototypes.hpp"

namespace fedtgp::fixtures {

// Two clients whose prototype clouds sit around different centers and use a
// shifted class layout:
//
//   client A: P^c = a + r·e_c
//   client B: P^c = b + r·e_{(c+1) mod C}
//
// with a = −b a random direction of length `offset`, plus Gaussian jitter
// (std `jitter`) on every coordinate and random sample counts. Each client's
// own classes are r·√2 apart, while averaging the two clouds puts neighbouring
// classes only r/√2 apart, so weighted averaging shrinks every margin.
struct CloudParams {
    std::size_t num_classes = 10;
    std::size_t dim = 16;
    double radius = 1.0;
    double offset = 3.0;
    double jitter = 0.05;
};

std::vector<PrototypeSet> displaced_clouds(std::uint64_t seed, const CloudParams& p = {});

}  // namespace fedtgp::fixtures

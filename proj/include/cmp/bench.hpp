#pragma once

#include <cstddef>

#include "cmp/prior_store.hpp"

namespace cmp {

struct TimingStat {
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::size_t runs = 0;
};

struct BenchResult {
    TimingStat sampling;      // prior_features over the full grid
    TimingStat fusion;        // conv_fuse of sensor and prior maps
    TimingStat full_forward;  // toy detector forward including both
    std::size_t grid_n = 0;

    double sampling_fraction() const {
        return full_forward.mean_ms > 0.0 ? sampling.mean_ms / full_forward.mean_ms : 0.0;
    }
};

// Desk-scale latency profile: times grid_n x grid_n prior sampling on the
// packed store (sampling_runs timed runs after warmup), the conv fusion step,
// and a small convolutional "detector" forward that contains both.
// Single-threaded.
BenchResult bench_prior(const BinaryPriorStore& store, std::size_t grid_n,
                        std::size_t sampling_runs = 100);

}  // namespace cmp

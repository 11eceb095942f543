#include "cmp/bench.hpp"

#include <chrono>
#include <cmath>

#include "cmp/fusion.hpp"
#include "cmp/geo.hpp"

namespace cmp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
TimingStat time_runs(std::size_t runs, std::size_t warmup, F&& body) {
    for (std::size_t i = 0; i < warmup; ++i) body();
    TimingStat stat;
    stat.runs = runs;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < runs; ++i) {
        const auto t0 = Clock::now();
        body();
        const double ms = ms_since(t0);
        sum += ms;
        sum2 += ms * ms;
    }
    stat.mean_ms = sum / runs;
    const double var = sum2 / runs - stat.mean_ms * stat.mean_ms;
    stat.std_ms = std::sqrt(std::max(var, 0.0));
    return stat;
}

}  // namespace

BenchResult bench_prior(const BinaryPriorStore& store, std::size_t grid_n,
                        std::size_t sampling_runs) {
    if (grid_n < 1) throw ConfigError("bench: grid size must be >= 1");

    const Rect cov = store.coverage();
    GridSpec spec;
    spec.h = spec.w = grid_n;
    spec.extent = 0.5 * std::min(cov.width(), cov.height());
    const Tensor ego = make_ego_grid(spec);
    const Pose2 pose = Pose2::from_angle(
        0.0, {0.5 * (cov.min_x + cov.max_x), 0.5 * (cov.min_y + cov.max_y)});
    const Tensor grid = apply_pose(ego, pose);

    BenchResult res;
    res.grid_n = grid_n;

    volatile double sink = 0.0;  // keep the sampled features live
    res.sampling = time_runs(sampling_runs, 3, [&] {
        Tensor x = prior_features(store, grid);
        sink = sink + x.data[0];
    });

    // Toy detector around the prior: two 3x3 conv blocks on a 32-channel
    // sensor map, conv fusion with the prior, then a per-cell linear head.
    const std::size_t cs = 32;
    const std::size_t classes = 8;
    Rng rng(42);
    Tensor sensor({grid_n, grid_n, cs});
    for (double& v : sensor.data) v = rng.normal();
    Tensor k1({3, 3, cs, cs}), k2({3, 3, cs, cs}), kb1({cs}), kb2({cs});
    for (double& v : k1.data) v = 0.05 * rng.normal();
    for (double& v : k2.data) v = 0.05 * rng.normal();
    ConvFusionWeights fuse = ConvFusionWeights::create(grid_n, grid_n, cs, store.output_dim());
    fuse.init(rng);
    DenseLayer head = DenseLayer::create(classes, cs);
    for (double& v : head.w.data) v = 0.05 * rng.normal();

    Tensor x_prior = prior_features(store, grid);
    res.fusion = time_runs(10, 1, [&] {
        Tensor fused = conv_fuse(sensor, x_prior, fuse);
        sink = sink + fused.data[0];
    });

    res.full_forward = time_runs(5, 1, [&] {
        Tensor prior = prior_features(store, grid);
        Tensor a = conv3x3_apply(sensor, k1, kb1);
        relu_inplace(a.data.data(), a.numel());
        Tensor b = conv3x3_apply(a, k2, kb2);
        relu_inplace(b.data.data(), b.numel());
        Tensor fused = conv_fuse(b, prior, fuse);
        Tensor flat({grid_n * grid_n, cs});
        flat.data = fused.data;
        Tensor logits({grid_n * grid_n, classes});
        dense_forward(flat.data.data(), grid_n * grid_n, cs, head, logits.data.data());
        sink = sink + logits.data[0];
    });
    return res;
}

}  // namespace cmp

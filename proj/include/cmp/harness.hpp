#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmp/fusion.hpp"
#include "cmp/prior_store.hpp"
#include "cmp/raster.hpp"

namespace cmp {

// ---------------------------------------------------------------------------
// Synthetic maps
// ---------------------------------------------------------------------------

// Procedural stand-in for real map annotations: background (class 0), wide
// road ribbons (class 1, coarse structure) and 1-cell divider lines along the
// road centers (class 2, fine structure). Extra classes beyond 3 become
// crossing patches on the roads.
struct SynthSpec {
    double area_m = 1000.0;  // side length of the square map, meters
    int classes = 3;
    double meters_per_cell = 0.5;
};

RasterMap synth_map(std::uint64_t seed, const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct IouReport {
    std::vector<double> per_class;  // NaN for classes absent from both rasters
    double mean = 0.0;
};

// IoU_k = |pred=k and gt=k| / |pred=k or gt=k|; classes absent from both
// rasters are excluded from the mean.
IouReport miou(const RasterMap& pred, const RasterMap& gt,
               std::optional<int> ignore_class = std::nullopt);

// ---------------------------------------------------------------------------
// Prior-only reconstruction (capacity ablation harness)
// ---------------------------------------------------------------------------

// 2-layer probe decoding prior features into class logits.
struct ProbeWeights {
    DenseLayer l1;  // 128 -> hidden
    DenseLayer l2;  // hidden -> K

    static ProbeWeights create(std::size_t in, std::size_t hidden, std::size_t classes);
    void init(Rng& rng);
};

struct ReconstructionConfig {
    HashGridConfig grid;
    std::size_t probe_hidden = 64;
    std::size_t epochs = 10;
    std::size_t steps_per_epoch = 200;
    std::size_t batch_size = 256;
    AdamWConfig opt;                 // lr field is the schedule's base_lr
    std::size_t warmup_steps = 100;
    bool binarized = true;
    bool jitter = true;              // sample positions inside cells, not centers
    double class_weight_min = 0.1;
    double class_weight_max = 10.0;
    std::size_t eval_stride = 1;     // 1 = evaluate every cell
    std::uint64_t seed = 1;

    void validate() const;
};

struct ReconstructionResult {
    PriorModel model;
    ProbeWeights probe;
    std::vector<double> class_weights;
    std::vector<double> epoch_loss;
    IouReport iou;
};

// Joint optimization of the embedding tables (straight-through when
// binarized), projection MLP and probe on (coordinate -> class) samples drawn
// from the raster. Throws TrainingError with the step index on divergence.
ReconstructionResult train_reconstruction(const RasterMap& map, const ReconstructionConfig& cfg);

// Class-prediction raster from a trained model, for miou().
RasterMap predict_map(const PriorModel& model, const ProbeWeights& probe, const RasterMap& like,
                      bool binarized, std::size_t eval_stride = 1);

// Inverse-frequency class weights, clipped to [lo, hi].
std::vector<double> inverse_frequency_weights(const RasterMap& map, double lo, double hi);

// ---------------------------------------------------------------------------
// Toy fusion / degradation experiment
// ---------------------------------------------------------------------------

struct FusionExperimentConfig {
    std::uint64_t seed = 7;
    SynthSpec map;                       // defaults overridden below
    HashGridConfig grid;                 // small-capacity prior
    std::size_t window = 32;             // fused grid h = w, cells
    std::size_t sensor_channels = 8;
    double occlusion = 0.4;              // fraction of cells with blanked sensor evidence
    double noise_sigma = 0.3;
    double mask_ratio = 0.25;
    std::size_t mask_patch = 8;
    std::size_t steps = 500;
    AdamWConfig opt;
    std::size_t warmup_steps = 50;
    std::size_t eval_windows = 48;

    FusionExperimentConfig() {
        map.area_m = 192.0;
        map.meters_per_cell = 1.0;
        grid.table_capacity = 1ull << 12;
        opt.lr = 3e-3;
    }
};

struct FusionExperimentResult {
    double with_prior = 0.0;          // trained fusion model, live prior
    double without_prior = 0.0;       // baseline trained with the prior withheld
    double fully_masked_prior = 0.0;  // trained fusion model, prior replaced by mask token
};

// Per-cell classification from noisy, partially occluded synthetic "sensor"
// features fused with the learned prior via conv_fuse, trained end-to-end
// with random patch masking. Deterministic given the seed.
FusionExperimentResult toy_fusion_experiment(const FusionExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Traversal analysis
// ---------------------------------------------------------------------------

struct TrajectorySample {
    double timestamp = 0.0;  // seconds
    Vec2 position;           // meters, global frame
    std::string scene_id;
};

struct Scene {
    std::string id;
    std::vector<TrajectorySample> samples;  // time-sorted
};

inline constexpr double kMergeMaxGapSeconds = 10.0;
inline constexpr double kMergeMaxGapMeters = 10.0;
inline constexpr double kTraversalRadiusMeters = 50.0;

// Collapses fragmented recordings: scenes A and B merge when B starts less
// than 10 s after A ends and within 10 m of A's last position. The relation
// closes transitively and the result is independent of input order. Merged
// scenes take the lexicographically smallest member id.
std::vector<Scene> merge_trajectories(const std::vector<Scene>& scenes);

// Number of distinct scenes with any sample strictly within `radius` meters
// of the query.
std::size_t traversal_count(const TrajectorySample& query, const std::vector<Scene>& scenes,
                            double radius = kTraversalRadiusMeters);

}  // namespace cmp

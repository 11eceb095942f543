#pragma once

#include <string>

#include "cmp/harness.hpp"

namespace cmp {

// Plain-text key=value run configuration. Carries every training and model
// hyperparameter with its reference default; the CLI layers flag overrides on
// top. Unknown keys are rejected.
struct RunConfig {
    HashGridConfig grid;             // table_size, levels, feature_dim, finest/coarsest_cell
    AdamWConfig opt;                 // lr, beta1, beta2, weight_decay
    std::size_t warmup_steps = 500;
    std::size_t epochs = 24;
    std::size_t steps_per_epoch = 500;
    std::size_t batch_size = 8;
    double mask_ratio = 0.25;
    std::size_t mask_patch = 8;
    std::size_t probe_hidden = 64;
    bool binarized = true;
    bool jitter = true;
    std::size_t eval_stride = 1;
    std::uint64_t seed = 1;
    double area_m = 1000.0;
    int classes = 3;
    double meters_per_cell = 0.5;
    double class_weight_min = 0.1;
    double class_weight_max = 10.0;
    double traversal_radius = 50.0;

    static RunConfig from_file(const std::string& path);

    // Applies one key=value assignment; throws ConfigError on unknown keys or
    // unparsable values.
    void set(const std::string& key, const std::string& value);

    // Full key=value dump, one per line, for run logging.
    std::string resolved() const;

    ReconstructionConfig reconstruction() const;
    SynthSpec synth() const;
};

}  // namespace cmp

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmp/grid_codec.hpp"
#include "cmp/quantize.hpp"
#include "cmp/tensor.hpp"
#include "cmp/tensor_nn.hpp"

namespace cmp {

// What to do with query points outside the coverage rectangle.
enum class CoveragePolicy {
    kZero,   // substitute a zero feature vector (default)
    kError,  // throw OutOfCoverageError
};

// Live, trainable prior: embedding tables plus the projection MLP.
struct PriorModel {
    HashGridParams grid;
    MlpWeights mlp;

    static PriorModel create(const HashGridConfig& cfg, const Rect& coverage, Rng& rng,
                             std::size_t out_dim = 128);
};

// Saved state for prior_features_backward.
struct PriorContext {
    std::vector<Vec2> points;           // compacted in-coverage query points
    std::vector<std::size_t> scatter;   // row index in the output map per point
    Tensor encoded;                     // [n_in, L*d]
    MlpContext mlp;
    std::size_t map_h = 0, map_w = 0;
};

struct PriorGrads {
    std::vector<std::vector<double>> tables;
    MlpGrads mlp;

    static PriorGrads zeros_like(const PriorModel& model);
    void zero();
};

// grid -> encode_multiscale -> MLP, per query point. With binarized=true the
// tables are read through sign() (training-mode forward; the straight-through
// backward is encode_level_backward either way).
Tensor prior_features(const PriorModel& model, const Tensor& grid_global /*[h,w,2]*/,
                      bool binarized, CoveragePolicy policy = CoveragePolicy::kZero,
                      PriorContext* ctx = nullptr);

// Accumulates table and MLP grads from upstream [h,w,out].
void prior_features_backward(const Tensor& upstream, const PriorModel& model,
                             const PriorContext& ctx, PriorGrads& grads);

// ---------------------------------------------------------------------------
// Frozen store ("CMPP" format)
// ---------------------------------------------------------------------------
//
// Layout, all integers little-endian:
//   magic "CMPP" | u16 version | u16 L | u64 T | u16 d
//   f64 s_min | f64 growth | 4x f64 coverage (min_x min_y max_x max_y)
//   per level: u64 table_len | u8 dense
//   per level: packed table bytes (table_len * ceil(d/8))
//   6 MLP arrays (l1.w l1.b l2.w l2.b l3.w l3.b): u64 len | f32[len]
//   u64 extra array count, then per array: u64 len | f32[len]
//
// The extra section carries whatever companion weights the producer needs
// (fusion weights, the CLI's reconstruction probe).

inline constexpr std::uint16_t kPriorFormatVersion = 1;

class BinaryPriorStore {
public:
    // Loaded stores are immutable; queries are safe for concurrent readers.
    const std::vector<LevelConfig>& levels() const { return levels_; }
    int feature_dim() const { return feature_dim_; }
    std::uint64_t table_capacity() const { return table_capacity_; }
    double finest_cell() const { return finest_cell_; }
    double growth() const { return growth_; }
    const Rect& coverage() const { return coverage_; }
    const std::vector<PackedTable>& packed_tables() const { return packed_; }
    const MlpWeights& mlp() const { return mlp_; }
    const std::vector<std::vector<float>>& extra_arrays() const { return extra_; }
    std::size_t output_dim() const { return mlp_.out_dim(); }

private:
    friend BinaryPriorStore freeze(const PriorModel&, const std::vector<const Tensor*>&);
    friend BinaryPriorStore load(std::istream&);

    std::vector<LevelConfig> levels_;
    int feature_dim_ = 0;
    std::uint64_t table_capacity_ = 0;
    double finest_cell_ = 1.0;
    double growth_ = 1.0;
    Rect coverage_;
    std::vector<PackedTable> packed_;
    MlpWeights mlp_;  // exactly representable in f32
    std::vector<std::vector<float>> extra_;
};

// Binarizes and packs the tables, narrows the MLP (and any extra tensors) to
// f32. Deterministic: identical inputs give identical stores and bytes.
BinaryPriorStore freeze(const PriorModel& model, const std::vector<const Tensor*>& extra = {});

void save(const BinaryPriorStore& store, std::ostream& sink);
BinaryPriorStore load(std::istream& source);

void save_file(const BinaryPriorStore& store, const std::string& path);
BinaryPriorStore load_file(const std::string& path);

// Query on packed tables; element-exact match with the live binarized path on
// the same (frozen) parameters.
Tensor prior_features(const BinaryPriorStore& store, const Tensor& grid_global,
                      CoveragePolicy policy = CoveragePolicy::kZero);

}  // namespace cmp

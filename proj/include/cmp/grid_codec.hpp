#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cmp/error.hpp"
#include "cmp/rng.hpp"

namespace cmp {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Axis-aligned world rectangle in meters.
struct Rect {
    double min_x = 0.0;
    double min_y = 0.0;
    double max_x = 0.0;
    double max_y = 0.0;

    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
    double area_m2() const { return width() * height(); }
    double area_km2() const { return area_m2() * 1e-6; }
    bool contains(Vec2 p) const {
        return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
    }
};

// One resolution level of the multi-scale encoding.
//
// Levels whose covering lattice has fewer vertices than the hash-table
// capacity store a dense, directly indexed table instead of hashing. The
// lattice spans vertex coordinates [vx0, vx0+nvx) x [vy0, vy0+nvy); for dense
// levels table_len == nvx * nvy.
struct LevelConfig {
    int level_index = 0;
    double cell_side = 1.0;       // alpha_l, meters
    std::uint64_t table_len = 0;  // embedding rows; == T for hashed levels
    bool dense = false;
    std::int64_t vx0 = 0;
    std::int64_t vy0 = 0;
    std::uint64_t nvx = 0;
    std::uint64_t nvy = 0;
};

// Structural configuration of the hash grid.
struct HashGridConfig {
    std::uint64_t table_capacity = 1ull << 16;  // T, must be a power of two
    int levels = 4;                             // L
    int feature_dim = 8;                        // d
    double finest_cell = 1.0;                   // meters
    double coarsest_cell = 25.0;                // meters
};

// Full state of the multi-level encoding: per-level layout plus the
// real-valued embedding tables (row-major table_len x d per level).
struct HashGridParams {
    std::vector<LevelConfig> levels;
    int feature_dim = 8;
    std::uint64_t table_capacity = 0;
    double finest_cell = 1.0;
    double growth = 1.0;  // cell_side ratio between consecutive levels
    Rect coverage;
    std::vector<std::vector<double>> tables;

    static HashGridParams create(const HashGridConfig& cfg, const Rect& coverage);

    // Builds the same geometry from the serialized header fields. Keeping a
    // single code path for cell sides makes reload bit-exact.
    static HashGridParams create_from_growth(std::uint64_t table_capacity, int levels,
                                             int feature_dim, double finest_cell, double growth,
                                             const Rect& coverage);

    std::size_t level_count() const { return levels.size(); }
    std::size_t output_dim() const { return levels.size() * static_cast<std::size_t>(feature_dim); }

    // Uniform init in [-scale, scale], the usual choice for hash embeddings.
    void init_tables(Rng& rng, double scale = 1e-4);

    // Checks the structural invariants; throws ConfigError on violation.
    void validate() const;
};

// The four lattice vertices around a query point and their bilinear weights.
// Corner order: (c, c), (c+1x, c), (c, c+1y), (c+1x, c+1y).
struct CornerSet {
    std::array<std::int64_t, 4> cx;
    std::array<std::int64_t, 4> cy;
    std::array<double, 4> weight;
};

// Table row for an integer lattice coordinate. Hashed levels mix with
// pi_0 = 1, pi_1 = 2654435761 (XOR, two's-complement wrap, power-of-two
// mask). Dense levels index row-major relative to the coverage origin and
// throw OutOfCoverageError outside the lattice.
std::uint64_t hash_index(std::int64_t yx, std::int64_t yy, const LevelConfig& level);

CornerSet corner_coords(Vec2 x, const LevelConfig& level);

// Bilinear blend of the four corner rows. The same routine serves real-valued
// and binarized tables; `fetch(row, dst)` writes the d-vector for a table row.
template <typename RowFetch>
void encode_level_with(Vec2 x, const LevelConfig& level, int d, RowFetch&& fetch, double* out) {
    const CornerSet cs = corner_coords(x, level);
    for (int j = 0; j < d; ++j) out[j] = 0.0;
    double row[256];
    for (int k = 0; k < 4; ++k) {
        const double w = cs.weight[k];
        const std::uint64_t idx = hash_index(cs.cx[k], cs.cy[k], level);
        fetch(idx, row);
        for (int j = 0; j < d; ++j) out[j] += w * row[j];
    }
}

// encode_level over a plain row-major table (real-valued or sign-valued).
void encode_level(Vec2 x, const LevelConfig& level, std::span<const double> table, int d,
                  double* out);

// Accumulates d(loss)/d(table rows) for one level: grad_table[row_k] +=
// weight_k * upstream. This is also the straight-through backward for
// binarized tables (sign treated as identity).
void encode_level_backward(Vec2 x, const LevelConfig& level, int d,
                           std::span<const double> upstream, std::span<double> grad_table);

// Concatenation of encode_level over all levels in ascending order; `out`
// holds L*d values.
void encode_multiscale(Vec2 x, const HashGridParams& params, double* out);

// Same, reading sign(table) instead of the raw entries.
void encode_multiscale_binarized(Vec2 x, const HashGridParams& params, double* out);

void encode_multiscale_backward(Vec2 x, const HashGridParams& params,
                                std::span<const double> upstream,
                                std::vector<std::vector<double>>& grad_tables);

}  // namespace cmp

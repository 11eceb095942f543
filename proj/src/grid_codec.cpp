#include "cmp/grid_codec.hpp"

#include <cmath>
#include <limits>

namespace cmp {

namespace {

constexpr std::uint64_t kPi1 = 2654435761ull;

bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

// Vertex range of the lattice covering [lo, hi]: corners used by bilinear
// interpolation run from floor(lo/a) to floor(hi/a)+1 inclusive.
void lattice_span(double lo, double hi, double cell, std::int64_t& v0, std::uint64_t& count) {
    v0 = static_cast<std::int64_t>(std::floor(lo / cell));
    const std::int64_t v1 = static_cast<std::int64_t>(std::floor(hi / cell)) + 1;
    count = static_cast<std::uint64_t>(v1 - v0 + 1);
}

}  // namespace

HashGridParams HashGridParams::create(const HashGridConfig& cfg, const Rect& coverage) {
    if (cfg.levels > 1 && !(cfg.coarsest_cell > cfg.finest_cell))
        throw ConfigError("hash grid: coarsest_cell must exceed finest_cell");
    const double growth =
        cfg.levels > 1 ? std::pow(cfg.coarsest_cell / cfg.finest_cell, 1.0 / (cfg.levels - 1))
                       : 1.0;
    return create_from_growth(cfg.table_capacity, cfg.levels, cfg.feature_dim, cfg.finest_cell,
                              growth, coverage);
}

HashGridParams HashGridParams::create_from_growth(std::uint64_t table_capacity, int levels,
                                                  int feature_dim, double finest_cell,
                                                  double growth, const Rect& coverage) {
    if (levels < 1) throw ConfigError("hash grid: levels must be >= 1");
    if (feature_dim < 1) throw ConfigError("hash grid: feature_dim must be >= 1");
    if (!is_power_of_two(table_capacity))
        throw ConfigError("hash grid: table_capacity must be a power of two");
    if (!(finest_cell > 0.0)) throw ConfigError("hash grid: finest_cell must be > 0");
    if (levels > 1 && !(growth > 1.0)) throw ConfigError("hash grid: growth must exceed 1");
    if (!(coverage.width() > 0.0) || !(coverage.height() > 0.0))
        throw ConfigError("hash grid: coverage rectangle must have positive extent");

    HashGridParams p;
    p.feature_dim = feature_dim;
    p.table_capacity = table_capacity;
    p.finest_cell = finest_cell;
    p.growth = growth;
    p.coverage = coverage;

    for (int l = 0; l < levels; ++l) {
        LevelConfig lvl;
        lvl.level_index = l;
        lvl.cell_side = finest_cell * std::pow(p.growth, l);
        lattice_span(coverage.min_x, coverage.max_x, lvl.cell_side, lvl.vx0, lvl.nvx);
        lattice_span(coverage.min_y, coverage.max_y, lvl.cell_side, lvl.vy0, lvl.nvy);
        const std::uint64_t vertex_count = lvl.nvx * lvl.nvy;
        lvl.dense = vertex_count < table_capacity;
        lvl.table_len = lvl.dense ? vertex_count : table_capacity;
        p.levels.push_back(lvl);
    }

    p.tables.resize(p.levels.size());
    for (std::size_t l = 0; l < p.levels.size(); ++l)
        p.tables[l].assign(p.levels[l].table_len * static_cast<std::size_t>(p.feature_dim), 0.0);
    return p;
}

void HashGridParams::init_tables(Rng& rng, double scale) {
    for (auto& t : tables)
        for (double& v : t) v = rng.uniform(-scale, scale);
}

void HashGridParams::validate() const {
    if (levels.empty()) throw ConfigError("hash grid: no levels");
    if (feature_dim < 1) throw ConfigError("hash grid: feature_dim must be >= 1");
    double prev = 0.0;
    for (const auto& lvl : levels) {
        if (!(lvl.cell_side > prev))
            throw ConfigError("hash grid: cell sides must strictly increase with level");
        prev = lvl.cell_side;
        if (lvl.table_len < 1 || lvl.table_len > table_capacity)
            throw ConfigError("hash grid: table_len out of range");
        if (!lvl.dense && !is_power_of_two(lvl.table_len))
            throw ConfigError("hash grid: hashed level table_len must be a power of two");
    }
    if (tables.size() != levels.size()) throw ConfigError("hash grid: table count mismatch");
    for (std::size_t l = 0; l < levels.size(); ++l) {
        if (tables[l].size() != levels[l].table_len * static_cast<std::size_t>(feature_dim))
            throw ConfigError("hash grid: table size mismatch at level " + std::to_string(l));
        for (double v : tables[l])
            if (!std::isfinite(v)) throw ConfigError("hash grid: non-finite table entry");
    }
}

std::uint64_t hash_index(std::int64_t yx, std::int64_t yy, const LevelConfig& level) {
    if (level.dense) {
        const std::int64_t rx = yx - level.vx0;
        const std::int64_t ry = yy - level.vy0;
        if (rx < 0 || ry < 0 || rx >= static_cast<std::int64_t>(level.nvx) ||
            ry >= static_cast<std::int64_t>(level.nvy))
            throw OutOfCoverageError("dense lookup outside coverage lattice");
        return static_cast<std::uint64_t>(rx) * level.nvy + static_cast<std::uint64_t>(ry);
    }
    const std::uint64_t ux = static_cast<std::uint64_t>(yx);
    const std::uint64_t uy = static_cast<std::uint64_t>(yy);
    return (ux ^ (uy * kPi1)) & (level.table_len - 1);
}

CornerSet corner_coords(Vec2 x, const LevelConfig& level) {
    if (!std::isfinite(x.x) || !std::isfinite(x.y))
        throw ConfigError("corner_coords: non-finite query point");
    const double sx = x.x / level.cell_side;
    const double sy = x.y / level.cell_side;
    const double fx = std::floor(sx);
    const double fy = std::floor(sy);
    const std::int64_t cx = static_cast<std::int64_t>(fx);
    const std::int64_t cy = static_cast<std::int64_t>(fy);
    const double tx = sx - fx;
    const double ty = sy - fy;

    CornerSet out;
    out.cx = {cx, cx + 1, cx, cx + 1};
    out.cy = {cy, cy, cy + 1, cy + 1};
    out.weight = {(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty};
    return out;
}

void encode_level(Vec2 x, const LevelConfig& level, std::span<const double> table, int d,
                  double* out) {
    const double* base = table.data();
    encode_level_with(
        x, level, d,
        [base, d](std::uint64_t row, double* dst) {
            const double* src = base + row * static_cast<std::uint64_t>(d);
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        },
        out);
}

void encode_level_backward(Vec2 x, const LevelConfig& level, int d,
                           std::span<const double> upstream, std::span<double> grad_table) {
    const CornerSet cs = corner_coords(x, level);
    for (int k = 0; k < 4; ++k) {
        const std::uint64_t idx = hash_index(cs.cx[k], cs.cy[k], level);
        double* dst = grad_table.data() + idx * static_cast<std::uint64_t>(d);
        const double w = cs.weight[k];
        for (int j = 0; j < d; ++j) dst[j] += w * upstream[j];
    }
}

void encode_multiscale(Vec2 x, const HashGridParams& params, double* out) {
    const int d = params.feature_dim;
    for (std::size_t l = 0; l < params.levels.size(); ++l)
        encode_level(x, params.levels[l], params.tables[l], d, out + l * d);
}

void encode_multiscale_binarized(Vec2 x, const HashGridParams& params, double* out) {
    const int d = params.feature_dim;
    for (std::size_t l = 0; l < params.levels.size(); ++l) {
        const double* base = params.tables[l].data();
        encode_level_with(
            x, params.levels[l], d,
            [base, d](std::uint64_t row, double* dst) {
                const double* src = base + row * static_cast<std::uint64_t>(d);
                for (int j = 0; j < d; ++j) dst[j] = src[j] < 0.0 ? -1.0 : 1.0;
            },
            out + l * d);
    }
}

void encode_multiscale_backward(Vec2 x, const HashGridParams& params,
                                std::span<const double> upstream,
                                std::vector<std::vector<double>>& grad_tables) {
    const int d = params.feature_dim;
    for (std::size_t l = 0; l < params.levels.size(); ++l)
        encode_level_backward(x, params.levels[l], d, upstream.subspan(l * d, d),
                              grad_tables[l]);
}

}  // namespace cmp

#include "cmp/prior_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cmp/serial.hpp"

namespace cmp {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', 'P'};

struct QueryPlan {
    std::vector<Vec2> points;
    std::vector<std::size_t> scatter;
    std::size_t h = 0, w = 0;
};

QueryPlan plan_query(const Tensor& grid_global, const Rect& coverage, CoveragePolicy policy) {
    require_shape(grid_global.shape.size() == 3 && grid_global.shape[2] == 2,
                  "prior query grid must be [h,w,2]");
    QueryPlan plan;
    plan.h = grid_global.shape[0];
    plan.w = grid_global.shape[1];
    const std::size_t n = plan.h * plan.w;
    plan.points.reserve(n);
    plan.scatter.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 p{grid_global.data[2 * i], grid_global.data[2 * i + 1]};
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw ConfigError("prior query: non-finite grid point");
        if (!coverage.contains(p)) {
            if (policy == CoveragePolicy::kError)
                throw OutOfCoverageError("prior query point outside coverage");
            continue;  // zero-feature substitution
        }
        plan.points.push_back(p);
        plan.scatter.push_back(i);
    }
    return plan;
}

}  // namespace

PriorModel PriorModel::create(const HashGridConfig& cfg, const Rect& coverage, Rng& rng,
                              std::size_t out_dim) {
    PriorModel m;
    m.grid = HashGridParams::create(cfg, coverage);
    m.grid.init_tables(rng);
    m.mlp = MlpWeights::create(m.grid.output_dim(), 32, 32, out_dim);
    m.mlp.init(rng);
    return m;
}

PriorGrads PriorGrads::zeros_like(const PriorModel& model) {
    PriorGrads g;
    g.tables.resize(model.grid.tables.size());
    for (std::size_t l = 0; l < model.grid.tables.size(); ++l)
        g.tables[l].assign(model.grid.tables[l].size(), 0.0);
    g.mlp = MlpGrads::zeros_like(model.mlp);
    return g;
}

void PriorGrads::zero() {
    for (auto& t : tables) std::fill(t.begin(), t.end(), 0.0);
    mlp.zero();
}

Tensor prior_features(const PriorModel& model, const Tensor& grid_global, bool binarized,
                      CoveragePolicy policy, PriorContext* ctx) {
    QueryPlan plan = plan_query(grid_global, model.grid.coverage, policy);
    const std::size_t n = plan.points.size();
    const std::size_t enc_dim = model.grid.output_dim();

    Tensor encoded({n, enc_dim});
    for (std::size_t i = 0; i < n; ++i) {
        double* row = encoded.data.data() + i * enc_dim;
        if (binarized)
            encode_multiscale_binarized(plan.points[i], model.grid, row);
        else
            encode_multiscale(plan.points[i], model.grid, row);
    }

    MlpContext local_ctx;
    MlpContext& mctx = ctx ? ctx->mlp : local_ctx;
    Tensor projected = mlp_apply(encoded, model.mlp, mctx);

    const std::size_t out_dim = model.mlp.out_dim();
    Tensor out({plan.h, plan.w, out_dim});
    for (std::size_t i = 0; i < n; ++i)
        std::memcpy(out.data.data() + plan.scatter[i] * out_dim,
                    projected.data.data() + i * out_dim, out_dim * sizeof(double));

    if (ctx) {
        ctx->points = std::move(plan.points);
        ctx->scatter = std::move(plan.scatter);
        ctx->encoded = std::move(encoded);
        ctx->map_h = plan.h;
        ctx->map_w = plan.w;
    }
    return out;
}

void prior_features_backward(const Tensor& upstream, const PriorModel& model,
                             const PriorContext& ctx, PriorGrads& grads) {
    const std::size_t out_dim = model.mlp.out_dim();
    require_shape(upstream.shape ==
                      std::vector<std::size_t>({ctx.map_h, ctx.map_w, out_dim}),
                  "prior_features_backward upstream shape");

    const std::size_t n = ctx.points.size();
    Tensor d_proj({n, out_dim});
    for (std::size_t i = 0; i < n; ++i)
        std::memcpy(d_proj.data.data() + i * out_dim,
                    upstream.data.data() + ctx.scatter[i] * out_dim, out_dim * sizeof(double));

    Tensor d_encoded = mlp_backward(d_proj, model.mlp, ctx.mlp, grads.mlp);

    const std::size_t enc_dim = model.grid.output_dim();
    for (std::size_t i = 0; i < n; ++i)
        encode_multiscale_backward(ctx.points[i], model.grid,
                                   std::span<const double>(d_encoded.data).subspan(i * enc_dim, enc_dim),
                                   grads.tables);
}

// ---------------------------------------------------------------------------
// Freeze / save / load
// ---------------------------------------------------------------------------

BinaryPriorStore freeze(const PriorModel& model, const std::vector<const Tensor*>& extra) {
    model.grid.validate();
    for (const Tensor* t : {&model.mlp.l1.w, &model.mlp.l1.b, &model.mlp.l2.w, &model.mlp.l2.b,
                            &model.mlp.l3.w, &model.mlp.l3.b})
        t->require_finite("freeze: MLP weights");

    BinaryPriorStore s;
    s.levels_ = model.grid.levels;
    s.feature_dim_ = model.grid.feature_dim;
    s.table_capacity_ = model.grid.table_capacity;
    s.finest_cell_ = model.grid.finest_cell;
    s.growth_ = model.grid.growth;
    s.coverage_ = model.grid.coverage;

    for (std::size_t l = 0; l < model.grid.tables.size(); ++l) {
        const auto signs = binarize(model.grid.tables[l]);
        s.packed_.push_back(
            pack_bits(signs, model.grid.levels[l].table_len, model.grid.feature_dim));
    }

    s.mlp_ = model.mlp;
    snap_to_f32(s.mlp_.l1.w);
    snap_to_f32(s.mlp_.l1.b);
    snap_to_f32(s.mlp_.l2.w);
    snap_to_f32(s.mlp_.l2.b);
    snap_to_f32(s.mlp_.l3.w);
    snap_to_f32(s.mlp_.l3.b);

    for (const Tensor* t : extra) {
        t->require_finite("freeze: extra weights");
        std::vector<float> arr(t->numel());
        for (std::size_t i = 0; i < t->numel(); ++i) arr[i] = static_cast<float>(t->data[i]);
        s.extra_.push_back(std::move(arr));
    }
    return s;
}

namespace {

void write_f32_array(std::ostream& out, const Tensor& t) {
    write_u64(out, t.numel());
    for (double v : t.data) write_f32(out, static_cast<float>(v));
}

constexpr std::uint64_t kMaxArrayLen = 1ull << 32;

Tensor read_f32_array(std::istream& in, const char* what) {
    const std::uint64_t n = read_u64(in, what);
    if (n > kMaxArrayLen)
        throw FormatError(std::string("load: implausible array length in ") + what);
    Tensor t({static_cast<std::size_t>(n)});
    for (std::uint64_t i = 0; i < n; ++i)
        t.data[i] = static_cast<double>(read_f32(in, what));
    return t;
}

}  // namespace

void save(const BinaryPriorStore& store, std::ostream& sink) {
    sink.write(kMagic, 4);
    write_u16(sink, kPriorFormatVersion);
    write_u16(sink, static_cast<std::uint16_t>(store.levels().size()));
    write_u64(sink, store.table_capacity());
    write_u16(sink, static_cast<std::uint16_t>(store.feature_dim()));
    write_f64(sink, store.finest_cell());
    write_f64(sink, store.growth());
    write_f64(sink, store.coverage().min_x);
    write_f64(sink, store.coverage().min_y);
    write_f64(sink, store.coverage().max_x);
    write_f64(sink, store.coverage().max_y);
    for (const auto& lvl : store.levels()) {
        write_u64(sink, lvl.table_len);
        write_u8(sink, lvl.dense ? 1 : 0);
    }
    for (const auto& p : store.packed_tables()) write_bytes(sink, p.bits);
    write_f32_array(sink, store.mlp().l1.w);
    write_f32_array(sink, store.mlp().l1.b);
    write_f32_array(sink, store.mlp().l2.w);
    write_f32_array(sink, store.mlp().l2.b);
    write_f32_array(sink, store.mlp().l3.w);
    write_f32_array(sink, store.mlp().l3.b);
    write_u64(sink, store.extra_arrays().size());
    for (const auto& arr : store.extra_arrays()) {
        write_u64(sink, arr.size());
        for (float v : arr) write_f32(sink, v);
    }
    if (!sink) throw FormatError("save: sink write failed");
}

BinaryPriorStore load(std::istream& source) {
    char magic[4] = {};
    source.read(magic, 4);
    if (!source || std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagicError("load: bad magic, not a CMPP prior store");
    const std::uint16_t version = read_u16(source, "version");
    if (version != kPriorFormatVersion)
        throw VersionError("load: unsupported format version " + std::to_string(version));

    BinaryPriorStore s;
    const std::uint16_t level_count = read_u16(source, "level count");
    s.table_capacity_ = read_u64(source, "table capacity");
    s.feature_dim_ = read_u16(source, "feature dim");
    s.finest_cell_ = read_f64(source, "finest cell");
    s.growth_ = read_f64(source, "growth");
    s.coverage_.min_x = read_f64(source, "coverage");
    s.coverage_.min_y = read_f64(source, "coverage");
    s.coverage_.max_x = read_f64(source, "coverage");
    s.coverage_.max_y = read_f64(source, "coverage");
    if (level_count == 0 || s.feature_dim_ < 1)
        throw FormatError("load: invalid level count or feature dim");
    if (s.table_capacity_ > (1ull << 40))
        throw FormatError("load: implausible table capacity");

    // Rebuild the per-level lattice geometry from the header, then check it
    // against the stored table lengths.
    const HashGridParams geometry = HashGridParams::create_from_growth(
        s.table_capacity_, level_count, s.feature_dim_, s.finest_cell_, s.growth_, s.coverage_);
    s.levels_ = geometry.levels;

    for (std::uint16_t l = 0; l < level_count; ++l) {
        const std::uint64_t table_len = read_u64(source, "level record");
        const std::uint8_t dense = read_u8(source, "level record");
        if (table_len != s.levels_[l].table_len || (dense != 0) != s.levels_[l].dense)
            throw FormatError("load: level record inconsistent with header geometry");
    }
    for (std::uint16_t l = 0; l < level_count; ++l) {
        PackedTable p;
        p.table_len = s.levels_[l].table_len;
        p.feature_dim = s.feature_dim_;
        read_bytes(source, p.bits, p.byte_size(), "packed table");
        s.packed_.push_back(std::move(p));
    }

    Tensor arrays[6];
    for (auto& a : arrays) a = read_f32_array(source, "mlp weights");
    const std::size_t in_dim = static_cast<std::size_t>(level_count) * s.feature_dim_;
    const std::size_t h1 = arrays[1].numel();
    const std::size_t h2 = arrays[3].numel();
    const std::size_t out = arrays[5].numel();
    if (h1 == 0 || h2 == 0 || out == 0 || arrays[0].numel() != h1 * in_dim ||
        arrays[2].numel() != h2 * h1 || arrays[4].numel() != out * h2)
        throw FormatError("load: MLP array lengths are inconsistent");
    s.mlp_ = MlpWeights::create(in_dim, h1, h2, out);
    s.mlp_.l1.w.data = std::move(arrays[0].data);
    s.mlp_.l1.b.data = std::move(arrays[1].data);
    s.mlp_.l2.w.data = std::move(arrays[2].data);
    s.mlp_.l2.b.data = std::move(arrays[3].data);
    s.mlp_.l3.w.data = std::move(arrays[4].data);
    s.mlp_.l3.b.data = std::move(arrays[5].data);

    const std::uint64_t extra_count = read_u64(source, "extra array count");
    if (extra_count > 4096) throw FormatError("load: implausible extra array count");
    for (std::uint64_t i = 0; i < extra_count; ++i) {
        const std::uint64_t n = read_u64(source, "extra array");
        if (n > kMaxArrayLen) throw FormatError("load: implausible array length in extra array");
        std::vector<float> arr(n);
        for (std::uint64_t j = 0; j < n; ++j) arr[j] = read_f32(source, "extra array");
        s.extra_.push_back(std::move(arr));
    }
    return s;
}

void save_file(const BinaryPriorStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save: cannot open " + path);
    save(store, out);
}

BinaryPriorStore load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("load: cannot open " + path);
    return load(in);
}

namespace {

void ensure_scratch(Tensor& t, std::size_t rows, std::size_t cols) {
    if (t.shape.size() != 2 || t.shape[0] != rows || t.shape[1] != cols)
        t = Tensor({rows, cols});
}

}  // namespace

Tensor prior_features(const BinaryPriorStore& store, const Tensor& grid_global,
                      CoveragePolicy policy) {
    QueryPlan plan = plan_query(grid_global, store.coverage(), policy);
    const std::size_t n = plan.points.size();
    const int d = store.feature_dim();
    const std::size_t enc_dim = store.levels().size() * static_cast<std::size_t>(d);
    const MlpWeights& mlp = store.mlp();
    const std::size_t out_dim = store.output_dim();

    // Query-serving hot path: reuse scratch across calls, every row is fully
    // overwritten below.
    thread_local Tensor encoded, a1, a2, projected;
    ensure_scratch(encoded, n, enc_dim);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = encoded.data.data() + i * enc_dim;
        for (std::size_t l = 0; l < store.levels().size(); ++l) {
            const PackedTable& packed = store.packed_tables()[l];
            encode_level_with(
                plan.points[i], store.levels()[l], d,
                [&packed](std::uint64_t r, double* dst) { packed.unpack_row(r, dst); },
                row + l * d);
        }
    }

    ensure_scratch(a1, n, mlp.l1.out_dim());
    dense_forward(encoded.data.data(), n, mlp.in_dim(), mlp.l1, a1.data.data());
    relu_inplace(a1.data.data(), a1.numel());
    ensure_scratch(a2, n, mlp.l2.out_dim());
    dense_forward(a1.data.data(), n, mlp.l2.in_dim(), mlp.l2, a2.data.data());
    relu_inplace(a2.data.data(), a2.numel());

    Tensor out({plan.h, plan.w, out_dim});
    if (n == plan.h * plan.w) {
        // Full coverage: the scatter is the identity, project in place.
        dense_forward(a2.data.data(), n, mlp.l3.in_dim(), mlp.l3, out.data.data());
        return out;
    }
    ensure_scratch(projected, n, out_dim);
    dense_forward(a2.data.data(), n, mlp.l3.in_dim(), mlp.l3, projected.data.data());
    for (std::size_t i = 0; i < n; ++i)
        std::memcpy(out.data.data() + plan.scatter[i] * out_dim,
                    projected.data.data() + i * out_dim, out_dim * sizeof(double));
    return out;
}

}  // namespace cmp

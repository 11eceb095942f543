#include "cmp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>

#include "cmp/geo.hpp"

namespace cmp {

// ---------------------------------------------------------------------------
// Synthetic maps
// ---------------------------------------------------------------------------

namespace {

struct RoadSpec {
    bool horizontal = true;
    double offset = 0.0;     // base position of the centerline, meters
    double amplitude = 0.0;  // sinusoidal wobble, meters
    double wavelength = 1.0;
    double phase = 0.0;
    double half_width = 4.0;

    double center(double along) const {
        return offset + amplitude * std::sin(6.283185307179586 * along / wavelength + phase);
    }
};

}  // namespace

RasterMap synth_map(std::uint64_t seed, const SynthSpec& spec) {
    if (spec.area_m < 100.0) throw ConfigError("synth_map: area must be >= 100 m per side");
    if (spec.classes < 3) throw ConfigError("synth_map: needs at least 3 classes");
    if (!(spec.meters_per_cell > 0.0)) throw ConfigError("synth_map: meters_per_cell must be > 0");

    const auto side = static_cast<std::uint32_t>(std::llround(spec.area_m / spec.meters_per_cell));
    RasterMap map = RasterMap::create(side, side, static_cast<std::uint16_t>(spec.classes),
                                      spec.meters_per_cell);

    Rng rng(seed);
    const int n_roads = std::max<int>(3, static_cast<int>(std::llround(spec.area_m / 180.0)));
    std::vector<RoadSpec> roads;
    for (int r = 0; r < n_roads; ++r) {
        RoadSpec road;
        road.horizontal = (r % 2) == 0;
        road.offset = rng.uniform(0.15, 0.85) * spec.area_m;
        road.amplitude = rng.uniform(5.0, 15.0);
        road.wavelength = rng.uniform(300.0, 700.0);
        road.phase = rng.uniform(0.0, 6.283185307179586);
        road.half_width = rng.uniform(6.0, 12.0);
        roads.push_back(road);
    }

    const double mpc = spec.meters_per_cell;
    auto paint_cross = [&](std::uint32_t along, const RoadSpec& road, double c, int cls,
                           double half) {
        const auto lo = static_cast<std::int64_t>(std::floor((c - half) / mpc));
        const auto hi = static_cast<std::int64_t>(std::floor((c + half) / mpc));
        for (std::int64_t i = std::max<std::int64_t>(lo, 0);
             i <= std::min<std::int64_t>(hi, side - 1); ++i) {
            const auto cell = static_cast<std::uint32_t>(i);
            if (road.horizontal)
                map.at(along, cell) = static_cast<std::uint8_t>(cls);
            else
                map.at(cell, along) = static_cast<std::uint8_t>(cls);
        }
    };

    // Road ribbons first, then the 1-cell divider down each centerline.
    for (const auto& road : roads)
        for (std::uint32_t a = 0; a < side; ++a)
            paint_cross(a, road, road.center((a + 0.5) * mpc), 1, road.half_width);
    for (const auto& road : roads)
        for (std::uint32_t a = 0; a < side; ++a) {
            const double c = road.center((a + 0.5) * mpc);
            const auto cell = static_cast<std::int64_t>(std::floor(c / mpc));
            if (cell < 0 || cell >= side) continue;
            if (road.horizontal)
                map.at(a, static_cast<std::uint32_t>(cell)) = 2;
            else
                map.at(static_cast<std::uint32_t>(cell), a) = 2;
        }

    // Extra classes become crossing patches straddling a road.
    for (int cls = 3; cls < spec.classes; ++cls) {
        const int patches = 3;
        for (int p = 0; p < patches; ++p) {
            const RoadSpec& road = roads[rng.below(roads.size())];
            const double along = rng.uniform(0.2, 0.8) * spec.area_m;
            const double across = road.center(along);
            const double half = 4.0;
            const auto a_lo = static_cast<std::int64_t>(std::floor((along - half) / mpc));
            const auto a_hi = static_cast<std::int64_t>(std::floor((along + half) / mpc));
            for (std::int64_t a = std::max<std::int64_t>(a_lo, 0);
                 a <= std::min<std::int64_t>(a_hi, side - 1); ++a)
                paint_cross(static_cast<std::uint32_t>(a), road, across, cls, half);
        }
    }
    return map;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

IouReport miou(const RasterMap& pred, const RasterMap& gt, std::optional<int> ignore_class) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ShapeError("miou: raster extents differ");
    const int k = std::max<int>(pred.classes, gt.classes);

    std::vector<std::size_t> inter(static_cast<std::size_t>(k), 0);
    std::vector<std::size_t> uni(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const int p = pred.data[i];
        const int g = gt.data[i];
        if (p == g) {
            inter[static_cast<std::size_t>(p)] += 1;
            uni[static_cast<std::size_t>(p)] += 1;
        } else {
            uni[static_cast<std::size_t>(p)] += 1;
            uni[static_cast<std::size_t>(g)] += 1;
        }
    }

    IouReport rep;
    rep.per_class.assign(static_cast<std::size_t>(k), std::nan(""));
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < k; ++c) {
        if (ignore_class && *ignore_class == c) continue;
        if (uni[static_cast<std::size_t>(c)] == 0) continue;  // absent from both
        const double iou = static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                           static_cast<double>(uni[static_cast<std::size_t>(c)]);
        rep.per_class[static_cast<std::size_t>(c)] = iou;
        sum += iou;
        counted += 1;
    }
    rep.mean = counted > 0 ? sum / counted : 0.0;
    return rep;
}

std::vector<double> inverse_frequency_weights(const RasterMap& map, double lo, double hi) {
    std::vector<std::size_t> counts(map.classes, 0);
    for (std::uint8_t v : map.data) counts[v] += 1;
    const double mean = static_cast<double>(map.data.size()) / map.classes;
    std::vector<double> w(map.classes, 1.0);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0) continue;
        w[c] = std::clamp(mean / static_cast<double>(counts[c]), lo, hi);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Probe
// ---------------------------------------------------------------------------

ProbeWeights ProbeWeights::create(std::size_t in, std::size_t hidden, std::size_t classes) {
    ProbeWeights p;
    p.l1 = DenseLayer::create(hidden, in);
    p.l2 = DenseLayer::create(classes, hidden);
    return p;
}

void ProbeWeights::init(Rng& rng) {
    for (DenseLayer* l : {&l1, &l2}) {
        const double bound = std::sqrt(6.0 / static_cast<double>(l->in_dim()));
        for (double& v : l->w.data) v = rng.uniform(-bound, bound);
        l->b.fill(0.0);
        snap_to_f32(l->w);
    }
}

namespace {

struct ProbeContext {
    Tensor x;   // [n, in]
    Tensor a1;  // post-ReLU
};

Tensor probe_forward(const Tensor& x, const ProbeWeights& p, ProbeContext& ctx) {
    const std::size_t n = x.shape[0];
    ctx.x = x;
    ctx.a1 = Tensor({n, p.l1.out_dim()});
    dense_forward(x.data.data(), n, p.l1.in_dim(), p.l1, ctx.a1.data.data());
    relu_inplace(ctx.a1.data.data(), ctx.a1.numel());
    Tensor logits({n, p.l2.out_dim()});
    dense_forward(ctx.a1.data.data(), n, p.l2.in_dim(), p.l2, logits.data.data());
    return logits;
}

struct ProbeGrads {
    DenseLayer l1, l2;
};

Tensor probe_backward(const Tensor& upstream, const ProbeWeights& p, const ProbeContext& ctx,
                      ProbeGrads& grads) {
    const std::size_t n = upstream.shape[0];
    Tensor d1({n, p.l1.out_dim()});
    dense_backward(ctx.a1.data.data(), upstream.data.data(), n, p.l2, grads.l2, d1.data.data());
    for (std::size_t i = 0; i < d1.numel(); ++i)
        if (ctx.a1.data[i] <= 0.0) d1.data[i] = 0.0;
    Tensor dx({n, p.l1.in_dim()});
    dense_backward(ctx.x.data.data(), d1.data.data(), n, p.l1, grads.l1, dx.data.data());
    return dx;
}

// AdamW over a raw parameter vector (the embedding tables).
struct VecOptState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
};

void adamw_step_vec(std::vector<double>& param, const std::vector<double>& grad, VecOptState& st,
                    const AdamWConfig& cfg) {
    if (st.m.empty()) {
        st.m.assign(param.size(), 0.0);
        st.v.assign(param.size(), 0.0);
    }
    for (double g : grad)
        if (!std::isfinite(g)) throw TrainingError("adamw_step: non-finite gradient");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mh = st.m[i] / bc1;
        const double vh = st.v[i] / bc2;
        param[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * param[i]);
    }
}

// Applies one AdamW step to a set of dense layers/tensors with a shared
// schedule lr, then re-snaps them to the f32 grid.
struct TensorOpt {
    Tensor* param;
    Tensor* grad;
    OptimizerState state;
};

void step_all(std::vector<TensorOpt>& opts, AdamWConfig cfg, double lr) {
    cfg.lr = lr;
    for (auto& o : opts) {
        adamw_step(*o.param, *o.grad, o.state, cfg);
        snap_to_f32(*o.param);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Reconstruction training
// ---------------------------------------------------------------------------

void ReconstructionConfig::validate() const {
    if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1)
        throw ConfigError("reconstruction: epochs, steps and batch size must be >= 1");
    if (eval_stride < 1) throw ConfigError("reconstruction: eval_stride must be >= 1");
    if (warmup_steps >= epochs * steps_per_epoch)
        throw ConfigError("reconstruction: warmup must be shorter than the run");
    if (!(class_weight_min > 0.0) || class_weight_max < class_weight_min)
        throw ConfigError("reconstruction: bad class weight clip range");
}

ReconstructionResult train_reconstruction(const RasterMap& map, const ReconstructionConfig& cfg) {
    cfg.validate();
    map.validate();

    Rng rng(cfg.seed);
    ReconstructionResult res;
    res.model = PriorModel::create(cfg.grid, map.world_rect(), rng);
    res.probe = ProbeWeights::create(res.model.mlp.out_dim(), cfg.probe_hidden, map.classes);
    res.probe.init(rng);
    res.class_weights = inverse_frequency_weights(map, cfg.class_weight_min, cfg.class_weight_max);

    const std::size_t enc_dim = res.model.grid.output_dim();
    const std::size_t feat_dim = res.model.mlp.out_dim();
    const std::size_t batch = cfg.batch_size;
    const std::uint64_t total_steps = cfg.epochs * cfg.steps_per_epoch;

    PriorGrads grads = PriorGrads::zeros_like(res.model);
    ProbeGrads probe_grads{DenseLayer::create(cfg.probe_hidden, feat_dim),
                           DenseLayer::create(map.classes, cfg.probe_hidden)};

    std::vector<VecOptState> table_opt(res.model.grid.tables.size());
    std::vector<TensorOpt> tensor_opt;
    auto reg = [&tensor_opt](Tensor& p, Tensor& g) { tensor_opt.push_back({&p, &g, OptimizerState::zeros_like(p)}); };
    reg(res.model.mlp.l1.w, grads.mlp.l1.w);
    reg(res.model.mlp.l1.b, grads.mlp.l1.b);
    reg(res.model.mlp.l2.w, grads.mlp.l2.w);
    reg(res.model.mlp.l2.b, grads.mlp.l2.b);
    reg(res.model.mlp.l3.w, grads.mlp.l3.w);
    reg(res.model.mlp.l3.b, grads.mlp.l3.b);
    reg(res.probe.l1.w, probe_grads.l1.w);
    reg(res.probe.l1.b, probe_grads.l1.b);
    reg(res.probe.l2.w, probe_grads.l2.w);
    reg(res.probe.l2.b, probe_grads.l2.b);

    std::vector<Vec2> points(batch);
    std::vector<int> labels(batch);
    Tensor encoded({batch, enc_dim});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
            const std::uint64_t g = epoch * cfg.steps_per_epoch + s;
            const double lr = lr_at(g + 1, total_steps, cfg.warmup_steps, cfg.opt.lr);

            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t cell = rng.below(map.cell_count());
                const auto ix = static_cast<std::uint32_t>(cell % map.width);
                const auto iy = static_cast<std::uint32_t>(cell / map.width);
                Vec2 p = map.cell_center(ix, iy);
                if (cfg.jitter) {
                    p.x += rng.uniform(-0.5, 0.5) * map.meters_per_cell;
                    p.y += rng.uniform(-0.5, 0.5) * map.meters_per_cell;
                }
                points[b] = p;
                labels[b] = map.at(ix, iy);
                double* row = encoded.data.data() + b * enc_dim;
                if (cfg.binarized)
                    encode_multiscale_binarized(p, res.model.grid, row);
                else
                    encode_multiscale(p, res.model.grid, row);
            }

            MlpContext mlp_ctx;
            Tensor feats = mlp_apply(encoded, res.model.mlp, mlp_ctx);
            ProbeContext probe_ctx;
            Tensor logits = probe_forward(feats, res.probe, probe_ctx);

            Tensor dlogits;
            const double loss = weighted_cross_entropy(logits, labels, res.class_weights, &dlogits);
            if (!std::isfinite(loss))
                throw TrainingError("reconstruction diverged at step " + std::to_string(g));
            epoch_loss += loss;

            grads.zero();
            probe_grads.l1.w.fill(0.0);
            probe_grads.l1.b.fill(0.0);
            probe_grads.l2.w.fill(0.0);
            probe_grads.l2.b.fill(0.0);

            Tensor d_feats = probe_backward(dlogits, res.probe, probe_ctx, probe_grads);
            Tensor d_encoded = mlp_backward(d_feats, res.model.mlp, mlp_ctx, grads.mlp);
            for (std::size_t b = 0; b < batch; ++b)
                encode_multiscale_backward(
                    points[b], res.model.grid,
                    std::span<const double>(d_encoded.data).subspan(b * enc_dim, enc_dim),
                    grads.tables);

            AdamWConfig table_cfg = cfg.opt;
            table_cfg.lr = lr;
            for (std::size_t l = 0; l < res.model.grid.tables.size(); ++l)
                adamw_step_vec(res.model.grid.tables[l], grads.tables[l], table_opt[l], table_cfg);
            step_all(tensor_opt, cfg.opt, lr);
        }
        res.epoch_loss.push_back(epoch_loss / cfg.steps_per_epoch);
    }

    RasterMap pred = predict_map(res.model, res.probe, map, cfg.binarized, cfg.eval_stride);
    res.iou = miou(pred, map);
    return res;
}

RasterMap predict_map(const PriorModel& model, const ProbeWeights& probe, const RasterMap& like,
                      bool binarized, std::size_t eval_stride) {
    RasterMap pred = RasterMap::create(like.width, like.height, like.classes, like.meters_per_cell);
    const std::size_t enc_dim = model.grid.output_dim();
    const std::size_t chunk = 8192;

    std::vector<std::pair<std::uint32_t, std::uint32_t>> cells;
    cells.reserve(chunk);
    Tensor encoded;

    auto flush = [&]() {
        if (cells.empty()) return;
        encoded = Tensor({cells.size(), enc_dim});
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const Vec2 p = like.cell_center(cells[i].first, cells[i].second);
            double* row = encoded.data.data() + i * enc_dim;
            if (binarized)
                encode_multiscale_binarized(p, model.grid, row);
            else
                encode_multiscale(p, model.grid, row);
        }
        Tensor feats = mlp_apply(encoded, model.mlp);
        ProbeContext ctx;
        Tensor logits = probe_forward(feats, probe, ctx);
        const std::size_t k = probe.l2.out_dim();
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const double* row = logits.data.data() + i * k;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (row[c] > row[best]) best = c;
            pred.at(cells[i].first, cells[i].second) = static_cast<std::uint8_t>(best);
        }
        cells.clear();
    };

    for (std::uint32_t iy = 0; iy < like.height; iy += eval_stride)
        for (std::uint32_t ix = 0; ix < like.width; ix += eval_stride) {
            cells.emplace_back(ix, iy);
            if (cells.size() == chunk) flush();
        }
    flush();

    if (eval_stride > 1) {
        // Nearest-evaluated fill for the skipped cells.
        for (std::uint32_t iy = 0; iy < like.height; ++iy)
            for (std::uint32_t ix = 0; ix < like.width; ++ix) {
                const std::uint32_t sx = (ix / eval_stride) * eval_stride;
                const std::uint32_t sy = (iy / eval_stride) * eval_stride;
                pred.at(ix, iy) = pred.at(sx, sy);
            }
    }
    return pred;
}

// ---------------------------------------------------------------------------
// Toy fusion experiment
// ---------------------------------------------------------------------------

namespace {

struct FusionModel {
    PriorModel prior;
    ConvFusionWeights fuse;
    Tensor mask_token;  // [128]
    DenseLayer head;    // [K, cs]
};

struct FusionTask {
    RasterMap map;
    std::vector<double> class_weights;
    std::size_t window = 0;
    std::size_t cs = 0;
    std::size_t prior_dim = 128;
};

// Sensor evidence for one window: a noisy one-hot encoding with random cells
// blanked to emulate occlusion.
void fill_sensor(const FusionTask& task, const FusionExperimentConfig& cfg, Rng& rng,
                 std::size_t ox, std::size_t oy, Tensor& sensor, std::vector<int>& labels) {
    const std::size_t win = task.window;
    for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
            const auto ix = static_cast<std::uint32_t>(ox + i);
            const auto iy = static_cast<std::uint32_t>(oy + j);
            const int cls = task.map.at(ix, iy);
            labels[i * win + j] = cls;
            const bool visible = rng.uniform() >= cfg.occlusion;
            double* dst = &sensor.at(i, j, 0);
            for (std::size_t c = 0; c < task.cs; ++c) {
                const double base = (visible && static_cast<int>(c) == cls) ? 1.0 : 0.0;
                dst[c] = base + cfg.noise_sigma * rng.normal();
            }
        }
}

Tensor window_grid(const FusionTask& task, std::size_t ox, std::size_t oy) {
    Tensor g({task.window, task.window, 2});
    for (std::size_t i = 0; i < task.window; ++i)
        for (std::size_t j = 0; j < task.window; ++j) {
            const Vec2 p = task.map.cell_center(static_cast<std::uint32_t>(ox + i),
                                                static_cast<std::uint32_t>(oy + j));
            g.at(i, j, 0) = p.x;
            g.at(i, j, 1) = p.y;
        }
    return g;
}

Tensor broadcast_token(const Tensor& token, std::size_t h, std::size_t w) {
    Tensor out({h, w, token.numel()});
    for (std::size_t i = 0; i < h * w; ++i)
        std::memcpy(out.data.data() + i * token.numel(), token.data.data(),
                    token.numel() * sizeof(double));
    return out;
}

double eval_fusion(const FusionModel& model, const FusionTask& task,
                   const FusionExperimentConfig& cfg, bool use_prior) {
    Rng rng(cfg.seed ^ 0x5EED0E7A1ull);
    const std::size_t win = task.window;
    std::size_t correct = 0;
    std::size_t total = 0;
    Tensor sensor({win, win, task.cs});
    std::vector<int> labels(win * win);

    for (std::size_t e = 0; e < cfg.eval_windows; ++e) {
        const std::size_t ox = rng.below(task.map.width - win + 1);
        const std::size_t oy = rng.below(task.map.height - win + 1);
        fill_sensor(task, cfg, rng, ox, oy, sensor, labels);

        Tensor x_prior = use_prior
                             ? prior_features(model.prior, window_grid(task, ox, oy), true)
                             : broadcast_token(model.mask_token, win, win);
        Tensor fused = conv_fuse(sensor, x_prior, model.fuse);

        Tensor flat({win * win, task.cs});
        flat.data = fused.data;
        Tensor logits({win * win, model.head.out_dim()});
        dense_forward(flat.data.data(), win * win, task.cs, model.head, logits.data.data());

        const std::size_t k = model.head.out_dim();
        for (std::size_t i = 0; i < win * win; ++i) {
            const double* row = logits.data.data() + i * k;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (row[c] > row[best]) best = c;
            correct += static_cast<int>(best) == labels[i] ? 1 : 0;
            total += 1;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

FusionModel train_fusion(const FusionTask& task, const FusionExperimentConfig& cfg,
                         bool use_prior) {
    Rng rng(cfg.seed);
    const std::size_t win = task.window;
    const std::size_t cs = task.cs;
    const std::size_t k = task.map.classes;

    FusionModel model;
    model.prior = PriorModel::create(cfg.grid, task.map.world_rect(), rng, task.prior_dim);
    model.fuse = ConvFusionWeights::create(win, win, cs, task.prior_dim);
    model.fuse.init(rng);
    model.mask_token = Tensor({task.prior_dim});
    model.head = DenseLayer::create(k, cs);
    {
        const double bound = std::sqrt(6.0 / static_cast<double>(cs));
        for (double& v : model.head.w.data) v = rng.uniform(-bound, bound);
        model.head.b.fill(0.0);
        snap_to_f32(model.head.w);
    }

    PriorGrads prior_grads = PriorGrads::zeros_like(model.prior);
    ConvFusionGrads fuse_grads = ConvFusionGrads::zeros_like(model.fuse);
    Tensor token_grad({task.prior_dim});
    DenseLayer head_grad = DenseLayer::create(k, cs);

    std::vector<VecOptState> table_opt(model.prior.grid.tables.size());
    std::vector<TensorOpt> tensor_opt;
    auto reg = [&tensor_opt](Tensor& p, Tensor& g) { tensor_opt.push_back({&p, &g, OptimizerState::zeros_like(p)}); };
    if (use_prior) {
        reg(model.prior.mlp.l1.w, prior_grads.mlp.l1.w);
        reg(model.prior.mlp.l1.b, prior_grads.mlp.l1.b);
        reg(model.prior.mlp.l2.w, prior_grads.mlp.l2.w);
        reg(model.prior.mlp.l2.b, prior_grads.mlp.l2.b);
        reg(model.prior.mlp.l3.w, prior_grads.mlp.l3.w);
        reg(model.prior.mlp.l3.b, prior_grads.mlp.l3.b);
    }
    reg(model.fuse.kernel, fuse_grads.kernel);
    reg(model.fuse.bias, fuse_grads.bias);
    reg(model.fuse.pos_sensor, fuse_grads.pos_sensor);
    reg(model.fuse.pos_prior, fuse_grads.pos_prior);
    reg(model.mask_token, token_grad);
    reg(model.head.w, head_grad.w);
    reg(model.head.b, head_grad.b);

    Tensor sensor({win, win, cs});
    std::vector<int> labels(win * win);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double lr = lr_at(step + 1, cfg.steps, cfg.warmup_steps, cfg.opt.lr);
        const std::size_t ox = rng.below(task.map.width - win + 1);
        const std::size_t oy = rng.below(task.map.height - win + 1);
        fill_sensor(task, cfg, rng, ox, oy, sensor, labels);

        PriorContext prior_ctx;
        std::vector<std::uint8_t> mask;
        Tensor x_prior;
        if (use_prior) {
            x_prior = prior_features(model.prior, window_grid(task, ox, oy), true,
                                     CoveragePolicy::kZero, &prior_ctx);
            mask = patch_mask_cells(win, win, cfg.mask_ratio, cfg.seed * 7919 + step,
                                    cfg.mask_patch);
            for (std::size_t i = 0; i < win * win; ++i)
                if (mask[i])
                    std::memcpy(x_prior.data.data() + i * task.prior_dim,
                                model.mask_token.data.data(), task.prior_dim * sizeof(double));
        } else {
            x_prior = broadcast_token(model.mask_token, win, win);
        }

        ConvFuseContext fuse_ctx;
        Tensor fused = conv_fuse(sensor, x_prior, model.fuse, fuse_ctx);

        Tensor flat({win * win, cs});
        flat.data = fused.data;
        Tensor logits({win * win, k});
        dense_forward(flat.data.data(), win * win, cs, model.head, logits.data.data());

        Tensor dlogits;
        const double loss = weighted_cross_entropy(logits, labels, task.class_weights, &dlogits);
        if (!std::isfinite(loss))
            throw TrainingError("toy fusion diverged at step " + std::to_string(step));

        prior_grads.zero();
        fuse_grads.zero();
        token_grad.fill(0.0);
        head_grad.w.fill(0.0);
        head_grad.b.fill(0.0);

        Tensor d_flat({win * win, cs});
        dense_backward(flat.data.data(), dlogits.data.data(), win * win, model.head, head_grad,
                       d_flat.data.data());
        Tensor d_fused({win, win, cs});
        d_fused.data = d_flat.data;

        Tensor d_sensor, d_prior;
        conv_fuse_backward(d_fused, model.fuse, fuse_ctx, fuse_grads, d_sensor, d_prior);

        if (use_prior) {
            // Masked cells trained the token; only unmasked gradients reach
            // the prior pipeline.
            for (std::size_t i = 0; i < win * win; ++i) {
                double* row = d_prior.data.data() + i * task.prior_dim;
                if (mask[i]) {
                    for (std::size_t c = 0; c < task.prior_dim; ++c) {
                        token_grad.data[c] += row[c];
                        row[c] = 0.0;
                    }
                }
            }
            prior_features_backward(d_prior, model.prior, prior_ctx, prior_grads);
            AdamWConfig table_cfg = cfg.opt;
            table_cfg.lr = lr;
            for (std::size_t l = 0; l < model.prior.grid.tables.size(); ++l)
                adamw_step_vec(model.prior.grid.tables[l], prior_grads.tables[l], table_opt[l],
                               table_cfg);
        } else {
            for (std::size_t i = 0; i < win * win; ++i) {
                const double* row = d_prior.data.data() + i * task.prior_dim;
                for (std::size_t c = 0; c < task.prior_dim; ++c) token_grad.data[c] += row[c];
            }
        }
        step_all(tensor_opt, cfg.opt, lr);
    }
    return model;
}

}  // namespace

FusionExperimentResult toy_fusion_experiment(const FusionExperimentConfig& cfg) {
    if (cfg.sensor_channels < 3) throw ConfigError("toy fusion: needs >= 3 sensor channels");

    FusionTask task;
    task.map = synth_map(cfg.seed, cfg.map);
    task.window = cfg.window;
    task.cs = cfg.sensor_channels;
    if (task.map.width < cfg.window || task.map.height < cfg.window)
        throw ConfigError("toy fusion: window exceeds map size");
    if (task.cs < task.map.classes)
        throw ConfigError("toy fusion: sensor channels must cover the classes");
    task.class_weights = inverse_frequency_weights(task.map, 0.1, 10.0);

    FusionModel with = train_fusion(task, cfg, true);
    FusionModel without = train_fusion(task, cfg, false);

    FusionExperimentResult res;
    res.with_prior = eval_fusion(with, task, cfg, true);
    res.fully_masked_prior = eval_fusion(with, task, cfg, false);
    res.without_prior = eval_fusion(without, task, cfg, false);
    return res;
}

// ---------------------------------------------------------------------------
// Traversal analysis
// ---------------------------------------------------------------------------

namespace {

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) {
        for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    }
    std::size_t find(std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<Scene> merge_trajectories(const std::vector<Scene>& scenes) {
    for (const auto& s : scenes)
        for (std::size_t i = 1; i < s.samples.size(); ++i)
            if (s.samples[i].timestamp < s.samples[i - 1].timestamp)
                throw ConfigError("merge_trajectories: scene " + s.id + " is not time-sorted");

    // Canonical processing order makes the result input-order independent.
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scenes](std::size_t a, std::size_t b) { return scenes[a].id < scenes[b].id; });

    UnionFind uf(scenes.size());
    for (std::size_t a : order) {
        if (scenes[a].samples.empty()) continue;
        const TrajectorySample& end = scenes[a].samples.back();
        for (std::size_t b : order) {
            if (a == b || scenes[b].samples.empty()) continue;
            const TrajectorySample& start = scenes[b].samples.front();
            if (start.timestamp - end.timestamp < kMergeMaxGapSeconds &&
                start.timestamp >= end.timestamp &&
                dist(end.position, start.position) < kMergeMaxGapMeters)
                uf.unite(a, b);
        }
    }

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i : order) groups[uf.find(i)].push_back(i);

    std::vector<Scene> merged;
    for (auto& [root, members] : groups) {
        Scene out;
        out.id = scenes[members.front()].id;
        for (std::size_t m : members) {
            out.id = std::min(out.id, scenes[m].id);
            out.samples.insert(out.samples.end(), scenes[m].samples.begin(),
                               scenes[m].samples.end());
        }
        std::stable_sort(out.samples.begin(), out.samples.end(),
                         [](const TrajectorySample& x, const TrajectorySample& y) {
                             return x.timestamp < y.timestamp;
                         });
        merged.push_back(std::move(out));
    }
    std::sort(merged.begin(), merged.end(),
              [](const Scene& a, const Scene& b) { return a.id < b.id; });
    return merged;
}

std::size_t traversal_count(const TrajectorySample& query, const std::vector<Scene>& scenes,
                            double radius) {
    std::size_t count = 0;
    for (const auto& scene : scenes) {
        for (const auto& s : scene.samples) {
            if (dist(s.position, query.position) < radius) {
                count += 1;
                break;
            }
        }
    }
    return count;
}

}  // namespace cmp

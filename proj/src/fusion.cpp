#include "cmp/fusion.hpp"

#include <cmath>

namespace cmp {

// ---------------------------------------------------------------------------
// Conv fusion
// ---------------------------------------------------------------------------

ConvFusionWeights ConvFusionWeights::create(std::size_t h, std::size_t w, std::size_t cs,
                                            std::size_t cp) {
    ConvFusionWeights f;
    f.kernel = Tensor({3, 3, cs + cp, cs});
    f.bias = Tensor({cs});
    f.pos_sensor = Tensor({h, w, cs});
    f.pos_prior = Tensor({h, w, cp});
    return f;
}

void ConvFusionWeights::init(Rng& rng) {
    const double fan_in = static_cast<double>(9 * kernel.shape[2]);
    const double bound = std::sqrt(6.0 / fan_in);
    for (double& v : kernel.data) v = rng.uniform(-bound, bound);
    bias.fill(0.0);
    for (double& v : pos_sensor.data) v = 0.02 * rng.normal();
    for (double& v : pos_prior.data) v = 0.02 * rng.normal();
    snap_to_f32(kernel);
    snap_to_f32(pos_sensor);
    snap_to_f32(pos_prior);
}

ConvFusionGrads ConvFusionGrads::zeros_like(const ConvFusionWeights& w) {
    ConvFusionGrads g;
    g.kernel = Tensor(w.kernel.shape);
    g.bias = Tensor(w.bias.shape);
    g.pos_sensor = Tensor(w.pos_sensor.shape);
    g.pos_prior = Tensor(w.pos_prior.shape);
    return g;
}

void ConvFusionGrads::zero() {
    kernel.fill(0.0);
    bias.fill(0.0);
    pos_sensor.fill(0.0);
    pos_prior.fill(0.0);
}

Tensor conv_fuse(const Tensor& x_sensor, const Tensor& x_prior, const ConvFusionWeights& w) {
    ConvFuseContext ctx;
    return conv_fuse(x_sensor, x_prior, w, ctx);
}

Tensor conv_fuse(const Tensor& x_sensor, const Tensor& x_prior, const ConvFusionWeights& w,
                 ConvFuseContext& ctx) {
    require_shape(x_sensor.shape.size() == 3 && x_prior.shape.size() == 3,
                  "conv_fuse inputs must be [h,w,c]");
    require_shape(x_sensor.shape[0] == x_prior.shape[0] && x_sensor.shape[1] == x_prior.shape[1],
                  "conv_fuse spatial extents");
    require_shape(w.pos_sensor.shape == x_sensor.shape, "conv_fuse sensor pos embedding");
    require_shape(w.pos_prior.shape == x_prior.shape, "conv_fuse prior pos embedding");
    const std::size_t h = x_sensor.shape[0], gw = x_sensor.shape[1];
    const std::size_t cs = x_sensor.shape[2], cp = x_prior.shape[2];
    require_shape(w.kernel.shape == std::vector<std::size_t>({3, 3, cs + cp, cs}),
                  "conv_fuse kernel shape");

    ctx.stacked = Tensor({h, gw, cs + cp});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < gw; ++j) {
            double* dst = &ctx.stacked.at(i, j, 0);
            const double* s = &x_sensor.at(i, j, 0);
            const double* ps = &w.pos_sensor.at(i, j, 0);
            for (std::size_t c = 0; c < cs; ++c) dst[c] = s[c] + ps[c];
            const double* p = &x_prior.at(i, j, 0);
            const double* pp = &w.pos_prior.at(i, j, 0);
            for (std::size_t c = 0; c < cp; ++c) dst[cs + c] = p[c] + pp[c];
        }

    ctx.out = conv3x3_apply(ctx.stacked, w.kernel, w.bias);
    relu_inplace(ctx.out.data.data(), ctx.out.numel());
    return ctx.out;
}

void conv_fuse_backward(const Tensor& upstream, const ConvFusionWeights& w,
                        const ConvFuseContext& ctx, ConvFusionGrads& grads, Tensor& d_sensor,
                        Tensor& d_prior) {
    require_shape(upstream.shape == ctx.out.shape, "conv_fuse_backward upstream shape");
    Tensor d_conv = upstream;
    for (std::size_t i = 0; i < d_conv.numel(); ++i)
        if (ctx.out.data[i] <= 0.0) d_conv.data[i] = 0.0;

    Tensor d_stacked = conv3x3_backward(d_conv, ctx.stacked, w.kernel, grads.kernel, grads.bias);

    const std::size_t h = ctx.stacked.shape[0], gw = ctx.stacked.shape[1];
    const std::size_t cs = w.pos_sensor.shape[2], cp = w.pos_prior.shape[2];
    d_sensor = Tensor({h, gw, cs});
    d_prior = Tensor({h, gw, cp});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < gw; ++j) {
            const double* src = &d_stacked.at(i, j, 0);
            double* ds = &d_sensor.at(i, j, 0);
            double* gps = &grads.pos_sensor.at(i, j, 0);
            for (std::size_t c = 0; c < cs; ++c) {
                ds[c] = src[c];
                gps[c] += src[c];
            }
            double* dp = &d_prior.at(i, j, 0);
            double* gpp = &grads.pos_prior.at(i, j, 0);
            for (std::size_t c = 0; c < cp; ++c) {
                dp[c] = src[cs + c];
                gpp[c] += src[cs + c];
            }
        }
}

// ---------------------------------------------------------------------------
// Token fusion
// ---------------------------------------------------------------------------

TokenFusionWeights TokenFusionWeights::create(std::size_t h, std::size_t w, std::size_t c,
                                              std::size_t prior_dim, std::size_t pos_dim) {
    TokenFusionWeights f;
    f.prior_proj = DenseLayer::create(c, prior_dim);
    f.e_prior = Tensor({h, w, c});
    f.query_pos_proj = DenseLayer::create(c, pos_dim);
    f.attn = AttentionWeights::create(c);
    return f;
}

void TokenFusionWeights::init(Rng& rng) {
    const double b1 = std::sqrt(6.0 / static_cast<double>(prior_proj.in_dim()));
    for (double& v : prior_proj.w.data) v = rng.uniform(-b1, b1);
    prior_proj.b.fill(0.0);
    for (double& v : e_prior.data) v = 0.02 * rng.normal();
    const double b2 = std::sqrt(6.0 / static_cast<double>(query_pos_proj.in_dim()));
    for (double& v : query_pos_proj.w.data) v = rng.uniform(-b2, b2);
    query_pos_proj.b.fill(0.0);
    attn.init(rng);
    snap_to_f32(prior_proj.w);
    snap_to_f32(e_prior);
    snap_to_f32(query_pos_proj.w);
}

TokenFusionGrads TokenFusionGrads::zeros_like(const TokenFusionWeights& w) {
    TokenFusionGrads g;
    g.prior_proj = DenseLayer::create(w.prior_proj.out_dim(), w.prior_proj.in_dim());
    g.e_prior = Tensor(w.e_prior.shape);
    g.query_pos_proj = DenseLayer::create(w.query_pos_proj.out_dim(), w.query_pos_proj.in_dim());
    g.attn = AttentionWeights::create(w.attn.wq.shape[0]);
    return g;
}

void TokenFusionGrads::zero() {
    prior_proj.w.fill(0.0);
    prior_proj.b.fill(0.0);
    e_prior.fill(0.0);
    query_pos_proj.w.fill(0.0);
    query_pos_proj.b.fill(0.0);
    attn.wq.fill(0.0);
    attn.wk.fill(0.0);
    attn.wv.fill(0.0);
    attn.wo.fill(0.0);
}

Tensor token_fuse(const Tensor& queries, const Tensor& x_prior, const Tensor& query_pos,
                  const TokenFusionWeights& w) {
    TokenFuseContext ctx;
    return token_fuse(queries, x_prior, query_pos, w, ctx);
}

Tensor token_fuse(const Tensor& queries, const Tensor& x_prior, const Tensor& query_pos,
                  const TokenFusionWeights& w, TokenFuseContext& ctx) {
    require_shape(queries.shape.size() == 2, "token_fuse queries must be [m,c]");
    require_shape(x_prior.shape.size() == 3, "token_fuse prior must be [h,w,d]");
    require_shape(x_prior.shape[2] == w.prior_proj.in_dim(), "token_fuse prior feature width");
    require_shape(x_prior.shape[0] == w.e_prior.shape[0] && x_prior.shape[1] == w.e_prior.shape[1],
                  "token_fuse e_prior spatial extents");
    require_shape(queries.shape[1] == w.prior_proj.out_dim(), "token_fuse channel width");
    require_shape(query_pos.shape.size() == 2 && query_pos.shape[0] == queries.shape[0] &&
                      query_pos.shape[1] == w.query_pos_proj.in_dim(),
                  "token_fuse query positional width");

    const std::size_t n = x_prior.shape[0] * x_prior.shape[1];
    const std::size_t c = queries.shape[1];
    const std::size_t m = queries.shape[0];

    ctx.prior_flat = Tensor({n, x_prior.shape[2]});
    ctx.prior_flat.data = x_prior.data;
    ctx.query_pos = query_pos;

    ctx.kv = Tensor({n, c});
    dense_forward(ctx.prior_flat.data.data(), n, w.prior_proj.in_dim(), w.prior_proj,
                  ctx.kv.data.data());
    for (std::size_t i = 0; i < n * c; ++i) ctx.kv.data[i] += w.e_prior.data[i];

    ctx.q_in = Tensor({m, c});
    dense_forward(query_pos.data.data(), m, w.query_pos_proj.in_dim(), w.query_pos_proj,
                  ctx.q_in.data.data());
    for (std::size_t i = 0; i < m * c; ++i) ctx.q_in.data[i] += queries.data[i];

    return cross_attention_apply(ctx.q_in, ctx.kv, w.attn, ctx.attn);
}

void token_fuse_backward(const Tensor& upstream, const TokenFusionWeights& w,
                         const TokenFuseContext& ctx, TokenFusionGrads& grads, Tensor& d_queries,
                         Tensor& d_prior) {
    Tensor d_kv;
    Tensor d_q_in = cross_attention_backward(upstream, w.attn, ctx.attn, grads.attn, d_kv);

    // Query side: residual into raw queries plus the positional projection.
    d_queries = d_q_in;
    const std::size_t m = ctx.q_in.shape[0];
    dense_backward(ctx.query_pos.data.data(), d_q_in.data.data(), m, w.query_pos_proj,
                   grads.query_pos_proj, nullptr);

    // Prior side: positional free parameters and the feature projection.
    for (std::size_t i = 0; i < d_kv.numel(); ++i) grads.e_prior.data[i] += d_kv.data[i];
    const std::size_t n = ctx.prior_flat.shape[0];
    Tensor d_prior_flat({n, ctx.prior_flat.shape[1]});
    dense_backward(ctx.prior_flat.data.data(), d_kv.data.data(), n, w.prior_proj,
                   grads.prior_proj, d_prior_flat.data.data());
    d_prior = Tensor({w.e_prior.shape[0], w.e_prior.shape[1], ctx.prior_flat.shape[1]});
    d_prior.data = d_prior_flat.data;
}

}  // namespace cmp

#include "cmp/tensor_nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cmp {

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

void dense_forward(const double* x, std::size_t n, std::size_t in, const DenseLayer& layer,
                   double* y) {
    const std::size_t out = layer.out_dim();
    const double* w = layer.w.data.data();
    const double* b = layer.b.data.data();

    // Broadcast formulation: y_row accumulates k-major with contiguous
    // columns, which vectorizes without horizontal reductions. The transposed
    // weight scratch is amortized over the batch.
    thread_local std::vector<double> wt;
    wt.resize(in * out);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = w[o * in + k];

    // Tiling keeps the weight row L1-resident across several points.
    // std::fma pins the rounding behavior across platforms and maps to
    // hardware FMA; the per-element summation order is k-ascending
    // regardless of tiling.
    constexpr std::size_t kTile = 8;
    std::size_t i = 0;
    for (; i + kTile <= n; i += kTile) {
        for (std::size_t t = 0; t < kTile; ++t) {
            double* yi = y + (i + t) * out;
            for (std::size_t o = 0; o < out; ++o) yi[o] = b[o];
        }
        for (std::size_t k = 0; k < in; ++k) {
            const double* wk = wt.data() + k * out;
            for (std::size_t t = 0; t < kTile; ++t) {
                const double xv = x[(i + t) * in + k];
                double* yi = y + (i + t) * out;
                for (std::size_t o = 0; o < out; ++o) yi[o] = std::fma(xv, wk[o], yi[o]);
            }
        }
    }
    for (; i < n; ++i) {
        const double* xi = x + i * in;
        double* yi = y + i * out;
        for (std::size_t o = 0; o < out; ++o) yi[o] = b[o];
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xi[k];
            const double* wk = wt.data() + k * out;
            for (std::size_t o = 0; o < out; ++o) yi[o] = std::fma(xv, wk[o], yi[o]);
        }
    }
}

void dense_backward(const double* x, const double* dy, std::size_t n, const DenseLayer& layer,
                    DenseLayer& grad, double* dx) {
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    double* gw = grad.w.data.data();
    double* gb = grad.b.data.data();
    const double* w = layer.w.data.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x + i * in;
        const double* dyi = dy + i * out;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyi[o];
            gb[o] += g;
            double* gwo = gw + o * in;
            for (std::size_t k = 0; k < in; ++k) gwo[k] += g * xi[k];
        }
        if (dx) {
            double* dxi = dx + i * in;
            for (std::size_t k = 0; k < in; ++k) dxi[k] = 0.0;
            for (std::size_t o = 0; o < out; ++o) {
                const double g = dyi[o];
                const double* wo = w + o * in;
                for (std::size_t k = 0; k < in; ++k) dxi[k] += g * wo[k];
            }
        }
    }
}

void relu_inplace(double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

MlpWeights MlpWeights::create(std::size_t in, std::size_t h1, std::size_t h2, std::size_t out) {
    MlpWeights w;
    w.l1 = DenseLayer::create(h1, in);
    w.l2 = DenseLayer::create(h2, h1);
    w.l3 = DenseLayer::create(out, h2);
    return w;
}

namespace {

void init_dense(DenseLayer& l, Rng& rng) {
    // Kaiming-uniform fan-in bound.
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in_dim()));
    for (double& v : l.w.data) v = rng.uniform(-bound, bound);
    for (double& v : l.b.data) v = 0.0;
    snap_to_f32(l.w);
}

}  // namespace

void MlpWeights::init(Rng& rng) {
    init_dense(l1, rng);
    init_dense(l2, rng);
    init_dense(l3, rng);
}

MlpGrads MlpGrads::zeros_like(const MlpWeights& w) {
    MlpGrads g;
    g.l1 = DenseLayer::create(w.l1.out_dim(), w.l1.in_dim());
    g.l2 = DenseLayer::create(w.l2.out_dim(), w.l2.in_dim());
    g.l3 = DenseLayer::create(w.l3.out_dim(), w.l3.in_dim());
    return g;
}

void MlpGrads::zero() {
    l1.w.fill(0.0);
    l1.b.fill(0.0);
    l2.w.fill(0.0);
    l2.b.fill(0.0);
    l3.w.fill(0.0);
    l3.b.fill(0.0);
}

namespace {

std::size_t batch_of(const Tensor& x, std::size_t expect_last, const char* what) {
    require_shape(!x.shape.empty() && x.shape.back() == expect_last, what);
    return x.numel() / expect_last;
}

std::vector<std::size_t> with_last(const Tensor& x, std::size_t last) {
    auto s = x.shape;
    s.back() = last;
    return s;
}

}  // namespace

Tensor mlp_apply(const Tensor& x, const MlpWeights& w) {
    // Inference path: no saved activations, scratch reused across layers.
    const std::size_t n = batch_of(x, w.in_dim(), "mlp_apply input width");
    Tensor a1({n, w.l1.out_dim()});
    dense_forward(x.data.data(), n, w.in_dim(), w.l1, a1.data.data());
    relu_inplace(a1.data.data(), a1.numel());
    Tensor a2({n, w.l2.out_dim()});
    dense_forward(a1.data.data(), n, w.l2.in_dim(), w.l2, a2.data.data());
    relu_inplace(a2.data.data(), a2.numel());
    Tensor y(with_last(x, w.out_dim()));
    dense_forward(a2.data.data(), n, w.l3.in_dim(), w.l3, y.data.data());
    return y;
}

Tensor mlp_apply(const Tensor& x, const MlpWeights& w, MlpContext& ctx) {
    const std::size_t n = batch_of(x, w.in_dim(), "mlp_apply input width");
    ctx.x = x;
    ctx.a1 = Tensor({n, w.l1.out_dim()});
    dense_forward(x.data.data(), n, w.in_dim(), w.l1, ctx.a1.data.data());
    relu_inplace(ctx.a1.data.data(), ctx.a1.numel());
    ctx.a2 = Tensor({n, w.l2.out_dim()});
    dense_forward(ctx.a1.data.data(), n, w.l2.in_dim(), w.l2, ctx.a2.data.data());
    relu_inplace(ctx.a2.data.data(), ctx.a2.numel());
    Tensor y(with_last(x, w.out_dim()));
    dense_forward(ctx.a2.data.data(), n, w.l3.in_dim(), w.l3, y.data.data());
    return y;
}

Tensor mlp_backward(const Tensor& upstream, const MlpWeights& w, const MlpContext& ctx,
                    MlpGrads& grads) {
    const std::size_t n = batch_of(upstream, w.out_dim(), "mlp_backward upstream width");
    Tensor d2({n, w.l2.out_dim()});
    dense_backward(ctx.a2.data.data(), upstream.data.data(), n, w.l3, grads.l3, d2.data.data());
    for (std::size_t i = 0; i < d2.numel(); ++i)
        if (ctx.a2.data[i] <= 0.0) d2.data[i] = 0.0;
    Tensor d1({n, w.l1.out_dim()});
    dense_backward(ctx.a1.data.data(), d2.data.data(), n, w.l2, grads.l2, d1.data.data());
    for (std::size_t i = 0; i < d1.numel(); ++i)
        if (ctx.a1.data[i] <= 0.0) d1.data[i] = 0.0;
    Tensor dx(ctx.x.shape);
    dense_backward(ctx.x.data.data(), d1.data.data(), n, w.l1, grads.l1, dx.data.data());
    return dx;
}

// ---------------------------------------------------------------------------
// 3x3 convolution
// ---------------------------------------------------------------------------

Tensor conv3x3_apply(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    require_shape(x.shape.size() == 3, "conv3x3 input must be [h,w,cin]");
    require_shape(kernel.shape.size() == 4 && kernel.shape[0] == 3 && kernel.shape[1] == 3,
                  "conv3x3 kernel must be [3,3,cin,cout]");
    const std::size_t h = x.shape[0], w = x.shape[1], cin = x.shape[2];
    const std::size_t cout = kernel.shape[3];
    require_shape(kernel.shape[2] == cin, "conv3x3 kernel cin");
    require_shape(bias.shape.size() == 1 && bias.shape[0] == cout, "conv3x3 bias width");

    Tensor y({h, w, cout});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            double* yo = &y.at(i, j, 0);
            for (std::size_t c = 0; c < cout; ++c) yo[c] = bias.at(c);
            for (int di = -1; di <= 1; ++di) {
                const std::int64_t ii = static_cast<std::int64_t>(i) + di;
                if (ii < 0 || ii >= static_cast<std::int64_t>(h)) continue;
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::int64_t jj = static_cast<std::int64_t>(j) + dj;
                    if (jj < 0 || jj >= static_cast<std::int64_t>(w)) continue;
                    const double* xi = &x.at(static_cast<std::size_t>(ii),
                                             static_cast<std::size_t>(jj), 0);
                    const double* kk = &kernel.at(static_cast<std::size_t>(di + 1),
                                                  static_cast<std::size_t>(dj + 1), 0, 0);
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double xv = xi[ci];
                        const double* kc = kk + ci * cout;
                        for (std::size_t c = 0; c < cout; ++c) yo[c] += xv * kc[c];
                    }
                }
            }
        }
    }
    return y;
}

Tensor conv3x3_backward(const Tensor& upstream, const Tensor& x, const Tensor& kernel,
                        Tensor& grad_kernel, Tensor& grad_bias) {
    const std::size_t h = x.shape[0], w = x.shape[1], cin = x.shape[2];
    const std::size_t cout = kernel.shape[3];
    require_shape(upstream.shape == std::vector<std::size_t>({h, w, cout}),
                  "conv3x3_backward upstream shape");

    Tensor dx(x.shape);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double* g = &upstream.at(i, j, 0);
            for (std::size_t c = 0; c < cout; ++c) grad_bias.at(c) += g[c];
            for (int di = -1; di <= 1; ++di) {
                const std::int64_t ii = static_cast<std::int64_t>(i) + di;
                if (ii < 0 || ii >= static_cast<std::int64_t>(h)) continue;
                for (int dj = -1; dj <= 1; ++dj) {
                    const std::int64_t jj = static_cast<std::int64_t>(j) + dj;
                    if (jj < 0 || jj >= static_cast<std::int64_t>(w)) continue;
                    const std::size_t ki = static_cast<std::size_t>(di + 1);
                    const std::size_t kj = static_cast<std::size_t>(dj + 1);
                    const double* xi = &x.at(static_cast<std::size_t>(ii),
                                             static_cast<std::size_t>(jj), 0);
                    double* dxi = &dx.at(static_cast<std::size_t>(ii),
                                         static_cast<std::size_t>(jj), 0);
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const double xv = xi[ci];
                        const double* kc = &kernel.at(ki, kj, ci, 0);
                        double* gkc = &grad_kernel.at(ki, kj, ci, 0);
                        double acc = 0.0;
                        for (std::size_t c = 0; c < cout; ++c) {
                            gkc[c] += xv * g[c];
                            acc += kc[c] * g[c];
                        }
                        dxi[ci] += acc;
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Cross-attention
// ---------------------------------------------------------------------------

AttentionWeights AttentionWeights::create(std::size_t c) {
    AttentionWeights w;
    w.wq = Tensor({c, c});
    w.wk = Tensor({c, c});
    w.wv = Tensor({c, c});
    w.wo = Tensor({c, c});
    return w;
}

void AttentionWeights::init(Rng& rng) {
    const std::size_t c = wq.shape[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(c));
    for (Tensor* t : {&wq, &wk, &wv, &wo}) {
        for (double& v : t->data) v = rng.uniform(-bound, bound);
        snap_to_f32(*t);
    }
}

namespace {

// y[n, c] = x[n, c] * w^T for square projection matrices.
Tensor project(const Tensor& x, const Tensor& w) {
    const std::size_t n = x.shape[0], c = x.shape[1];
    Tensor y({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < c; ++o) {
            double acc = 0.0;
            for (std::size_t k = 0; k < c; ++k) acc += x.at(i, k) * w.at(o, k);
            y.at(i, o) = acc;
        }
    return y;
}

// Accumulates dL/dx and dL/dw for y = x * w^T.
void project_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dx,
                      Tensor& dw) {
    const std::size_t n = x.shape[0], c = x.shape[1];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < c; ++o) {
            const double g = dy.at(i, o);
            for (std::size_t k = 0; k < c; ++k) {
                dw.at(o, k) += g * x.at(i, k);
                dx.at(i, k) += g * w.at(o, k);
            }
        }
}

}  // namespace

Tensor cross_attention_apply(const Tensor& queries, const Tensor& keys_values,
                             const AttentionWeights& w) {
    AttentionContext ctx;
    return cross_attention_apply(queries, keys_values, w, ctx);
}

Tensor cross_attention_apply(const Tensor& queries, const Tensor& keys_values,
                             const AttentionWeights& w, AttentionContext& ctx) {
    require_shape(queries.shape.size() == 2 && keys_values.shape.size() == 2,
                  "cross_attention expects [m,c] and [n,c]");
    require_shape(queries.shape[1] == keys_values.shape[1], "cross_attention channel width");
    if (keys_values.shape[0] == 0) throw ConfigError("cross_attention: empty keys_values");

    const std::size_t m = queries.shape[0];
    const std::size_t n = keys_values.shape[0];
    const std::size_t c = queries.shape[1];

    ctx.queries = queries;
    ctx.keys_values = keys_values;
    ctx.q = project(queries, w.wq);
    ctx.k = project(keys_values, w.wk);
    ctx.v = project(keys_values, w.wv);

    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    ctx.attn = Tensor({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < c; ++k) s += ctx.q.at(i, k) * ctx.k.at(j, k);
            s *= scale;
            ctx.attn.at(i, j) = s;
            mx = std::max(mx, s);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(ctx.attn.at(i, j) - mx);
            ctx.attn.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < n; ++j) ctx.attn.at(i, j) /= sum;
    }

    ctx.mix = Tensor({m, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double a = ctx.attn.at(i, j);
            for (std::size_t k = 0; k < c; ++k) ctx.mix.at(i, k) += a * ctx.v.at(j, k);
        }

    Tensor out = project(ctx.mix, w.wo);
    for (std::size_t i = 0; i < m * c; ++i) out.data[i] += queries.data[i];
    return out;
}

Tensor cross_attention_backward(const Tensor& upstream, const AttentionWeights& w,
                                const AttentionContext& ctx, AttentionWeights& grads,
                                Tensor& d_keys_values) {
    const std::size_t m = ctx.queries.shape[0];
    const std::size_t n = ctx.keys_values.shape[0];
    const std::size_t c = ctx.queries.shape[1];
    require_shape(upstream.shape == ctx.queries.shape, "cross_attention_backward upstream");

    d_keys_values = Tensor({n, c});
    Tensor d_queries = upstream;  // residual path
    Tensor d_mix({m, c});
    project_backward(ctx.mix, w.wo, upstream, d_mix, grads.wo);

    Tensor d_attn({m, n});
    Tensor d_v({n, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double a = ctx.attn.at(i, j);
            double acc = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                acc += d_mix.at(i, k) * ctx.v.at(j, k);
                d_v.at(j, k) += a * d_mix.at(i, k);
            }
            d_attn.at(i, j) = acc;
        }

    // Softmax backward per row: ds = a .* (d_attn - sum(d_attn .* a)).
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    Tensor d_scores({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += d_attn.at(i, j) * ctx.attn.at(i, j);
        for (std::size_t j = 0; j < n; ++j)
            d_scores.at(i, j) = ctx.attn.at(i, j) * (d_attn.at(i, j) - dot) * scale;
    }

    Tensor d_q({m, c});
    Tensor d_k({n, c});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double g = d_scores.at(i, j);
            for (std::size_t k = 0; k < c; ++k) {
                d_q.at(i, k) += g * ctx.k.at(j, k);
                d_k.at(j, k) += g * ctx.q.at(i, k);
            }
        }

    project_backward(ctx.queries, w.wq, d_q, d_queries, grads.wq);
    project_backward(ctx.keys_values, w.wk, d_k, d_keys_values, grads.wk);
    project_backward(ctx.keys_values, w.wv, d_v, d_keys_values, grads.wv);
    return d_queries;
}

// ---------------------------------------------------------------------------
// Weighted cross-entropy
// ---------------------------------------------------------------------------

double weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                              const std::vector<double>& class_weights, Tensor* dlogits) {
    require_shape(!logits.shape.empty(), "weighted_cross_entropy logits rank");
    const std::size_t k = logits.shape.back();
    const std::size_t n = logits.numel() / k;
    require_shape(labels.size() == n, "weighted_cross_entropy label count");
    if (class_weights.size() != k)
        throw ConfigError("weighted_cross_entropy: class_weights size must equal K");
    for (double w : class_weights)
        if (!(w > 0.0)) throw ConfigError("weighted_cross_entropy: weights must be > 0");

    if (dlogits) {
        *dlogits = Tensor(logits.shape);
    }

    double loss = 0.0;
    double weight_sum = 0.0;
    std::vector<double> probs(k);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= k)
            throw ConfigError("weighted_cross_entropy: label out of range");
        const double* row = logits.data.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[j] = std::exp(row[j] - mx);
            sum += probs[j];
        }
        const double wl = class_weights[static_cast<std::size_t>(label)];
        loss += wl * (std::log(sum) - (row[static_cast<std::size_t>(label)] - mx));
        weight_sum += wl;
        if (dlogits) {
            double* drow = dlogits->data.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) drow[j] = wl * probs[j] / sum;
            drow[static_cast<std::size_t>(label)] -= wl;
        }
    }
    loss /= weight_sum;
    if (dlogits)
        for (double& g : dlogits->data) g /= weight_sum;
    return loss;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

OptimizerState OptimizerState::zeros_like(const Tensor& param) {
    OptimizerState st;
    st.m = Tensor(param.shape);
    st.v = Tensor(param.shape);
    st.step = 0;
    return st;
}

void adamw_step(Tensor& param, const Tensor& grad, OptimizerState& state,
                const AdamWConfig& cfg) {
    require_shape(param.same_shape(grad) && param.same_shape(state.m), "adamw_step shapes");
    for (double g : grad.data)
        if (!std::isfinite(g)) throw TrainingError("adamw_step: non-finite gradient");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double g = grad.data[i];
        state.m.data[i] = cfg.beta1 * state.m.data[i] + (1.0 - cfg.beta1) * g;
        state.v.data[i] = cfg.beta2 * state.v.data[i] + (1.0 - cfg.beta2) * g * g;
        const double mh = state.m.data[i] / bc1;
        const double vh = state.v.data[i] / bc2;
        param.data[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * param.data[i]);
    }
}

double lr_at(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps,
             double base_lr) {
    if (warmup_steps >= total_steps)
        throw ConfigError("lr_at: warmup_steps must be < total_steps");
    if (step > total_steps) throw ConfigError("lr_at: step out of range");
    if (step <= warmup_steps) {
        if (warmup_steps == 0) return base_lr;
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279 * progress));
}

void snap_to_f32(Tensor& t) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic, double h) {
    if (params.size() != analytic.size())
        throw ConfigError("grad_check: params/analytic count mismatch");

    double gmax = 0.0;
    for (const Tensor* g : analytic)
        for (double v : g->data) gmax = std::max(gmax, std::abs(v));

    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        const Tensor& g = *analytic[p];
        require_shape(t.same_shape(g), "grad_check gradient shape");
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + h;
            const double up = loss();
            t.data[i] = saved - h;
            const double down = loss();
            t.data[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ga = g.data[i];
            const double denom = std::max({std::abs(fd), std::abs(ga), 1e-3 * gmax, 1e-12});
            worst = std::max(worst, std::abs(fd - ga) / denom);
        }
    }
    return worst;
}

}  // namespace cmp

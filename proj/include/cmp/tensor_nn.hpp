#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cmp/rng.hpp"
#include "cmp/tensor.hpp"

namespace cmp {

// ---------------------------------------------------------------------------
// Dense layers / MLP
// ---------------------------------------------------------------------------

struct DenseLayer {
    Tensor w;  // [out, in]
    Tensor b;  // [out]

    static DenseLayer create(std::size_t out, std::size_t in) {
        DenseLayer l;
        l.w = Tensor({out, in});
        l.b = Tensor({out});
        return l;
    }
    std::size_t in_dim() const { return w.shape[1]; }
    std::size_t out_dim() const { return w.shape[0]; }
};

// y[N,O] = x[N,I] * w^T + b. The inner loop is the hot path of every query;
// keep it contiguous.
void dense_forward(const double* x, std::size_t n, std::size_t in, const DenseLayer& layer,
                   double* y);

// Accumulates weight/bias grads and writes dL/dx (pass dx = nullptr to skip).
void dense_backward(const double* x, const double* dy, std::size_t n, const DenseLayer& layer,
                    DenseLayer& grad, double* dx);

void relu_inplace(double* x, std::size_t n);

// Three-layer projection MLP: in -> 32 -> 32 -> 128 with ReLU after the first
// two layers (widths configurable).
struct MlpWeights {
    DenseLayer l1, l2, l3;

    static MlpWeights create(std::size_t in = 32, std::size_t h1 = 32, std::size_t h2 = 32,
                             std::size_t out = 128);
    void init(Rng& rng);
    std::size_t in_dim() const { return l1.in_dim(); }
    std::size_t out_dim() const { return l3.out_dim(); }
};

struct MlpGrads {
    DenseLayer l1, l2, l3;
    static MlpGrads zeros_like(const MlpWeights& w);
    void zero();
};

// Saved activations for the backward pass.
struct MlpContext {
    Tensor x;       // [N, in]
    Tensor a1, a2;  // post-ReLU activations
};

// x may carry arbitrary leading batch dimensions; the last extent must equal
// the MLP input width.
Tensor mlp_apply(const Tensor& x, const MlpWeights& w);
Tensor mlp_apply(const Tensor& x, const MlpWeights& w, MlpContext& ctx);

// Returns dL/dx with the same shape as the forward input.
Tensor mlp_backward(const Tensor& upstream, const MlpWeights& w, const MlpContext& ctx,
                    MlpGrads& grads);

// ---------------------------------------------------------------------------
// 3x3 convolution (zero padded, stride 1, same size)
// ---------------------------------------------------------------------------

Tensor conv3x3_apply(const Tensor& x /*[h,w,cin]*/, const Tensor& kernel /*[3,3,cin,cout]*/,
                     const Tensor& bias /*[cout]*/);

// Returns dL/dx; accumulates kernel/bias grads.
Tensor conv3x3_backward(const Tensor& upstream, const Tensor& x, const Tensor& kernel,
                        Tensor& grad_kernel, Tensor& grad_bias);

// ---------------------------------------------------------------------------
// Single-head cross-attention
// ---------------------------------------------------------------------------

struct AttentionWeights {
    Tensor wq, wk, wv, wo;  // all [c, c]

    static AttentionWeights create(std::size_t c);
    void init(Rng& rng);
};

struct AttentionContext {
    Tensor queries;     // [m, c] forward input
    Tensor keys_values; // [n, c]
    Tensor q, k, v;     // projected
    Tensor attn;        // [m, n] softmax rows
    Tensor mix;         // [m, c] attn * v
};

// Scaled dot-product attention with output projection, added residually to
// the queries. Throws on channel mismatch or empty keys_values.
Tensor cross_attention_apply(const Tensor& queries, const Tensor& keys_values,
                             const AttentionWeights& w);
Tensor cross_attention_apply(const Tensor& queries, const Tensor& keys_values,
                             const AttentionWeights& w, AttentionContext& ctx);

// Returns dL/dqueries; accumulates dL/dkeys_values and weight grads.
Tensor cross_attention_backward(const Tensor& upstream, const AttentionWeights& w,
                                const AttentionContext& ctx, AttentionWeights& grads,
                                Tensor& d_keys_values);

// ---------------------------------------------------------------------------
// Weighted cross-entropy
// ---------------------------------------------------------------------------

// Mean over elements of weight[label] * (-log softmax(logits)[label]),
// normalized by the sum of applied weights. `dlogits`, when non-null, receives
// the gradient.
double weighted_cross_entropy(const Tensor& logits /*[..., K]*/,
                              const std::vector<int>& labels,
                              const std::vector<double>& class_weights,
                              Tensor* dlogits = nullptr);

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    Tensor m, v;
    std::uint64_t step = 0;

    static OptimizerState zeros_like(const Tensor& param);
};

// Decoupled-weight-decay update with bias correction. Throws TrainingError on
// non-finite gradients.
void adamw_step(Tensor& param, const Tensor& grad, OptimizerState& state,
                const AdamWConfig& cfg);

// Linear warmup to base_lr, then cosine annealing to zero.
double lr_at(std::uint64_t step, std::uint64_t total_steps, std::uint64_t warmup_steps,
             double base_lr);

// Rounds every entry to the nearest f32 value. Trainers apply this after each
// optimizer step so that freezing to the f32 file format is lossless.
void snap_to_f32(Tensor& t);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Central finite differences against precomputed analytic gradients. `loss`
// must re-evaluate the scalar objective from the current parameter values.
// Returns the worst relative error across all coordinates.
double grad_check(const std::function<double()>& loss, const std::vector<Tensor*>& params,
                  const std::vector<const Tensor*>& analytic, double h);

}  // namespace cmp

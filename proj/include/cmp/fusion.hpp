#pragma once

#include "cmp/tensor.hpp"
#include "cmp/tensor_nn.hpp"

namespace cmp {

// ---------------------------------------------------------------------------
// Dense conv fusion: concat(sensor + pos, prior + pos) -> 3x3 conv -> ReLU.
// Output channel width equals the sensor width so downstream heads are
// unchanged.
// ---------------------------------------------------------------------------

struct ConvFusionWeights {
    Tensor kernel;      // [3, 3, cs+cp, cs]
    Tensor bias;        // [cs]
    Tensor pos_sensor;  // [h, w, cs], learned per-cell additive embedding
    Tensor pos_prior;   // [h, w, cp]

    static ConvFusionWeights create(std::size_t h, std::size_t w, std::size_t cs, std::size_t cp);
    void init(Rng& rng);
};

struct ConvFusionGrads {
    Tensor kernel, bias, pos_sensor, pos_prior;
    static ConvFusionGrads zeros_like(const ConvFusionWeights& w);
    void zero();
};

struct ConvFuseContext {
    Tensor stacked;  // [h, w, cs+cp] conv input
    Tensor out;      // post-ReLU output (mask source)
};

Tensor conv_fuse(const Tensor& x_sensor /*[h,w,cs]*/, const Tensor& x_prior /*[h,w,cp]*/,
                 const ConvFusionWeights& w);
Tensor conv_fuse(const Tensor& x_sensor, const Tensor& x_prior, const ConvFusionWeights& w,
                 ConvFuseContext& ctx);

// Writes dL/dx_sensor and dL/dx_prior; accumulates weight grads.
void conv_fuse_backward(const Tensor& upstream, const ConvFusionWeights& w,
                        const ConvFuseContext& ctx, ConvFusionGrads& grads, Tensor& d_sensor,
                        Tensor& d_prior);

// ---------------------------------------------------------------------------
// Token fusion: sparse queries cross-attend to the flattened prior map.
// Keys/values are the projected prior features plus a learned free-parameter
// positional embedding; queries are modulated by a linear projection of their
// own positional embedding.
// ---------------------------------------------------------------------------

struct TokenFusionWeights {
    DenseLayer prior_proj;      // 128 -> c
    Tensor e_prior;             // [h, w, c] learned free parameters
    DenseLayer query_pos_proj;  // p -> c
    AttentionWeights attn;      // width c

    static TokenFusionWeights create(std::size_t h, std::size_t w, std::size_t c,
                                     std::size_t prior_dim, std::size_t pos_dim);
    void init(Rng& rng);
};

struct TokenFusionGrads {
    DenseLayer prior_proj;
    Tensor e_prior;
    DenseLayer query_pos_proj;
    AttentionWeights attn;
    static TokenFusionGrads zeros_like(const TokenFusionWeights& w);
    void zero();
};

struct TokenFuseContext {
    Tensor prior_flat;  // [h*w, 128]
    Tensor kv;          // [h*w, c]
    Tensor q_in;        // [m, c]
    Tensor query_pos;   // [m, p]
    AttentionContext attn;
};

Tensor token_fuse(const Tensor& queries /*[m,c]*/, const Tensor& x_prior /*[h,w,128]*/,
                  const Tensor& query_pos /*[m,p]*/, const TokenFusionWeights& w);
Tensor token_fuse(const Tensor& queries, const Tensor& x_prior, const Tensor& query_pos,
                  const TokenFusionWeights& w, TokenFuseContext& ctx);

// Writes dL/dqueries and dL/dx_prior; accumulates weight grads.
void token_fuse_backward(const Tensor& upstream, const TokenFusionWeights& w,
                         const TokenFuseContext& ctx, TokenFusionGrads& grads, Tensor& d_queries,
                         Tensor& d_prior);

}  // namespace cmp

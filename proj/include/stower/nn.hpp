#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stower/corpus.hpp"
#include "stower/ops.hpp"
#include "stower/tensor.hpp"

namespace stower {

/// Named parameters in deterministic (construction) order.
using ParamMap = std::vector<std::pair<std::string, Tensor>>;

std::vector<Tensor> param_tensors(const ParamMap& params);
std::uint64_t param_checksum(const ParamMap& params);
std::vector<std::vector<float>> snapshot_params(const ParamMap& params);
void restore_params(const ParamMap& params, const std::vector<std::vector<float>>& snapshot);
void set_requires_grad(const ParamMap& params, bool requires_grad);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear init(int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm init(int d);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
    void collect(const std::string& prefix, ParamMap& out) const;
};

struct MultiHeadAttention {
    int heads = 1;
    int head_dim = 0;
    Linear q, k, v, out;

    static MultiHeadAttention init(int d_model, int heads, Rng& rng);
    /// attn_mask: additive [B, 1, L, L] (or undefined for none).
    Tensor forward(const Tensor& x, const Tensor& attn_mask) const;
    /// Raw per-head q/k of one input row block, for attention inspection:
    /// returns ([H, dh] for the query position, [H, L, dh] keys).
    std::pair<Tensor, Tensor> project_qk(const Tensor& x_single /*[1, L, D]*/) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

struct FeedForward {
    Linear fc1, fc2;

    static FeedForward init(int d_model, int ffn_dim, Rng& rng);
    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
    void collect(const std::string& prefix, ParamMap& out) const;
};

/// Pre-norm residual block: x + Attn(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    FeedForward ffn;

    static TransformerBlock init(int d_model, int heads, int ffn_dim, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& attn_mask) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

struct TransformerStack {
    std::vector<TransformerBlock> blocks;
    LayerNorm final_ln;

    static TransformerStack init(int layers, int d_model, int heads, int ffn_dim, Rng& rng);
    Tensor forward(const Tensor& x, const Tensor& attn_mask) const;
    void collect(const std::string& prefix, ParamMap& out) const;
};

/// Additive key-padding mask [B, 1, L, L] from a batch validity mask.
Tensor padding_attn_mask(const Batch& batch);
/// Additive causal mask [1, 1, L, L]; optionally combined with padding.
Tensor causal_attn_mask(int len);
Tensor combined_attn_mask(const Batch& batch, bool causal);

/// x [B, L, D] -> [B, D] at position 0.
Tensor first_token(const Tensor& x);

/// Batch validity mask as a [B, L] tensor (no grad).
Tensor batch_mask_tensor(const Batch& batch);

} // namespace stower

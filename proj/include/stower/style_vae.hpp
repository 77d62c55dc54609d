#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stower/backbone.hpp"
#include "stower/nn.hpp"

namespace stower {

struct VaeConfig {
    int d_latent = 64;   // latent dim == model width of encoder/decoder
    int layers = 2;
    int heads = 2;
    int ffn_dim = 256;
    int max_len = 64;
    float logvar_clamp = 8.0f;
};

/// Diagonal Gaussian posterior: mu and elementwise log-variance, [B, d].
struct LatentDistribution {
    Tensor mu;
    Tensor log_var;
};

/// External style table: one learned d-dim row per style, produced by a
/// linear map from the one-hot style id (i.e. the weight rows themselves).
class StyleEmbeddingTable {
public:
    StyleEmbeddingTable() = default;
    static StyleEmbeddingTable init(int styles, int dim, Rng& rng);

    Tensor weight;  // [k, d]

    int styles() const { return weight.shape()[0]; }
    int dim() const { return weight.shape()[1]; }

    /// Graph-connected row lookup for a batch of style ids -> [B, d].
    Tensor rows_for(std::span<const int> style_ids) const;
    /// Detached single row [d].
    std::vector<float> row_values(int style) const;

    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }
    ParamMap params(const std::string& prefix = "style_table") const;

private:
    bool frozen_ = false;
};

/// Transformer VAE: encoder stack, one-layer mu/log-var heads read out at
/// the first token, and an autoregressive decoder conditioned by adding
/// the latent (plus style row) to every input embedding.
class VaeModel {
public:
    VaeModel() = default;
    static VaeModel init(const VaeConfig& config, int vocab_size, int backbone_dim, Rng& rng);

    LatentDistribution encode_latent(const Tensor& features, const Batch& batch) const;

    /// Teacher-forced logits [B*(L-1), V] with per-position include mask
    /// (non-pad targets) and the flat target ids.
    struct DecodeForTraining {
        Tensor logits;
        std::vector<std::int32_t> targets;
        std::vector<std::uint8_t> include;
    };
    DecodeForTraining decoder_teacher_logits(const Batch& batch, const Tensor& conditioning) const;

    /// Greedy autoregressive decode from bos; stops at eos or after
    /// max_len content tokens. Returns bos ... (eos).
    std::vector<std::int32_t> decode_greedy(std::span<const float> conditioning, int max_len) const;

    ParamMap params(const std::string& prefix = "vae") const;
    const VaeConfig& config() const { return config_; }
    int vocab_size() const { return vocab_size_; }

    Linear input_proj;          // backbone_dim -> d
    TransformerStack encoder;
    TransformerBlock mu_head;
    TransformerBlock var_head;
    Tensor dec_token_emb;       // [V, d]
    Tensor dec_pos_emb;         // [max_len + 2, d]
    TransformerStack decoder;
    Linear out_proj;            // d -> V

private:
    VaeConfig config_;
    int vocab_size_ = 0;
    int backbone_dim_ = 0;
};

/// z = mu + exp(log_var / 2) * eps  (reparameterized sample).
Tensor sample_latent(const LatentDistribution& dist, const Tensor& eps);

/// Mean over the batch of 0.5 * sum_j (mu^2 + sigma^2 - 1 - log sigma^2).
Tensor kl_term(const LatentDistribution& dist);

/// -log sigmoid(cos(s_style, sg(z))) averaged over the batch; z is
/// detached here so gradients reach only the style table.
Tensor style_loss(const StyleEmbeddingTable& table, const Tensor& z, std::span<const int> styles);

/// Token-mean reconstruction NLL under teacher forcing.
Tensor reconstruction_nll(const VaeModel& model, const Batch& batch, const Tensor& conditioning);

/// lambda_vae * (nll + beta * kl) + lambda_style * style.
Tensor combine_stage1_loss(const Tensor& nll, const Tensor& kl, const Tensor& style,
                           float lambda_vae, float lambda_style, float beta);

struct Stage1Loss {
    Tensor total;
    float nll = 0.0f;
    float kl = 0.0f;
    float style = 0.0f;
};

/// Full stage-I objective on one batch. `eps` is the injected
/// reparameterization noise [B, d]. The style table sees gradients only
/// through the style term; the decoder conditioning uses sg(s_x).
Stage1Loss stage1_total_loss(const VaeModel& model, const StyleEmbeddingTable& table,
                             const Tensor& features, const Batch& encoder_batch,
                             const Batch& target_batch, const Tensor& eps,
                             float lambda_vae, float lambda_style, float beta);

} // namespace stower

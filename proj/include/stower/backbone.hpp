#pragma once

#include <cstdint>
#include <vector>

#include "stower/corpus.hpp"
#include "stower/nn.hpp"

namespace stower {

struct BackboneConfig {
    enum class Mode { kMlm, kIdentity };

    int layers = 2;
    int d_model = 64;
    int heads = 2;
    int ffn_dim = 128;
    int max_len = 64;
    Mode mode = Mode::kMlm;
    bool trainable = false;  // identity mode may train jointly with the VAE
    float mask_rate = 0.15f;
    int epochs = 20;
    float lr = 1e-3f;
    int token_budget = 8092;
    float clip_norm = 1.0f;
};

/// Small masked-token-pretrained encoder standing in for a large
/// pre-trained LM; frozen after pretraining so every downstream stage
/// sees the same features.
class BackboneModel {
public:
    BackboneModel() = default;

    static BackboneModel init(const BackboneConfig& config, int vocab_size, Rng& rng);

    /// Contextual features [B, L, d_model]; identity mode returns
    /// token embedding + position directly.
    Tensor encode(const Batch& batch) const;

    /// MLM logits [B*L, V] for pretraining.
    Tensor mlm_logits(const Batch& batch) const;

    ParamMap params(const std::string& prefix = "backbone") const;
    void set_frozen(bool frozen);
    bool frozen() const { return frozen_; }

    const BackboneConfig& config() const { return config_; }
    int vocab_size() const { return vocab_size_; }
    int d_model() const { return config_.d_model; }

    Tensor token_emb;  // [V, D]
    Tensor pos_emb;    // [max_len + 2, D]
    TransformerStack stack;
    Linear mlm_head;   // [D, V]

private:
    BackboneConfig config_;
    int vocab_size_ = 0;
    bool frozen_ = false;
};

struct MlmTrainLog {
    std::vector<float> step_losses;
    std::vector<float> epoch_means;
    float final_loss = 0.0f;
};

/// Trains on the union of all styles with random token masking, then
/// returns the model frozen. Diverging loss raises TrainingError.
BackboneModel pretrain_backbone_mlm(const StyleCorpus& corpus, int vocab_size,
                                    const BackboneConfig& config, std::uint64_t seed,
                                    MlmTrainLog* log = nullptr);

} // namespace stower

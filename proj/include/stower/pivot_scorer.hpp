#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "stower/backbone.hpp"

namespace stower {

struct ScorerConfig {
    int heads = 2;            // attention heads of the appended layer
    int ffn_dim = 128;
    float gamma = 0.05f;      // sharpness of the importance softmax
    int epochs = 3;
    float lr = 1e-3f;
    int token_budget = 2048;
    float holdout_frac = 0.1f;
    float clip_norm = 1.0f;
};

/// Per-token pivot probabilities over the content tokens of one sentence.
/// Sums to 1 (up to rounding) by construction.
struct ImportanceScores {
    std::vector<float> alpha;
};

/// The realized masking decisions for one sentence.
struct MaskPlan {
    std::vector<float> draws;          // p_i per content token, always drawn
    std::vector<std::uint8_t> masked;  // selected && p_i < alpha_i
    bool sentence_selected = false;
};

/// Style classifier: frozen backbone + one appended transformer layer,
/// softmax head on the first-token representation. The appended layer's
/// per-head q/k projections drive the importance scores.
class ScorerModel {
public:
    ScorerModel() = default;
    static ScorerModel init(std::shared_ptr<const BackboneModel> backbone, int styles,
                            const ScorerConfig& config, Rng& rng);

    Tensor classify_logits(const Batch& batch) const;  // [B, k]
    std::vector<int> predict(const Batch& batch) const;

    /// Eq.-style attention readout: mean over heads of
    /// softmax over content tokens of (q_first . k_w / gamma).
    ImportanceScores importance_scores(const Sentence& sentence) const;

    ParamMap params(const std::string& prefix = "scorer") const;  // appended layer + head only
    void set_frozen(bool frozen);

    const BackboneModel& backbone() const { return *backbone_; }
    std::shared_ptr<const BackboneModel> backbone_ptr() const { return backbone_; }
    float gamma() const { return config_.gamma; }
    int styles() const { return styles_; }
    const ScorerConfig& config() const { return config_; }

    TransformerBlock layer;
    Linear cls_head;

    void attach_backbone(std::shared_ptr<const BackboneModel> backbone) { backbone_ = std::move(backbone); }

private:
    std::shared_ptr<const BackboneModel> backbone_;
    ScorerConfig config_;
    int styles_ = 0;
};

/// Importance softmax for fixed per-head logits (content tokens only):
/// alpha = mean over heads of softmax(logits_head / gamma).
std::vector<float> importance_from_logits(const std::vector<std::vector<float>>& per_head_logits,
                                          float gamma);

/// Masks content tokens whose uniform draw falls below their score.
/// Draws are consumed in content order regardless of `selected`, so a
/// seed fully determines the plan. bos/eos are never touched.
std::pair<Sentence, MaskPlan> mask_sentence(const Sentence& sentence, const ImportanceScores& scores,
                                            bool selected, Rng& rng);

struct ScorerTrainResult {
    ScorerModel model;
    float holdout_accuracy = 0.0f;
    std::vector<float> epoch_losses;
};

ScorerTrainResult train_style_classifier(const StyleCorpus& corpus,
                                         std::shared_ptr<const BackboneModel> backbone,
                                         const ScorerConfig& config, std::uint64_t seed);

} // namespace stower

#pragma once

#include <cstdint>
#include <vector>

#include "stower/pivot_scorer.hpp"
#include "stower/style_vae.hpp"

namespace stower {

struct TrainConfig {
    float lambda_vae = 1.0f;
    float lambda_style = 1.0f;
    float beta = 1.0f;
    float lr = 0.0005f;
    int token_budget = 8092;
    int epochs = 10;
    std::uint64_t seed = 7;
    float stage2_mask_fraction = 0.5f;
    float stage2_lr_scale = 0.5f;   // fine-tuning runs at half the stage-I rate
    float kl_warmup_frac = 0.1f;    // linear beta warm-up over the first steps
    float clip_norm = 1.0f;
    int patience = 3;               // early stop on held-out plateau
    float holdout_frac = 0.05f;
    bool early_stop = true;
};

struct StepLog {
    int step = 0;
    float nll = 0.0f;
    float kl = 0.0f;
    float style = 0.0f;
    float total = 0.0f;
};

struct TrainResult {
    std::vector<StepLog> steps;
    std::vector<float> epoch_mean_total;
    std::vector<float> holdout_losses;
    int epochs_run = 0;
    // stage II masking audit
    long mask_sentences_seen = 0;
    long mask_sentences_selected = 0;
    long mask_tokens_masked = 0;
};

/// Stage I (VAE + style embeddings): reconstruction with sg(s_x)
/// conditioning, KL with beta warm-up, cosine style loss into the table.
TrainResult train_stage1(VaeModel& vae, StyleEmbeddingTable& table, const BackboneModel& backbone,
                         const StyleCorpus& corpus, const TrainConfig& config);

/// Stage II (pivot-word fine-tune): a fresh random fraction of sentences
/// per epoch is masked by importance scores and reconstructed to the
/// original form; the style table stays bitwise frozen.
TrainResult train_stage2(VaeModel& vae, StyleEmbeddingTable& table, const BackboneModel& backbone,
                         const ScorerModel& scorer, const StyleCorpus& corpus,
                         const TrainConfig& config);

} // namespace stower

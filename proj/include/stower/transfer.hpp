#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stower/metrics_fwd.hpp"
#include "stower/style_vae.hpp"

namespace stower {

struct TransferRequest {
    int source_style = 0;
    int target_style = 1;
    float weight = 1.0f;   // style strength w
    int max_len = 64;
    bool sample = false;   // stochastic z instead of the posterior mean
};

/// z' = z + w * (s_target - s_source); plain vector arithmetic, no
/// renormalization. z may be [d] or [B, d].
Tensor adjust_latent(const Tensor& z, const StyleEmbeddingTable& table, const TransferRequest& request);

/// Full pipeline: features -> posterior mean (or sample) -> latent
/// adjustment -> greedy decode -> text.
std::string transfer_sentence(const BackboneModel& backbone, const VaeModel& vae,
                              const StyleEmbeddingTable& table, const Vocab& vocab,
                              const std::string& text, const TransferRequest& request,
                              Rng* sample_rng = nullptr);

struct SweepRow {
    float w = 0.0f;
    double acc = 0.0;
    double ppl = 0.0;
    double bleu = 0.0;
    double gm = 0.0;
};

struct SweepModels {
    const BackboneModel* backbone = nullptr;
    const VaeModel* vae = nullptr;
    const StyleEmbeddingTable* table = nullptr;
    const Vocab* vocab = nullptr;
    const EvalClassifier* classifier = nullptr;
    const CharLm* char_lm = nullptr;
};

/// Transfers every test sentence to the opposite style at each weight and
/// scores the outputs (accuracy / char-LM perplexity / BLEU-vs-source /
/// geometric mean). Two-style corpora only.
std::vector<SweepRow> sweep_style_weight(const SweepModels& models,
                                         const std::vector<Sentence>& test_set,
                                         const std::vector<float>& weights, int max_len = 64);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// One sweep point; also returns the transferred texts for reuse.
SweepRow evaluate_transfer(const SweepModels& models, const std::vector<Sentence>& test_set,
                           float weight, int max_len, std::vector<std::string>* outputs = nullptr);

} // namespace stower

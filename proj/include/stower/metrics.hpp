#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stower/nn.hpp"
#include "stower/optim.hpp"

namespace stower {

// ---- transfer-accuracy classifier ----------------------------------------

struct EvalClassifierTrainResult;

/// Linear classifier over sign-hashed unigram+bigram counts; the
/// evaluation-side stand-in for an external fastText model. Entirely
/// disjoint from the transfer model's parameters.
class EvalClassifier {
public:
    EvalClassifier() = default;
    EvalClassifier(int styles, int hash_bits);

    int predict(const std::string& text) const;
    std::vector<double> scores(const std::string& text) const;

    int styles() const { return styles_; }
    int hash_bits() const { return hash_bits_; }

    ParamMap params(const std::string& prefix = "eval_classifier") const;
    static EvalClassifier from_params(int styles, int hash_bits, const ParamMap& params);

    struct TrainOptions {
        int hash_bits = 18;
        int epochs = 5;
        float lr = 0.5f;
        float holdout_frac = 0.1f;
    };
    static EvalClassifierTrainResult train(const std::vector<std::pair<std::string, int>>& labeled,
                                           int styles, const TrainOptions& options, std::uint64_t seed);

    /// (index, signed value) features for one text: averaged unigram and
    /// bigram hashes.
    static std::vector<std::pair<std::uint32_t, float>> features(const std::string& text, int hash_bits);

    Tensor weight;  // [k * dim] flattened
    Tensor bias;    // [k]

private:
    int styles_ = 0;
    int hash_bits_ = 0;
};

struct EvalClassifierTrainResult {
    EvalClassifier model;
    float holdout_accuracy = 0.0f;
};

/// 100 * (# classified as target) / total.
double transfer_accuracy(const EvalClassifier& classifier, std::span<const std::string> sentences,
                         int target_style);

// ---- character LM perplexity ----------------------------------------------

struct CharLmConfig {
    int hidden = 48;
    int embed = 24;
    int epochs = 3;
    float lr = 5e-3f;
    int batch = 64;
    float clip_norm = 1.0f;
};

/// Single-layer LSTM over characters; perplexity is
/// exp(total NLL / predicted characters). Unknown characters map to unk.
class CharLm {
public:
    static constexpr std::int32_t kBosChar = 0;
    static constexpr std::int32_t kEosChar = 1;
    static constexpr std::int32_t kUnkChar = 2;

    CharLm() = default;
    static CharLm init(std::vector<std::string> char_vocab, const CharLmConfig& config, Rng& rng);

    static std::vector<std::string> build_char_vocab(std::span<const std::string> lines);

    std::vector<std::int32_t> encode(const std::string& text) const;  // bos + chars
    /// Total NLL and predicted-char count (len + 1 for eos) per sentence.
    std::pair<double, std::int64_t> sentence_nll(const std::string& text) const;

    int alphabet_size() const { return static_cast<int>(char_vocab_.size()); }
    const std::vector<std::string>& char_vocab() const { return char_vocab_; }
    const CharLmConfig& config() const { return config_; }

    ParamMap params(const std::string& prefix = "char_lm") const;

    /// Teacher-forced logits for same-length sequences: ids [B, T] ->
    /// [B*T, C] predicting the next char at each step.
    Tensor step_logits(const std::vector<std::int32_t>& ids, int rows, int cols) const;

    Tensor emb;      // [C, E]
    Tensor wx;       // [E, 4H]
    Tensor wh;       // [H, 4H]
    Tensor gate_b;   // [4H]
    Linear out;      // [H, C]

private:
    std::vector<std::string> char_vocab_;
    std::vector<std::int32_t> byte_to_id_;
    CharLmConfig config_;

    void rebuild_byte_map();
};

CharLm train_char_lm(std::span<const std::string> lines, const CharLmConfig& config, std::uint64_t seed,
                     std::vector<float>* epoch_losses = nullptr);

double perplexity(const CharLm& lm, std::span<const std::string> sentences);

// ---- BLEU -------------------------------------------------------------------

/// Corpus-level tokenized BLEU-4, multi-bleu conventions: clipped n-gram
/// precision (max clip across references), closest-reference-length
/// brevity penalty, no smoothing (a zero precision zeroes the score).
/// Returns a percentage in [0, 100].
double bleu_score(const std::vector<std::string>& hypotheses,
                  const std::vector<std::vector<std::string>>& reference_sets);

/// Single-reference convenience form.
double bleu_score(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

/// Mean of single-reference corpus scores across parallel reference files.
double bleu_score_mean_refs(const std::vector<std::string>& hypotheses,
                            const std::vector<std::vector<std::string>>& reference_corpora);

// ---- aggregate ---------------------------------------------------------------

/// Cube root of acc * bleu * (1 / ln ppl); acc and bleu on the 0-100 scale.
double geometric_mean(double acc_percent, double bleu, double ppl);

struct EvalReport {
    double acc = 0.0;
    double ppl = 0.0;
    double bleu = 0.0;
    double gm = 0.0;
    int n = 0;
};

/// Spearman rank correlation (average ranks for ties).
double spearman_rho(std::span<const double> x, std::span<const double> y);

} // namespace stower

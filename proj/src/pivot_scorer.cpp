#include "stower/pivot_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "stower/optim.hpp"

namespace stower {

ScorerModel ScorerModel::init(std::shared_ptr<const BackboneModel> backbone, int styles,
                              const ScorerConfig& config, Rng& rng) {
    if (!backbone) throw UsageError("scorer: backbone required");
    if (config.gamma <= 0.0f) throw UsageError("scorer: gamma must be positive");
    if (config.gamma > 1.0f) {
        std::fprintf(stderr, "warning: scorer gamma %.3f is outside (0,1]; scores will be flat\n",
                     static_cast<double>(config.gamma));
    }
    ScorerModel model;
    model.backbone_ = std::move(backbone);
    model.config_ = config;
    model.styles_ = styles;
    const int d = model.backbone_->d_model();
    model.layer = TransformerBlock::init(d, config.heads, config.ffn_dim, rng);
    model.cls_head = Linear::init(d, styles, rng);
    return model;
}

Tensor ScorerModel::classify_logits(const Batch& batch) const {
    Tensor features = backbone_->encode(batch);
    Tensor h = layer.forward(features, padding_attn_mask(batch));
    return cls_head.forward(first_token(h));
}

std::vector<int> ScorerModel::predict(const Batch& batch) const {
    Tensor logits = classify_logits(batch);
    std::vector<int> out(static_cast<std::size_t>(batch.rows));
    std::span<const float> v = logits.data();
    for (int r = 0; r < batch.rows; ++r) {
        int best = 0;
        for (int c = 1; c < styles_; ++c) {
            if (v[static_cast<std::size_t>(r * styles_ + c)] > v[static_cast<std::size_t>(r * styles_ + best)]) {
                best = c;
            }
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

std::vector<float> importance_from_logits(const std::vector<std::vector<float>>& per_head_logits,
                                          float gamma) {
    if (per_head_logits.empty()) throw UsageError("importance_from_logits: no heads");
    if (gamma <= 0.0f) throw UsageError("importance_from_logits: gamma must be positive");
    const std::size_t n = per_head_logits[0].size();
    if (n == 0) throw UsageError("importance_from_logits: empty content");
    std::vector<double> acc(n, 0.0);
    for (const std::vector<float>& logits : per_head_logits) {
        if (logits.size() != n) throw UsageError("importance_from_logits: ragged head logits");
        double mx = -1e30;
        for (float v : logits) mx = std::max(mx, static_cast<double>(v) / gamma);
        double total = 0.0;
        std::vector<double> e(n);
        for (std::size_t i = 0; i < n; ++i) {
            e[i] = std::exp(static_cast<double>(logits[i]) / gamma - mx);
            total += e[i];
        }
        for (std::size_t i = 0; i < n; ++i) acc[i] += e[i] / total;
    }
    std::vector<float> alpha(n);
    const double inv_heads = 1.0 / static_cast<double>(per_head_logits.size());
    for (std::size_t i = 0; i < n; ++i) alpha[i] = static_cast<float>(acc[i] * inv_heads);
    return alpha;
}

ImportanceScores ScorerModel::importance_scores(const Sentence& sentence) const {
    const int content = sentence.content_length();
    if (content <= 0) throw UsageError("importance_scores: sentence has no content tokens");

    const Sentence* row[] = {&sentence};
    Batch batch = make_batch(row, {});
    Tensor features = backbone_->encode(batch);
    // q/k exactly as the appended layer's attention sees them (pre-norm input)
    auto [q_first, k_heads] = layer.attn.project_qk(layer.ln1.forward(features));

    const int heads = layer.attn.heads;
    const int dh = layer.attn.head_dim;
    const int L = batch.cols;
    std::span<const float> qv = q_first.data();   // [H, dh]
    std::span<const float> kv = k_heads.data();   // [H, L, dh]

    std::vector<std::vector<float>> logits(static_cast<std::size_t>(heads),
                                           std::vector<float>(static_cast<std::size_t>(content)));
    for (int h = 0; h < heads; ++h) {
        for (int w = 0; w < content; ++w) {
            const int pos = w + 1;  // skip bos; positions 1..L-2 are content
            double dot = 0.0;
            for (int j = 0; j < dh; ++j) {
                dot += static_cast<double>(qv[static_cast<std::size_t>(h * dh + j)]) *
                       static_cast<double>(kv[static_cast<std::size_t>((h * L + pos) * dh + j)]);
            }
            logits[static_cast<std::size_t>(h)][static_cast<std::size_t>(w)] = static_cast<float>(dot);
        }
    }
    return ImportanceScores{importance_from_logits(logits, config_.gamma)};
}

ParamMap ScorerModel::params(const std::string& prefix) const {
    ParamMap out;
    layer.collect(prefix + ".layer", out);
    cls_head.collect(prefix + ".cls_head", out);
    return out;
}

void ScorerModel::set_frozen(bool frozen) {
    set_requires_grad(params(), !frozen);
}

std::pair<Sentence, MaskPlan> mask_sentence(const Sentence& sentence, const ImportanceScores& scores,
                                            bool selected, Rng& rng) {
    const int content = sentence.content_length();
    if (static_cast<int>(scores.alpha.size()) != content) {
        throw UsageError("mask_sentence: " + std::to_string(scores.alpha.size()) +
                         " scores for " + std::to_string(content) + " content tokens");
    }
    Sentence masked = sentence;
    MaskPlan plan;
    plan.sentence_selected = selected;
    plan.draws.resize(static_cast<std::size_t>(content));
    plan.masked.resize(static_cast<std::size_t>(content));
    for (int i = 0; i < content; ++i) {
        const float p = rng.uniform_float();
        plan.draws[static_cast<std::size_t>(i)] = p;
        const bool hit = selected && p < scores.alpha[static_cast<std::size_t>(i)];
        plan.masked[static_cast<std::size_t>(i)] = hit ? 1 : 0;
        if (hit) masked.tokens[static_cast<std::size_t>(i + 1)] = Vocab::kMask;
    }
    return {std::move(masked), std::move(plan)};
}

ScorerTrainResult train_style_classifier(const StyleCorpus& corpus,
                                         std::shared_ptr<const BackboneModel> backbone,
                                         const ScorerConfig& config, std::uint64_t seed) {
    if (corpus.k < 2) throw UsageError("train_style_classifier: need at least 2 styles");
    Rng init_rng = derive_rng(seed, "scorer.init");
    ScorerTrainResult result;
    result.model = ScorerModel::init(std::move(backbone), corpus.k, config, init_rng);
    ScorerModel& model = result.model;

    // deterministic holdout split
    Rng split_rng = derive_rng(seed, "scorer.split");
    std::vector<int> order(corpus.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    const int holdout = std::max(1, static_cast<int>(static_cast<double>(order.size()) * config.holdout_frac));
    std::vector<Sentence> train_set, holdout_set;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Sentence& s = corpus.sentences[static_cast<std::size_t>(order[i])];
        if (static_cast<int>(i) < holdout) {
            holdout_set.push_back(s);
        } else {
            train_set.push_back(s);
        }
    }

    ParamMap params = model.params();
    Adam opt(param_tensors(params), AdamConfig{.lr = config.lr});
    Rng shuffle_rng = derive_rng(seed, "scorer.shuffle");

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_sum = 0.0;
        int batches_run = 0;
        for (Batch& batch : batch_by_tokens(train_set, config.token_budget, shuffle_rng)) {
            Tensor logits = model.classify_logits(batch);
            std::vector<std::int32_t> targets(batch.styles.begin(), batch.styles.end());
            Tensor loss = cross_entropy_nll(logits, targets);
            const float value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingError("style classifier diverged at epoch " + std::to_string(epoch));
            }
            opt.zero_grad();
            backward(loss);
            clip_global_norm(param_tensors(params), config.clip_norm);
            opt.step();
            epoch_sum += static_cast<double>(value);
            ++batches_run;
        }
        if (batches_run > 0) result.epoch_losses.push_back(static_cast<float>(epoch_sum / batches_run));
    }

    int correct = 0;
    Rng noshuffle(0);
    for (Batch& batch : batch_by_tokens(holdout_set, config.token_budget, noshuffle)) {
        std::vector<int> pred = model.predict(batch);
        for (int r = 0; r < batch.rows; ++r) {
            if (pred[static_cast<std::size_t>(r)] == batch.styles[static_cast<std::size_t>(r)]) ++correct;
        }
    }
    result.holdout_accuracy = holdout_set.empty()
                                  ? 0.0f
                                  : static_cast<float>(correct) / static_cast<float>(holdout_set.size());
    model.set_frozen(true);
    return result;
}

} // namespace stower

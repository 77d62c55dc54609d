#include "stower/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stower/optim.hpp"

namespace stower {

namespace {

struct Split {
    std::vector<Sentence> train;
    std::vector<Sentence> holdout;
};

Split split_corpus(const StyleCorpus& corpus, float holdout_frac, Rng& rng) {
    std::vector<int> order(corpus.sentences.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    Split split;
    const int holdout = static_cast<int>(static_cast<double>(order.size()) * holdout_frac);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Sentence& s = corpus.sentences[static_cast<std::size_t>(order[i])];
        if (static_cast<int>(i) < holdout) {
            split.holdout.push_back(s);
        } else {
            split.train.push_back(s);
        }
    }
    return split;
}

Tensor zero_noise(int rows, int d) { return Tensor::zeros({rows, d}); }

Tensor gaussian_noise(int rows, int d, Rng& rng) {
    Tensor eps = Tensor::zeros({rows, d});
    for (float& v : eps.data()) v = static_cast<float>(rng.normal());
    return eps;
}

// Deterministic evaluation loss (eps = 0) on a sentence set.
float holdout_loss(const VaeModel& vae, const StyleEmbeddingTable& table,
                   const BackboneModel& backbone, const std::vector<Sentence>& sentences,
                   const TrainConfig& config, float lambda_style) {
    if (sentences.empty()) return 0.0f;
    Rng noshuffle(0);
    double total = 0.0;
    int count = 0;
    for (const Batch& batch : batch_by_tokens(sentences, config.token_budget, noshuffle)) {
        Tensor features = backbone.encode(batch);
        Stage1Loss loss = stage1_total_loss(vae, table, features, batch, batch,
                                            zero_noise(batch.rows, vae.config().d_latent),
                                            config.lambda_vae, lambda_style, config.beta);
        total += static_cast<double>(loss.total.item());
        ++count;
    }
    return count > 0 ? static_cast<float>(total / count) : 0.0f;
}

struct EpochRunner {
    TrainConfig config;
    ParamMap trainable;
    Adam* opt = nullptr;
    TrainResult result;
    std::vector<std::vector<float>> last_good;
    int global_step = 0;

    void finish_epoch(float epoch_mean, float holdout, bool* stop) {
        result.epoch_mean_total.push_back(epoch_mean);
        result.holdout_losses.push_back(holdout);
        ++result.epochs_run;
        last_good = snapshot_params(trainable);
        if (!config.early_stop || config.patience <= 0) return;
        const auto& h = result.holdout_losses;
        if (static_cast<int>(h.size()) > config.patience) {
            const float best_before =
                *std::min_element(h.begin(), h.end() - config.patience);
            const float best_recent =
                *std::min_element(h.end() - config.patience, h.end());
            if (best_recent > best_before - 1e-4f) *stop = true;
        }
    }

    void abort_on_nan(float value, const char* stage) {
        if (std::isfinite(value)) return;
        if (!last_good.empty()) restore_params(trainable, last_good);
        throw TrainingError(std::string(stage) + ": loss became non-finite at step " +
                            std::to_string(global_step) + "; parameters restored to last epoch");
    }
};

} // namespace

TrainResult train_stage1(VaeModel& vae, StyleEmbeddingTable& table, const BackboneModel& backbone,
                         const StyleCorpus& corpus, const TrainConfig& config) {
    Rng split_rng = derive_rng(config.seed, "stage1.split");
    Rng shuffle_rng = derive_rng(config.seed, "stage1.shuffle");
    Rng noise_rng = derive_rng(config.seed, "stage1.noise");
    Split split = split_corpus(corpus, config.holdout_frac, split_rng);
    if (split.train.empty()) throw UsageError("train_stage1: empty training split");

    EpochRunner runner;
    runner.config = config;
    runner.trainable = vae.params();
    if (!table.frozen()) {
        for (auto& p : table.params()) runner.trainable.push_back(p);
    }
    if (!backbone.frozen()) {
        for (auto& p : backbone.params()) runner.trainable.push_back(p);
    }
    Adam opt(param_tensors(runner.trainable), AdamConfig{.lr = config.lr});
    runner.opt = &opt;

    // warm-up horizon from the first epoch's batch count
    Rng probe_rng = derive_rng(config.seed, "stage1.shuffle");
    const std::size_t batches_per_epoch =
        batch_by_tokens(split.train, config.token_budget, probe_rng).size();
    const int warmup_steps = std::max(
        1, static_cast<int>(config.kl_warmup_frac * static_cast<float>(batches_per_epoch * config.epochs)));

    const int d = vae.config().d_latent;
    bool stop = false;
    for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
        double epoch_sum = 0.0;
        int epoch_batches = 0;
        for (Batch& batch : batch_by_tokens(split.train, config.token_budget, shuffle_rng)) {
            const float beta_t =
                config.beta * std::min(1.0f, static_cast<float>(runner.global_step + 1) /
                                                 static_cast<float>(warmup_steps));
            Tensor features = backbone.encode(batch);
            Tensor eps = gaussian_noise(batch.rows, d, noise_rng);
            Stage1Loss loss = stage1_total_loss(vae, table, features, batch, batch, eps,
                                                config.lambda_vae, config.lambda_style, beta_t);
            const float value = loss.total.item();
            runner.abort_on_nan(value, "stage1");
            opt.zero_grad();
            backward(loss.total);
            clip_global_norm(param_tensors(runner.trainable), config.clip_norm);
            opt.step();
            ++runner.global_step;
            runner.result.steps.push_back(
                {runner.global_step, loss.nll, loss.kl, loss.style, value});
            epoch_sum += static_cast<double>(value);
            ++epoch_batches;
        }
        const float epoch_mean = epoch_batches > 0 ? static_cast<float>(epoch_sum / epoch_batches) : 0.0f;
        runner.finish_epoch(epoch_mean,
                            holdout_loss(vae, table, backbone, split.holdout, config, config.lambda_style),
                            &stop);
    }
    return std::move(runner.result);
}

TrainResult train_stage2(VaeModel& vae, StyleEmbeddingTable& table, const BackboneModel& backbone,
                         const ScorerModel& scorer, const StyleCorpus& corpus,
                         const TrainConfig& config) {
    if (scorer.styles() != corpus.k) throw UsageError("train_stage2: scorer/corpus style mismatch");
    Rng split_rng = derive_rng(config.seed, "stage2.split");
    Rng shuffle_rng = derive_rng(config.seed, "stage2.shuffle");
    Rng noise_rng = derive_rng(config.seed, "stage2.noise");
    Rng select_rng = derive_rng(config.seed, "stage2.select");
    Rng mask_rng = derive_rng(config.seed, "stage2.mask");
    Split split = split_corpus(corpus, config.holdout_frac, split_rng);
    if (split.train.empty()) throw UsageError("train_stage2: empty training split");

    table.set_frozen(true);  // style embeddings stay untouched in this stage

    // scorer and backbone are frozen, so scores are computed once
    std::vector<ImportanceScores> scores;
    scores.reserve(split.train.size());
    for (const Sentence& s : split.train) scores.push_back(scorer.importance_scores(s));

    EpochRunner runner;
    runner.config = config;
    runner.trainable = vae.params();
    Adam opt(param_tensors(runner.trainable), AdamConfig{.lr = config.lr * config.stage2_lr_scale});
    runner.opt = &opt;

    const int d = vae.config().d_latent;
    bool stop = false;
    for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
        // fresh masked view of the training set each epoch
        std::vector<Sentence> masked_view(split.train.size());
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            const bool selected = select_rng.bernoulli(config.stage2_mask_fraction);
            auto [masked, plan] = mask_sentence(split.train[i], scores[i], selected, mask_rng);
            masked_view[i] = std::move(masked);
            ++runner.result.mask_sentences_seen;
            if (selected) ++runner.result.mask_sentences_selected;
            for (std::uint8_t m : plan.masked) runner.result.mask_tokens_masked += m;
        }

        double epoch_sum = 0.0;
        int epoch_batches = 0;
        for (Batch& masked_batch : batch_by_tokens(masked_view, config.token_budget, shuffle_rng)) {
            // originals re-assembled in the masked batch's row order
            std::vector<const Sentence*> originals;
            originals.reserve(static_cast<std::size_t>(masked_batch.rows));
            for (int idx : masked_batch.sentence_index) {
                originals.push_back(&split.train[static_cast<std::size_t>(idx)]);
            }
            Batch target_batch = make_batch(originals, masked_batch.sentence_index);

            Tensor features = backbone.encode(masked_batch);
            Tensor eps = gaussian_noise(masked_batch.rows, d, noise_rng);
            // Eq.-6 objective: the stage-I VAE loss with masked input and
            // original targets, no style term
            Stage1Loss loss = stage1_total_loss(vae, table, features, masked_batch, target_batch, eps,
                                                config.lambda_vae, /*lambda_style=*/0.0f, config.beta);
            const float value = loss.total.item();
            runner.abort_on_nan(value, "stage2");
            opt.zero_grad();
            backward(loss.total);
            clip_global_norm(param_tensors(runner.trainable), config.clip_norm);
            opt.step();
            ++runner.global_step;
            runner.result.steps.push_back({runner.global_step, loss.nll, loss.kl, loss.style, value});
            epoch_sum += static_cast<double>(value);
            ++epoch_batches;
        }
        const float epoch_mean = epoch_batches > 0 ? static_cast<float>(epoch_sum / epoch_batches) : 0.0f;
        runner.finish_epoch(epoch_mean,
                            holdout_loss(vae, table, backbone, split.holdout, config, 0.0f), &stop);
    }
    return std::move(runner.result);
}

} // namespace stower

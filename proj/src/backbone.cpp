#include "stower/backbone.hpp"

#include <cmath>
#include <numeric>

#include "stower/optim.hpp"

namespace stower {

BackboneModel BackboneModel::init(const BackboneConfig& config, int vocab_size, Rng& rng) {
    BackboneModel model;
    model.config_ = config;
    model.vocab_size_ = vocab_size;
    model.token_emb = Tensor::randn({vocab_size, config.d_model}, rng, 0.02f, true);
    model.pos_emb = Tensor::randn({config.max_len + 2, config.d_model}, rng, 0.02f, true);
    if (config.mode == BackboneConfig::Mode::kMlm) {
        model.stack = TransformerStack::init(config.layers, config.d_model, config.heads, config.ffn_dim, rng);
        model.mlm_head = Linear::init(config.d_model, vocab_size, rng);
    }
    return model;
}

namespace {

Tensor embed_with_positions(const Tensor& token_emb, const Tensor& pos_emb, const Batch& batch) {
    const int B = batch.rows;
    const int L = batch.cols;
    const int D = token_emb.shape()[1];
    Tensor tok = reshape(embedding(token_emb, batch.tokens), {B, L, D});
    std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(L));
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    Tensor pos = reshape(embedding(pos_emb, pos_ids), {1, L, D});
    return add(tok, pos);
}

} // namespace

Tensor BackboneModel::encode(const Batch& batch) const {
    for (std::int32_t id : batch.tokens) {
        if (id < 0 || id >= vocab_size_) {
            throw UsageError("backbone: token id " + std::to_string(id) +
                             " outside model vocab of " + std::to_string(vocab_size_));
        }
    }
    if (batch.cols > config_.max_len + 2) {
        throw UsageError("backbone: batch length " + std::to_string(batch.cols) +
                         " exceeds positional table");
    }
    Tensor x = embed_with_positions(token_emb, pos_emb, batch);
    if (config_.mode == BackboneConfig::Mode::kIdentity) return x;
    return stack.forward(x, padding_attn_mask(batch));
}

Tensor BackboneModel::mlm_logits(const Batch& batch) const {
    if (config_.mode != BackboneConfig::Mode::kMlm) {
        throw UsageError("mlm_logits: backbone is not in mlm mode");
    }
    Tensor h = encode(batch);
    const int B = batch.rows;
    const int L = batch.cols;
    return reshape(mlm_head.forward(h), {B * L, vocab_size_});
}

ParamMap BackboneModel::params(const std::string& prefix) const {
    ParamMap out;
    out.emplace_back(prefix + ".token_emb", token_emb);
    out.emplace_back(prefix + ".pos_emb", pos_emb);
    if (config_.mode == BackboneConfig::Mode::kMlm) {
        stack.collect(prefix + ".stack", out);
        mlm_head.collect(prefix + ".mlm_head", out);
    }
    return out;
}

void BackboneModel::set_frozen(bool frozen) {
    frozen_ = frozen;
    set_requires_grad(params(), !frozen);
}

BackboneModel pretrain_backbone_mlm(const StyleCorpus& corpus, int vocab_size,
                                    const BackboneConfig& config, std::uint64_t seed,
                                    MlmTrainLog* log) {
    Rng init_rng = derive_rng(seed, "backbone.init");
    BackboneModel model = BackboneModel::init(config, vocab_size, init_rng);
    if (config.mode == BackboneConfig::Mode::kIdentity) {
        // nothing to pretrain; stays trainable only if requested
        model.set_frozen(!config.trainable);
        return model;
    }

    Rng shuffle_rng = derive_rng(seed, "backbone.shuffle");
    Rng mask_rng = derive_rng(seed, "backbone.mask");

    ParamMap params = model.params();
    Adam opt(param_tensors(params), AdamConfig{.lr = config.lr});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<Batch> batches = batch_by_tokens(corpus.sentences, config.token_budget, shuffle_rng);
        double epoch_sum = 0.0;
        int epoch_count = 0;
        for (Batch& batch : batches) {
            Batch masked = batch;
            std::vector<std::uint8_t> include(masked.tokens.size(), 0);
            int selected = 0;
            for (int r = 0; r < masked.rows; ++r) {
                for (int c = 0; c < masked.cols; ++c) {
                    const std::size_t idx = static_cast<std::size_t>(r * masked.cols + c);
                    const std::int32_t tok = masked.tokens[idx];
                    if (tok == Vocab::kPad || tok == Vocab::kBos || tok == Vocab::kEos) continue;
                    if (mask_rng.uniform() < static_cast<double>(config.mask_rate)) {
                        masked.tokens[idx] = Vocab::kMask;
                        include[idx] = 1;
                        ++selected;
                    }
                }
            }
            if (selected == 0) continue;

            Tensor logits = model.mlm_logits(masked);
            Tensor loss = cross_entropy_nll(logits, batch.tokens, include);
            const float value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingError("backbone pretraining diverged (loss=" + std::to_string(value) +
                                    ") at epoch " + std::to_string(epoch));
            }
            opt.zero_grad();
            backward(loss);
            clip_global_norm(param_tensors(params), config.clip_norm);
            opt.step();
            epoch_sum += static_cast<double>(value);
            ++epoch_count;
            if (log) log->step_losses.push_back(value);
        }
        if (log && epoch_count > 0) {
            log->epoch_means.push_back(static_cast<float>(epoch_sum / epoch_count));
        }
    }
    if (log && !log->step_losses.empty()) log->final_loss = log->step_losses.back();
    model.set_frozen(true);
    return model;
}

} // namespace stower

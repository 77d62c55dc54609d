#include "stower/style_vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stower {

StyleEmbeddingTable StyleEmbeddingTable::init(int styles, int dim, Rng& rng) {
    if (styles < 2) throw UsageError("style table needs at least 2 styles");
    StyleEmbeddingTable table;
    table.weight = Tensor::randn({styles, dim}, rng, 1.0f, true);
    // unit-norm rows: cosine training only rotates them, and the latent
    // arithmetic then works on an O(1) scale
    float* w = table.weight.data().data();
    for (int s = 0; s < styles; ++s) {
        double sq = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double v = static_cast<double>(w[s * dim + j]);
            sq += v * v;
        }
        const float inv = static_cast<float>(1.0 / std::max(std::sqrt(sq), 1e-12));
        for (int j = 0; j < dim; ++j) w[s * dim + j] *= inv;
    }
    return table;
}

Tensor StyleEmbeddingTable::rows_for(std::span<const int> style_ids) const {
    std::vector<std::int32_t> ids;
    ids.reserve(style_ids.size());
    for (int s : style_ids) {
        if (s < 0 || s >= styles()) throw UsageError("style id " + std::to_string(s) + " out of range");
        ids.push_back(static_cast<std::int32_t>(s));
    }
    return embedding(weight, ids);
}

std::vector<float> StyleEmbeddingTable::row_values(int style) const {
    if (style < 0 || style >= styles()) throw UsageError("style id " + std::to_string(style) + " out of range");
    const int d = dim();
    std::span<const float> w = weight.data();
    return {w.begin() + static_cast<std::ptrdiff_t>(style) * d,
            w.begin() + static_cast<std::ptrdiff_t>(style + 1) * d};
}

void StyleEmbeddingTable::set_frozen(bool frozen) {
    frozen_ = frozen;
    set_requires_grad(params(), !frozen);
}

ParamMap StyleEmbeddingTable::params(const std::string& prefix) const {
    return {{prefix + ".weight", weight}};
}

VaeModel VaeModel::init(const VaeConfig& config, int vocab_size, int backbone_dim, Rng& rng) {
    VaeModel model;
    model.config_ = config;
    model.vocab_size_ = vocab_size;
    model.backbone_dim_ = backbone_dim;
    model.input_proj = Linear::init(backbone_dim, config.d_latent, rng);
    model.encoder = TransformerStack::init(config.layers, config.d_latent, config.heads, config.ffn_dim, rng);
    model.mu_head = TransformerBlock::init(config.d_latent, config.heads, config.ffn_dim, rng);
    model.var_head = TransformerBlock::init(config.d_latent, config.heads, config.ffn_dim, rng);
    model.dec_token_emb = Tensor::randn({vocab_size, config.d_latent}, rng, 0.02f, true);
    model.dec_pos_emb = Tensor::randn({config.max_len + 2, config.d_latent}, rng, 0.02f, true);
    model.decoder = TransformerStack::init(config.layers, config.d_latent, config.heads, config.ffn_dim, rng);
    model.out_proj = Linear::init(config.d_latent, vocab_size, rng);
    return model;
}

LatentDistribution VaeModel::encode_latent(const Tensor& features, const Batch& batch) const {
    if (features.rank() != 3) throw UsageError("encode_latent: features must be [B, L, D]");
    for (int r = 0; r < batch.rows; ++r) {
        if (batch.mask[static_cast<std::size_t>(r * batch.cols)] <= 0.0f) {
            throw UsageError("encode_latent: row " + std::to_string(r) + " is all padding");
        }
    }
    Tensor mask = padding_attn_mask(batch);
    Tensor x = input_proj.forward(features);
    Tensor h = encoder.forward(x, mask);
    Tensor mu = first_token(mu_head.forward(h, mask));
    Tensor log_var = clamp(first_token(var_head.forward(h, mask)), -config_.logvar_clamp, config_.logvar_clamp);
    return {mu, log_var};
}

VaeModel::DecodeForTraining VaeModel::decoder_teacher_logits(const Batch& batch,
                                                             const Tensor& conditioning) const {
    const int B = batch.rows;
    const int L = batch.cols;
    if (L < 2) throw UsageError("decoder: batch too short for teacher forcing");
    if (conditioning.rank() != 2 || conditioning.shape()[0] != B || conditioning.shape()[1] != config_.d_latent) {
        throw UsageError("decoder: conditioning must be [B, d_latent]");
    }
    const int T = L - 1;

    Batch input;
    input.rows = B;
    input.cols = T;
    input.tokens.resize(static_cast<std::size_t>(B) * T);
    input.mask.resize(static_cast<std::size_t>(B) * T);
    DecodeForTraining result;
    result.targets.resize(static_cast<std::size_t>(B) * T);
    result.include.resize(static_cast<std::size_t>(B) * T);
    for (int r = 0; r < B; ++r) {
        for (int c = 0; c < T; ++c) {
            const std::size_t src = static_cast<std::size_t>(r * L + c);
            const std::size_t dst = static_cast<std::size_t>(r * T + c);
            input.tokens[dst] = batch.tokens[src];
            input.mask[dst] = batch.mask[src];
            const std::int32_t target = batch.tokens[src + 1];
            result.targets[dst] = target;
            result.include[dst] = batch.mask[src + 1] > 0.0f ? 1 : 0;
        }
    }

    const int D = config_.d_latent;
    Tensor tok = reshape(embedding(dec_token_emb, input.tokens), {B, T, D});
    std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(T));
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    Tensor pos = reshape(embedding(dec_pos_emb, pos_ids), {1, T, D});
    Tensor cond = reshape(conditioning, {B, 1, D});
    Tensor x = add(add(tok, pos), cond);

    Tensor h = decoder.forward(x, combined_attn_mask(input, /*causal=*/true));
    result.logits = reshape(out_proj.forward(h), {B * T, vocab_size_});
    return result;
}

std::vector<std::int32_t> VaeModel::decode_greedy(std::span<const float> conditioning, int max_len) const {
    if (static_cast<int>(conditioning.size()) != config_.d_latent) {
        throw UsageError("decode_greedy: conditioning size must equal d_latent");
    }
    Tensor cond = reshape(Tensor::from_data({config_.d_latent},
                                            {conditioning.begin(), conditioning.end()}),
                          {1, 1, config_.d_latent});
    std::vector<std::int32_t> seq = {Vocab::kBos};
    const int D = config_.d_latent;
    int content = 0;
    while (content < max_len) {
        const int T = static_cast<int>(seq.size());
        if (T > config_.max_len + 1) break;
        Tensor tok = reshape(embedding(dec_token_emb, seq), {1, T, D});
        std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(T));
        std::iota(pos_ids.begin(), pos_ids.end(), 0);
        Tensor pos = reshape(embedding(dec_pos_emb, pos_ids), {1, T, D});
        Tensor x = add(add(tok, pos), cond);
        Tensor h = decoder.forward(x, causal_attn_mask(T));
        Tensor logits = out_proj.forward(reshape(slice(h, 1, T - 1, 1), {1, D}));
        std::span<const float> row = logits.data();
        int best = 0;
        for (int v = 1; v < vocab_size_; ++v) {
            if (row[static_cast<std::size_t>(v)] > row[static_cast<std::size_t>(best)]) best = v;
        }
        seq.push_back(static_cast<std::int32_t>(best));
        if (best == Vocab::kEos) break;
        ++content;
    }
    return seq;
}

ParamMap VaeModel::params(const std::string& prefix) const {
    ParamMap out;
    input_proj.collect(prefix + ".input_proj", out);
    encoder.collect(prefix + ".encoder", out);
    mu_head.collect(prefix + ".mu_head", out);
    var_head.collect(prefix + ".var_head", out);
    out.emplace_back(prefix + ".dec_token_emb", dec_token_emb);
    out.emplace_back(prefix + ".dec_pos_emb", dec_pos_emb);
    decoder.collect(prefix + ".decoder", out);
    out_proj.collect(prefix + ".out_proj", out);
    return out;
}

Tensor sample_latent(const LatentDistribution& dist, const Tensor& eps) {
    if (eps.shape() != dist.mu.shape()) {
        throw UsageError("sample_latent: eps shape " + shape_str(eps.shape()) +
                         " does not match mu " + shape_str(dist.mu.shape()));
    }
    return add(dist.mu, mul(exp(scale(dist.log_var, 0.5f)), eps));
}

Tensor kl_term(const LatentDistribution& dist) {
    // 0.5 * sum_j (mu^2 + sigma^2 - 1 - log sigma^2), averaged over rows
    Tensor per_dim = sub(add(mul(dist.mu, dist.mu), exp(dist.log_var)),
                         add_scalar(dist.log_var, 1.0f));
    Tensor per_row = dist.mu.rank() > 1 ? sum_axis(per_dim, -1) : sum(per_dim);
    return scale(mean(per_row), 0.5f);
}

Tensor style_loss(const StyleEmbeddingTable& table, const Tensor& z, std::span<const int> styles) {
    if (z.rank() != 2) throw UsageError("style_loss: z must be [B, d]");
    if (static_cast<std::size_t>(z.shape()[0]) != styles.size()) {
        throw UsageError("style_loss: style count does not match batch");
    }
    const int d = z.shape()[1];
    auto check_norms = [d](std::span<const float> values, const char* what) {
        const std::size_t rows = values.size() / static_cast<std::size_t>(d);
        for (std::size_t r = 0; r < rows; ++r) {
            double sq = 0.0;
            for (int j = 0; j < d; ++j) {
                const double v = static_cast<double>(values[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)]);
                sq += v * v;
            }
            if (sq < 1e-16) throw UsageError(std::string("style_loss: zero-norm ") + what);
        }
    };
    check_norms(z.data(), "latent vector");
    check_norms(table.weight.data(), "style embedding");

    Tensor z_const = stop_gradient(z);
    Tensor s_rows = table.rows_for(styles);
    Tensor cos = cosine_similarity(s_rows, z_const);
    return mean(neg(log(sigmoid(cos))));
}

Tensor reconstruction_nll(const VaeModel& model, const Batch& batch, const Tensor& conditioning) {
    VaeModel::DecodeForTraining dec = model.decoder_teacher_logits(batch, conditioning);
    return cross_entropy_nll(dec.logits, dec.targets, dec.include);
}

Tensor combine_stage1_loss(const Tensor& nll, const Tensor& kl, const Tensor& style,
                           float lambda_vae, float lambda_style, float beta) {
    Tensor vae_part = add(nll, scale(kl, beta));
    return add(scale(vae_part, lambda_vae), scale(style, lambda_style));
}

Stage1Loss stage1_total_loss(const VaeModel& model, const StyleEmbeddingTable& table,
                             const Tensor& features, const Batch& encoder_batch,
                             const Batch& target_batch, const Tensor& eps,
                             float lambda_vae, float lambda_style, float beta) {
    LatentDistribution dist = model.encode_latent(features, encoder_batch);
    Tensor z = sample_latent(dist, eps);
    Tensor s_rows = table.rows_for(target_batch.styles);
    Tensor conditioning = add(z, stop_gradient(s_rows));

    Stage1Loss out;
    Tensor nll = reconstruction_nll(model, target_batch, conditioning);
    Tensor kl = kl_term(dist);
    Tensor style = lambda_style != 0.0f
                       ? style_loss(table, z, target_batch.styles)
                       : Tensor::scalar(0.0f);
    out.total = combine_stage1_loss(nll, kl, style, lambda_vae, lambda_style, beta);
    out.nll = nll.item();
    out.kl = kl.item();
    out.style = style.item();
    return out;
}

} // namespace stower

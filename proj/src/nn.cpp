#include "stower/nn.hpp"

#include <cmath>
#include <cstring>

namespace stower {

std::vector<Tensor> param_tensors(const ParamMap& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
}

std::uint64_t param_checksum(const ParamMap& params) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&h](const void* data, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params) {
        mix_bytes(name.data(), name.size());
        mix_bytes(t.data().data(), t.size() * sizeof(float));
    }
    return h;
}

std::vector<std::vector<float>> snapshot_params(const ParamMap& params) {
    std::vector<std::vector<float>> snap;
    snap.reserve(params.size());
    for (const auto& [name, t] : params) snap.emplace_back(t.data().begin(), t.data().end());
    return snap;
}

void restore_params(const ParamMap& params, const std::vector<std::vector<float>>& snapshot) {
    if (params.size() != snapshot.size()) throw UsageError("restore_params: size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        if (t.size() != snapshot[i].size()) throw UsageError("restore_params: shape mismatch at " + params[i].first);
        std::memcpy(t.data().data(), snapshot[i].data(), snapshot[i].size() * sizeof(float));
    }
}

void set_requires_grad(const ParamMap& params, bool requires_grad) {
    for (const auto& [name, t] : params) {
        t.node()->requires_grad = requires_grad;
        if (!requires_grad) t.node()->grad.clear();
    }
}

Linear Linear::init(int in, int out, Rng& rng) {
    Linear l;
    l.weight = Tensor::randn({in, out}, rng, 1.0f / std::sqrt(static_cast<float>(in)), true);
    l.bias = Tensor::zeros({out}, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNorm LayerNorm::init(int d) {
    LayerNorm ln;
    ln.gain = Tensor::full({d}, 1.0f, true);
    ln.bias = Tensor::zeros({d}, true);
    return ln;
}

void LayerNorm::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

MultiHeadAttention MultiHeadAttention::init(int d_model, int heads, Rng& rng) {
    if (d_model % heads != 0) throw UsageError("attention: d_model must be divisible by heads");
    MultiHeadAttention mha;
    mha.heads = heads;
    mha.head_dim = d_model / heads;
    mha.q = Linear::init(d_model, d_model, rng);
    mha.k = Linear::init(d_model, d_model, rng);
    mha.v = Linear::init(d_model, d_model, rng);
    mha.out = Linear::init(d_model, d_model, rng);
    return mha;
}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& attn_mask) const {
    const int B = x.shape()[0];
    const int L = x.shape()[1];
    const int D = x.shape()[2];
    auto split_heads = [&](const Tensor& t) {
        return transpose_12(reshape(t, {B, L, heads, head_dim}));  // [B, H, L, dh]
    };
    Tensor qh = split_heads(q.forward(x));
    Tensor kh = split_heads(k.forward(x));
    Tensor vh = split_heads(v.forward(x));

    Tensor scores = scale(matmul(qh, transpose_last2(kh)), 1.0f / std::sqrt(static_cast<float>(head_dim)));
    if (attn_mask.defined()) scores = add(scores, attn_mask);
    Tensor weights = softmax(scores, -1);
    Tensor ctx = matmul(weights, vh);                      // [B, H, L, dh]
    Tensor merged = reshape(transpose_12(ctx), {B, L, D});
    return out.forward(merged);
}

std::pair<Tensor, Tensor> MultiHeadAttention::project_qk(const Tensor& x_single) const {
    if (x_single.rank() != 3 || x_single.shape()[0] != 1) {
        throw UsageError("project_qk expects a single-row [1, L, D] input");
    }
    const int L = x_single.shape()[1];
    Tensor qp = q.forward(x_single);  // [1, L, D]
    Tensor kp = k.forward(x_single);
    Tensor q_heads = reshape(transpose_12(reshape(qp, {1, L, heads, head_dim})), {heads, L, head_dim});
    Tensor k_heads = reshape(transpose_12(reshape(kp, {1, L, heads, head_dim})), {heads, L, head_dim});
    Tensor q_first = reshape(slice(q_heads, 1, 0, 1), {heads, head_dim});
    return {q_first, k_heads};
}

void MultiHeadAttention::collect(const std::string& prefix, ParamMap& out_map) const {
    q.collect(prefix + ".q", out_map);
    k.collect(prefix + ".k", out_map);
    v.collect(prefix + ".v", out_map);
    out.collect(prefix + ".out", out_map);
}

FeedForward FeedForward::init(int d_model, int ffn_dim, Rng& rng) {
    FeedForward ffn;
    ffn.fc1 = Linear::init(d_model, ffn_dim, rng);
    ffn.fc2 = Linear::init(ffn_dim, d_model, rng);
    return ffn;
}

void FeedForward::collect(const std::string& prefix, ParamMap& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

TransformerBlock TransformerBlock::init(int d_model, int heads, int ffn_dim, Rng& rng) {
    TransformerBlock block;
    block.ln1 = LayerNorm::init(d_model);
    block.ln2 = LayerNorm::init(d_model);
    block.attn = MultiHeadAttention::init(d_model, heads, rng);
    block.ffn = FeedForward::init(d_model, ffn_dim, rng);
    return block;
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& attn_mask) const {
    Tensor h = add(x, attn.forward(ln1.forward(x), attn_mask));
    return add(h, ffn.forward(ln2.forward(h)));
}

void TransformerBlock::collect(const std::string& prefix, ParamMap& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ffn.collect(prefix + ".ffn", out);
}

TransformerStack TransformerStack::init(int layers, int d_model, int heads, int ffn_dim, Rng& rng) {
    TransformerStack stack;
    for (int i = 0; i < layers; ++i) stack.blocks.push_back(TransformerBlock::init(d_model, heads, ffn_dim, rng));
    stack.final_ln = LayerNorm::init(d_model);
    return stack;
}

Tensor TransformerStack::forward(const Tensor& x, const Tensor& attn_mask) const {
    Tensor h = x;
    for (const TransformerBlock& block : blocks) h = block.forward(h, attn_mask);
    return final_ln.forward(h);
}

void TransformerStack::collect(const std::string& prefix, ParamMap& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    }
    final_ln.collect(prefix + ".final_ln", out);
}

Tensor padding_attn_mask(const Batch& batch) {
    const int B = batch.rows;
    const int L = batch.cols;
    Tensor mask = Tensor::zeros({B, 1, L, L});
    float* mv = mask.data().data();
    for (int b = 0; b < B; ++b) {
        for (int i = 0; i < L; ++i) {
            for (int j = 0; j < L; ++j) {
                const bool key_valid = batch.mask[static_cast<std::size_t>(b * L + j)] > 0.0f;
                mv[(static_cast<std::size_t>(b) * L + i) * L + j] = key_valid ? 0.0f : -1e9f;
            }
        }
    }
    return mask;
}

Tensor causal_attn_mask(int len) {
    Tensor mask = Tensor::zeros({1, 1, len, len});
    float* mv = mask.data().data();
    for (int i = 0; i < len; ++i) {
        for (int j = 0; j < len; ++j) {
            mv[static_cast<std::size_t>(i * len + j)] = j > i ? -1e9f : 0.0f;
        }
    }
    return mask;
}

Tensor combined_attn_mask(const Batch& batch, bool causal) {
    Tensor pad = padding_attn_mask(batch);
    if (!causal) return pad;
    const int L = batch.cols;
    float* mv = pad.data().data();
    for (int b = 0; b < batch.rows; ++b) {
        for (int i = 0; i < L; ++i) {
            for (int j = i + 1; j < L; ++j) {
                mv[(static_cast<std::size_t>(b) * L + i) * L + j] = -1e9f;
            }
        }
    }
    return pad;
}

Tensor first_token(const Tensor& x) {
    if (x.rank() != 3) throw UsageError("first_token expects [B, L, D]");
    return reshape(slice(x, 1, 0, 1), {x.shape()[0], x.shape()[2]});
}

Tensor batch_mask_tensor(const Batch& batch) {
    return Tensor::from_data({batch.rows, batch.cols}, batch.mask);
}

} // namespace stower

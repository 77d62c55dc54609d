#include "stower/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <set>

namespace stower {

// ---- EvalClassifier ---------------------------------------------------------

EvalClassifier::EvalClassifier(int styles, int hash_bits) : styles_(styles), hash_bits_(hash_bits) {
    if (styles < 2) throw UsageError("eval classifier: need at least 2 styles");
    if (hash_bits < 4 || hash_bits > 26) throw UsageError("eval classifier: hash_bits out of range");
    const int dim = 1 << hash_bits;
    weight = Tensor::zeros({styles * dim});
    bias = Tensor::zeros({styles});
}

std::vector<std::pair<std::uint32_t, float>> EvalClassifier::features(const std::string& text,
                                                                      int hash_bits) {
    const std::uint32_t mask = (1u << hash_bits) - 1u;
    std::vector<std::string> tokens = split_tokens(text);
    std::vector<std::pair<std::uint32_t, float>> feats;
    feats.reserve(tokens.size() * 2);
    auto push = [&feats, mask](const std::string& ngram) {
        const std::uint64_t h = fnv1a64(ngram);
        const float sign = ((h >> 32) & 1u) ? 1.0f : -1.0f;
        feats.emplace_back(static_cast<std::uint32_t>(h) & mask, sign);
    };
    for (const std::string& t : tokens) push(t);
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) push(tokens[i] + " " + tokens[i + 1]);
    if (!feats.empty()) {
        const float inv = 1.0f / static_cast<float>(feats.size());
        for (auto& [idx, v] : feats) v *= inv;
    }
    return feats;
}

std::vector<double> EvalClassifier::scores(const std::string& text) const {
    const int dim = 1 << hash_bits_;
    std::vector<double> out(static_cast<std::size_t>(styles_));
    std::span<const float> w = weight.data();
    std::span<const float> b = bias.data();
    const auto feats = features(text, hash_bits_);
    for (int c = 0; c < styles_; ++c) {
        double acc = static_cast<double>(b[static_cast<std::size_t>(c)]);
        const float* wc = w.data() + static_cast<std::size_t>(c) * dim;
        for (const auto& [idx, v] : feats) acc += static_cast<double>(wc[idx]) * v;
        out[static_cast<std::size_t>(c)] = acc;
    }
    return out;
}

int EvalClassifier::predict(const std::string& text) const {
    const std::vector<double> s = scores(text);
    return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

ParamMap EvalClassifier::params(const std::string& prefix) const {
    return {{prefix + ".weight", weight}, {prefix + ".bias", bias}};
}

EvalClassifier EvalClassifier::from_params(int styles, int hash_bits, const ParamMap& params) {
    EvalClassifier model(styles, hash_bits);
    for (const auto& [name, tensor] : params) {
        if (name.ends_with(".weight")) {
            if (tensor.size() != model.weight.size()) throw DataError("eval classifier weight size mismatch");
            std::copy(tensor.data().begin(), tensor.data().end(), model.weight.data().begin());
        } else if (name.ends_with(".bias")) {
            if (tensor.size() != model.bias.size()) throw DataError("eval classifier bias size mismatch");
            std::copy(tensor.data().begin(), tensor.data().end(), model.bias.data().begin());
        }
    }
    return model;
}

EvalClassifierTrainResult EvalClassifier::train(const std::vector<std::pair<std::string, int>>& labeled,
                                                  int styles, const TrainOptions& options,
                                                  std::uint64_t seed) {
    if (labeled.empty()) throw UsageError("eval classifier: empty training set");
    std::vector<bool> present(static_cast<std::size_t>(styles), false);
    for (const auto& [text, label] : labeled) {
        if (label < 0 || label >= styles) throw UsageError("eval classifier: label out of range");
        present[static_cast<std::size_t>(label)] = true;
    }
    if (std::count(present.begin(), present.end(), true) < 2) {
        throw UsageError("eval classifier: training data covers a single class");
    }

    Rng split_rng = derive_rng(seed, "evalcls.split");
    std::vector<int> order(labeled.size());
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    const int holdout = std::max(1, static_cast<int>(static_cast<double>(order.size()) * options.holdout_frac));
    std::vector<int> train_idx(order.begin() + holdout, order.end());
    std::vector<int> holdout_idx(order.begin(), order.begin() + holdout);

    EvalClassifierTrainResult result;
    result.model = EvalClassifier(styles, options.hash_bits);
    EvalClassifier& model = result.model;
    const int dim = 1 << options.hash_bits;
    float* w = model.weight.data().data();
    float* b = model.bias.data().data();

    // pre-hash once
    std::vector<std::vector<std::pair<std::uint32_t, float>>> feats(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) feats[i] = features(labeled[i].first, options.hash_bits);

    Rng shuffle_rng = derive_rng(seed, "evalcls.shuffle");
    std::vector<double> logits(static_cast<std::size_t>(styles));
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        shuffle_rng.shuffle(train_idx);
        for (int idx : train_idx) {
            const auto& fx = feats[static_cast<std::size_t>(idx)];
            const int label = labeled[static_cast<std::size_t>(idx)].second;
            for (int c = 0; c < styles; ++c) {
                double acc = static_cast<double>(b[c]);
                const float* wc = w + static_cast<std::size_t>(c) * dim;
                for (const auto& [fi, v] : fx) acc += static_cast<double>(wc[fi]) * v;
                logits[static_cast<std::size_t>(c)] = acc;
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double total = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                total += l;
            }
            for (int c = 0; c < styles; ++c) {
                const double p = logits[static_cast<std::size_t>(c)] / total;
                const double g = p - (c == label ? 1.0 : 0.0);
                const float step = static_cast<float>(options.lr * g);
                float* wc = w + static_cast<std::size_t>(c) * dim;
                for (const auto& [fi, v] : fx) wc[fi] -= step * v;
                b[c] -= step;
            }
        }
    }

    int correct = 0;
    for (int idx : holdout_idx) {
        if (model.predict(labeled[static_cast<std::size_t>(idx)].first) ==
            labeled[static_cast<std::size_t>(idx)].second) {
            ++correct;
        }
    }
    result.holdout_accuracy =
        holdout_idx.empty() ? 0.0f : static_cast<float>(correct) / static_cast<float>(holdout_idx.size());
    return result;
}

double transfer_accuracy(const EvalClassifier& classifier, std::span<const std::string> sentences,
                         int target_style) {
    if (sentences.empty()) throw UsageError("transfer_accuracy: empty sentence set");
    if (target_style < 0 || target_style >= classifier.styles()) {
        throw UsageError("transfer_accuracy: target style out of range");
    }
    int hits = 0;
    for (const std::string& s : sentences) {
        if (classifier.predict(s) == target_style) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(sentences.size());
}

// ---- CharLm -------------------------------------------------------------------

std::vector<std::string> CharLm::build_char_vocab(std::span<const std::string> lines) {
    std::set<char> chars;
    for (const std::string& line : lines) {
        for (char c : line) chars.insert(c);
    }
    std::vector<std::string> vocab = {"<bos>", "<eos>", "<unk>"};
    for (char c : chars) vocab.push_back(std::string(1, c));
    return vocab;
}

CharLm CharLm::init(std::vector<std::string> char_vocab, const CharLmConfig& config, Rng& rng) {
    if (char_vocab.size() < 4) throw DataError("char lm: alphabet too small");
    CharLm lm;
    lm.char_vocab_ = std::move(char_vocab);
    lm.config_ = config;
    lm.rebuild_byte_map();
    const int C = lm.alphabet_size();
    const int E = config.embed;
    const int H = config.hidden;
    lm.emb = Tensor::randn({C, E}, rng, 0.1f, true);
    lm.wx = Tensor::randn({E, 4 * H}, rng, 1.0f / std::sqrt(static_cast<float>(E)), true);
    lm.wh = Tensor::randn({H, 4 * H}, rng, 1.0f / std::sqrt(static_cast<float>(H)), true);
    lm.gate_b = Tensor::zeros({4 * H}, true);
    // forget-gate bias starts at 1
    for (int j = H; j < 2 * H; ++j) lm.gate_b.data()[static_cast<std::size_t>(j)] = 1.0f;
    lm.out = Linear::init(H, C, rng);
    return lm;
}

void CharLm::rebuild_byte_map() {
    byte_to_id_.assign(256, kUnkChar);
    for (std::size_t i = 3; i < char_vocab_.size(); ++i) {
        const std::string& s = char_vocab_[i];
        if (s.size() == 1) {
            byte_to_id_[static_cast<unsigned char>(s[0])] = static_cast<std::int32_t>(i);
        }
    }
}

std::vector<std::int32_t> CharLm::encode(const std::string& text) const {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size() + 1);
    ids.push_back(kBosChar);
    for (char c : text) ids.push_back(byte_to_id_[static_cast<unsigned char>(c)]);
    return ids;
}

Tensor CharLm::step_logits(const std::vector<std::int32_t>& ids, int rows, int cols) const {
    const int H = config_.hidden;
    const int E = config_.embed;
    Tensor h = Tensor::zeros({rows, H});
    Tensor c = Tensor::zeros({rows, H});
    std::vector<Tensor> logits_t;
    logits_t.reserve(static_cast<std::size_t>(cols));
    for (int t = 0; t < cols; ++t) {
        std::vector<std::int32_t> col(static_cast<std::size_t>(rows));
        for (int r = 0; r < rows; ++r) col[static_cast<std::size_t>(r)] = ids[static_cast<std::size_t>(r * cols + t)];
        Tensor x = embedding(emb, col);                       // [B, E]
        (void)E;
        Tensor gates = add(add(matmul(x, wx), matmul(h, wh)), gate_b);  // [B, 4H]
        Tensor i_gate = sigmoid(slice(gates, -1, 0, H));
        Tensor f_gate = sigmoid(slice(gates, -1, H, H));
        Tensor g_gate = tanh(slice(gates, -1, 2 * H, H));
        Tensor o_gate = sigmoid(slice(gates, -1, 3 * H, H));
        c = add(mul(f_gate, c), mul(i_gate, g_gate));
        h = mul(o_gate, tanh(c));
        logits_t.push_back(reshape(out.forward(h), {rows, 1, alphabet_size()}));
    }
    Tensor all = concat(logits_t, 1);  // [B, T, C]
    return reshape(all, {rows * cols, alphabet_size()});
}

std::pair<double, std::int64_t> CharLm::sentence_nll(const std::string& text) const {
    std::vector<std::int32_t> input = encode(text);
    const int T = static_cast<int>(input.size());
    std::vector<std::int32_t> targets(input.begin() + 1, input.end());
    targets.push_back(kEosChar);
    Tensor logits = step_logits(input, 1, T);
    // accumulate in double straight from the rows
    std::span<const float> lv = logits.data();
    const int C = alphabet_size();
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        const float* row = lv.data() + static_cast<std::size_t>(t) * C;
        float mx = row[0];
        for (int v = 1; v < C; ++v) mx = std::max(mx, row[v]);
        double z = 0.0;
        for (int v = 0; v < C; ++v) z += std::exp(static_cast<double>(row[v] - mx));
        total += std::log(z) + static_cast<double>(mx) -
                 static_cast<double>(row[targets[static_cast<std::size_t>(t)]]);
    }
    return {total, T};
}

ParamMap CharLm::params(const std::string& prefix) const {
    ParamMap map;
    map.emplace_back(prefix + ".emb", emb);
    map.emplace_back(prefix + ".wx", wx);
    map.emplace_back(prefix + ".wh", wh);
    map.emplace_back(prefix + ".gate_b", gate_b);
    out.collect(prefix + ".out", map);
    return map;
}

CharLm train_char_lm(std::span<const std::string> lines, const CharLmConfig& config, std::uint64_t seed,
                     std::vector<float>* epoch_losses) {
    if (lines.empty()) throw UsageError("train_char_lm: empty corpus");
    Rng init_rng = derive_rng(seed, "charlm.init");
    CharLm lm = CharLm::init(CharLm::build_char_vocab(lines), config, init_rng);

    // bucket sequences by length so each batch is rectangular
    std::map<int, std::vector<std::vector<std::int32_t>>> buckets;
    for (const std::string& line : lines) {
        std::vector<std::int32_t> ids = lm.encode(line);
        buckets[static_cast<int>(ids.size())].push_back(std::move(ids));
    }
    struct Chunk {
        int cols = 0;
        std::vector<std::int32_t> ids;      // rows*cols
        std::vector<std::int32_t> targets;  // rows*cols
        int rows = 0;
    };
    std::vector<Chunk> chunks;
    for (auto& [len, seqs] : buckets) {
        for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(config.batch)) {
            Chunk chunk;
            chunk.cols = len;
            const std::size_t end = std::min(seqs.size(), start + static_cast<std::size_t>(config.batch));
            for (std::size_t i = start; i < end; ++i) {
                chunk.ids.insert(chunk.ids.end(), seqs[i].begin(), seqs[i].end());
                for (std::size_t t = 1; t < seqs[i].size(); ++t) chunk.targets.push_back(seqs[i][t]);
                chunk.targets.push_back(CharLm::kEosChar);
                ++chunk.rows;
            }
            chunks.push_back(std::move(chunk));
        }
    }

    ParamMap params = lm.params();
    Adam opt(param_tensors(params), AdamConfig{.lr = config.lr});
    Rng shuffle_rng = derive_rng(seed, "charlm.shuffle");
    std::vector<int> order(chunks.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_sum = 0.0;
        std::int64_t epoch_count = 0;
        for (int ci : order) {
            const Chunk& chunk = chunks[static_cast<std::size_t>(ci)];
            Tensor logits = lm.step_logits(chunk.ids, chunk.rows, chunk.cols);
            Tensor loss = cross_entropy_nll(logits, chunk.targets);
            const float value = loss.item();
            if (!std::isfinite(value)) throw TrainingError("char lm training diverged");
            opt.zero_grad();
            backward(loss);
            clip_global_norm(param_tensors(params), config.clip_norm);
            opt.step();
            epoch_sum += static_cast<double>(value) * chunk.rows * chunk.cols;
            epoch_count += static_cast<std::int64_t>(chunk.rows) * chunk.cols;
        }
        if (epoch_losses && epoch_count > 0) {
            epoch_losses->push_back(static_cast<float>(epoch_sum / static_cast<double>(epoch_count)));
        }
    }
    return lm;
}

double perplexity(const CharLm& lm, std::span<const std::string> sentences) {
    if (sentences.empty()) throw UsageError("perplexity: empty sentence set");
    double total = 0.0;
    std::int64_t count = 0;
    for (const std::string& s : sentences) {
        auto [nll, chars] = lm.sentence_nll(s);
        total += nll;
        count += chars;
    }
    return std::exp(total / static_cast<double>(count));
}

// ---- BLEU ----------------------------------------------------------------------

namespace {

constexpr int kBleuOrder = 4;

std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
    std::map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int j = 1; j < n; ++j) {
            key.push_back('\x1f');
            key += tokens[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

} // namespace

double bleu_score(const std::vector<std::string>& hypotheses,
                  const std::vector<std::vector<std::string>>& reference_sets) {
    if (hypotheses.empty()) throw UsageError("bleu_score: empty hypothesis list");
    if (hypotheses.size() != reference_sets.size()) {
        throw UsageError("bleu_score: hypothesis/reference count mismatch");
    }
    std::int64_t matched[kBleuOrder] = {0, 0, 0, 0};
    std::int64_t total[kBleuOrder] = {0, 0, 0, 0};
    std::int64_t hyp_len = 0;
    std::int64_t ref_len = 0;

    for (std::size_t s = 0; s < hypotheses.size(); ++s) {
        const std::vector<std::string> hyp = split_tokens(hypotheses[s]);
        if (reference_sets[s].empty()) throw UsageError("bleu_score: sentence without references");
        std::vector<std::vector<std::string>> refs;
        refs.reserve(reference_sets[s].size());
        for (const std::string& r : reference_sets[s]) refs.push_back(split_tokens(r));

        hyp_len += static_cast<std::int64_t>(hyp.size());
        // closest reference length, ties to the shorter
        std::int64_t closest = static_cast<std::int64_t>(refs[0].size());
        for (const auto& r : refs) {
            const std::int64_t len = static_cast<std::int64_t>(r.size());
            const std::int64_t diff = std::llabs(len - static_cast<std::int64_t>(hyp.size()));
            const std::int64_t best_diff = std::llabs(closest - static_cast<std::int64_t>(hyp.size()));
            if (diff < best_diff || (diff == best_diff && len < closest)) closest = len;
        }
        ref_len += closest;

        for (int n = 1; n <= kBleuOrder; ++n) {
            const auto hyp_counts = ngram_counts(hyp, n);
            std::map<std::string, int> max_ref;
            for (const auto& r : refs) {
                for (const auto& [key, count] : ngram_counts(r, n)) {
                    max_ref[key] = std::max(max_ref[key], count);
                }
            }
            for (const auto& [key, count] : hyp_counts) {
                total[n - 1] += count;
                auto it = max_ref.find(key);
                if (it != max_ref.end()) matched[n - 1] += std::min(count, it->second);
            }
        }
    }

    double log_sum = 0.0;
    for (int n = 0; n < kBleuOrder; ++n) {
        if (matched[n] == 0 || total[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    }
    double bp = 1.0;
    if (hyp_len == 0) return 0.0;
    if (hyp_len < ref_len) bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_sum / kBleuOrder);
}

double bleu_score(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
    std::vector<std::vector<std::string>> sets;
    sets.reserve(references.size());
    for (const std::string& r : references) sets.push_back({r});
    return bleu_score(hypotheses, sets);
}

double bleu_score_mean_refs(const std::vector<std::string>& hypotheses,
                            const std::vector<std::vector<std::string>>& reference_corpora) {
    if (reference_corpora.empty()) throw UsageError("bleu_score_mean_refs: no reference corpora");
    double total = 0.0;
    for (const auto& corpus : reference_corpora) total += bleu_score(hypotheses, corpus);
    return total / static_cast<double>(reference_corpora.size());
}

// ---- aggregate -------------------------------------------------------------------

double geometric_mean(double acc_percent, double bleu, double ppl) {
    if (ppl <= 1.0) throw UsageError("geometric_mean: perplexity must exceed 1");
    return std::cbrt(acc_percent * bleu / std::log(ppl));
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman_rho: need matched series");
    auto ranks = [](std::span<const double> v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> rank(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
            i = j + 1;
        }
        return rank;
    };
    const std::vector<double> rx = ranks(x);
    const std::vector<double> ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

} // namespace stower

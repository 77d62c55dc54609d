#include "stower/transfer.hpp"

#include <cmath>
#include <sstream>

#include "stower/metrics.hpp"

namespace stower {

Tensor adjust_latent(const Tensor& z, const StyleEmbeddingTable& table, const TransferRequest& request) {
    const int k = table.styles();
    if (request.source_style < 0 || request.source_style >= k ||
        request.target_style < 0 || request.target_style >= k) {
        throw UsageError("adjust_latent: style id out of range (k=" + std::to_string(k) + ")");
    }
    if (request.source_style == request.target_style) {
        throw UsageError("adjust_latent: source and target styles must differ");
    }
    if (request.weight < 0.0f) throw UsageError("adjust_latent: weight must be >= 0");
    const int d = table.dim();
    if (z.shape().back() != d) throw UsageError("adjust_latent: latent dim mismatch");

    const int target[] = {request.target_style};
    const int source[] = {request.source_style};
    Tensor delta = sub(table.rows_for(target), table.rows_for(source));  // [1, d]
    Tensor shift = scale(delta, request.weight).detach();
    if (z.rank() == 1) shift = reshape(shift, {d});
    return add(z, shift);
}

std::string transfer_sentence(const BackboneModel& backbone, const VaeModel& vae,
                              const StyleEmbeddingTable& table, const Vocab& vocab,
                              const std::string& text, const TransferRequest& request,
                              Rng* sample_rng) {
    Sentence sentence = tokenize(text, vocab, request.max_len);
    const Sentence* row[] = {&sentence};
    Batch batch = make_batch(row, {});

    Tensor features = backbone.encode(batch);
    LatentDistribution dist = vae.encode_latent(features, batch);
    Tensor z = dist.mu;
    if (request.sample) {
        if (sample_rng == nullptr) throw UsageError("transfer_sentence: sampling requires an rng");
        Tensor eps = Tensor::zeros({1, vae.config().d_latent});
        for (float& v : eps.data()) v = static_cast<float>(sample_rng->normal());
        z = sample_latent(dist, eps);
    }
    Tensor adjusted = adjust_latent(reshape(z, {vae.config().d_latent}), table, request);
    std::vector<std::int32_t> ids = vae.decode_greedy(adjusted.data(), request.max_len);
    return detokenize(ids, vocab);
}

SweepRow evaluate_transfer(const SweepModels& models, const std::vector<Sentence>& test_set,
                           float weight, int max_len, std::vector<std::string>* outputs_out) {
    if (!models.backbone || !models.vae || !models.table || !models.vocab || !models.classifier ||
        !models.char_lm) {
        throw UsageError("evaluate_transfer: incomplete model set");
    }
    if (models.table->styles() != 2) throw UsageError("evaluate_transfer: two-style corpora only");
    if (test_set.empty()) throw UsageError("evaluate_transfer: empty test set");

    std::vector<std::string> outputs;
    std::vector<std::string> sources;
    outputs.reserve(test_set.size());
    sources.reserve(test_set.size());
    int hits = 0;
    for (const Sentence& s : test_set) {
        TransferRequest request;
        request.source_style = s.style;
        request.target_style = 1 - s.style;
        request.weight = weight;
        request.max_len = max_len;
        const std::string out = transfer_sentence(*models.backbone, *models.vae, *models.table,
                                                  *models.vocab, s.raw, request);
        if (models.classifier->predict(out) == request.target_style) ++hits;
        outputs.push_back(out);
        sources.push_back(s.raw);
    }

    SweepRow row;
    row.w = weight;
    row.acc = 100.0 * static_cast<double>(hits) / static_cast<double>(test_set.size());
    row.bleu = bleu_score(outputs, sources);
    row.ppl = perplexity(*models.char_lm, outputs);
    row.gm = row.ppl > 1.0 && row.acc > 0.0 && row.bleu > 0.0
                 ? geometric_mean(row.acc, row.bleu, row.ppl)
                 : 0.0;
    if (outputs_out) *outputs_out = std::move(outputs);
    return row;
}

std::vector<SweepRow> sweep_style_weight(const SweepModels& models,
                                         const std::vector<Sentence>& test_set,
                                         const std::vector<float>& weights, int max_len) {
    if (weights.empty()) throw UsageError("sweep_style_weight: empty weight list");
    std::vector<SweepRow> rows;
    rows.reserve(weights.size());
    for (float w : weights) rows.push_back(evaluate_transfer(models, test_set, w, max_len));
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "w,acc,ppl,bleu,gm\n";
    char line[160];
    for (const SweepRow& r : rows) {
        std::snprintf(line, sizeof(line), "%.4g,%.2f,%.2f,%.2f,%.2f\n",
                      static_cast<double>(r.w), r.acc, r.ppl, r.bleu, r.gm);
        os << line;
    }
    return os.str();
}

} // namespace stower

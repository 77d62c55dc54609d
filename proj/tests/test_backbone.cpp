#include <doctest.h>

#include "stower/backbone.hpp"
#include "testutil.hpp"

using namespace stower;

namespace {

BackboneConfig small_config() {
    BackboneConfig config;
    config.layers = 1;
    config.d_model = 32;
    config.heads = 2;
    config.ffn_dim = 64;
    config.max_len = 16;
    config.epochs = 8;
    config.lr = 2e-3f;
    config.token_budget = 512;
    return config;
}

struct Fixture {
    Vocab vocab;
    StyleCorpus corpus;
};

Fixture small_fixture(std::uint64_t seed, int n_per_style) {
    RawCorpus raw = testutil::tiny_raw_corpus(seed, n_per_style);
    Fixture f;
    f.vocab = Vocab::build(raw.all_lines(), 1);
    f.corpus = tokenize_corpus(raw, f.vocab, 16);
    return f;
}

} // namespace

TEST_CASE("mlm pretraining drives the loss below its starting point") {
    Fixture f = small_fixture(21, 100);
    MlmTrainLog log;
    BackboneModel model = pretrain_backbone_mlm(f.corpus, f.vocab.size(), small_config(), 5, &log);
    REQUIRE(log.epoch_means.size() >= 2);
    CHECK(log.epoch_means.back() < log.epoch_means.front());
    CHECK(log.final_loss < log.step_losses.front());
    CHECK(model.frozen());
}

TEST_CASE("mlm learns a token pinned by a unique bigram") {
    // 'leaf' always follows 'green tea'; the model should recover it
    std::vector<std::string> lines;
    const std::vector<std::string> fillers = {"one", "two", "three", "four", "five", "six"};
    Rng mix(3);
    for (int i = 0; i < 160; ++i) {
        const std::string& a = fillers[static_cast<std::size_t>(mix.uniform_int(6))];
        const std::string& b = fillers[static_cast<std::size_t>(mix.uniform_int(6))];
        lines.push_back(a + " " + b + " green tea leaf");
        lines.push_back(a + " " + b + " " + fillers[static_cast<std::size_t>(mix.uniform_int(6))]);
    }
    Vocab vocab = Vocab::build(lines, 1);
    StyleCorpus corpus;
    corpus.k = 2;
    for (const std::string& line : lines) {
        Sentence s = tokenize(line, vocab, 16);
        s.style = 0;
        corpus.sentences.push_back(std::move(s));
    }
    BackboneConfig config = small_config();
    config.epochs = 14;
    BackboneModel model = pretrain_backbone_mlm(corpus, vocab.size(), config, 9);

    int hits = 0, probes = 0;
    Rng probe_mix(4);
    for (int i = 0; i < 40; ++i) {
        const std::string& a = fillers[static_cast<std::size_t>(probe_mix.uniform_int(6))];
        const std::string& b = fillers[static_cast<std::size_t>(probe_mix.uniform_int(6))];
        Sentence s = tokenize(a + " " + b + " green tea leaf", vocab, 16);
        s.style = 0;
        const int slot = 5;  // bos a b green tea [leaf]
        REQUIRE(s.tokens[static_cast<std::size_t>(slot)] == vocab.id("leaf"));
        s.tokens[static_cast<std::size_t>(slot)] = Vocab::kMask;
        Batch batch = testutil::single_batch(s);
        Tensor logits = model.mlm_logits(batch);
        std::span<const float> row = logits.data().subspan(
            static_cast<std::size_t>(slot) * vocab.size(), static_cast<std::size_t>(vocab.size()));
        int best = 0;
        for (int v = 1; v < vocab.size(); ++v) {
            if (row[static_cast<std::size_t>(v)] > row[static_cast<std::size_t>(best)]) best = v;
        }
        hits += best == vocab.id("leaf") ? 1 : 0;
        ++probes;
    }
    CHECK(static_cast<double>(hits) / probes > 0.9);
}

TEST_CASE("pretraining is deterministic per seed") {
    Fixture f = small_fixture(22, 60);
    BackboneConfig config = small_config();
    config.epochs = 3;
    BackboneModel a = pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, 7);
    BackboneModel b = pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, 7);
    BackboneModel c = pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, 8);
    CHECK(param_checksum(a.params()) == param_checksum(b.params()));
    CHECK(param_checksum(a.params()) != param_checksum(c.params()));
}

TEST_CASE("encode yields [B, L, d_model] and is pure when frozen") {
    Fixture f = small_fixture(23, 40);
    BackboneConfig config = small_config();
    config.epochs = 1;
    BackboneModel model = pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, 7);

    std::vector<const Sentence*> rows = {&f.corpus.sentences[0], &f.corpus.sentences[1]};
    Batch batch = make_batch(rows, {});
    Tensor out1 = model.encode(batch);
    CHECK(out1.shape() == Shape{2, batch.cols, config.d_model});
    Tensor out2 = model.encode(batch);
    CHECK(testutil::spans_equal(out1.data(), out2.data()));
    CHECK_FALSE(out1.requires_grad());  // frozen backbone builds no graph
    for (float v : out1.data()) CHECK(std::isfinite(v));
}

TEST_CASE("identity mode returns embeddings plus positions") {
    Fixture f = small_fixture(24, 20);
    BackboneConfig config = small_config();
    config.mode = BackboneConfig::Mode::kIdentity;
    Rng rng(5);
    BackboneModel model = BackboneModel::init(config, f.vocab.size(), rng);

    Sentence s = f.corpus.sentences[0];
    Batch batch = testutil::single_batch(s);
    Tensor out = model.encode(batch);
    std::span<const float> tok = model.token_emb.data();
    std::span<const float> pos = model.pos_emb.data();
    const int D = config.d_model;
    for (int c = 0; c < batch.cols; ++c) {
        for (int j = 0; j < D; ++j) {
            const float want =
                tok[static_cast<std::size_t>(batch.tokens[static_cast<std::size_t>(c)] * D + j)] +
                pos[static_cast<std::size_t>(c * D + j)];
            CHECK(out.data()[static_cast<std::size_t>(c * D + j)] == doctest::Approx(want).epsilon(1e-6));
        }
    }
}

TEST_CASE("encode validates vocabulary compatibility") {
    Fixture f = small_fixture(25, 20);
    Rng rng(5);
    BackboneModel model = BackboneModel::init(small_config(), f.vocab.size(), rng);
    Sentence s = f.corpus.sentences[0];
    s.tokens[1] = static_cast<std::int32_t>(f.vocab.size()) + 10;
    Batch batch = testutil::single_batch(s);
    CHECK_THROWS_AS(model.encode(batch), UsageError);
}

TEST_CASE("frozen backbone parameters cannot accumulate gradients") {
    Fixture f = small_fixture(26, 20);
    BackboneConfig config = small_config();
    config.epochs = 1;
    BackboneModel model = pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, 7);
    const std::uint64_t before = param_checksum(model.params());
    Batch batch = testutil::single_batch(f.corpus.sentences[0]);
    Tensor out = model.encode(batch);
    backward(sum(out));  // no-op: nothing requires grad
    CHECK(param_checksum(model.params()) == before);
    for (const auto& [name, p] : model.params()) CHECK_FALSE(p.requires_grad());
}

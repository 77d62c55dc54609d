#include <cmath>
#include <set>

#include <doctest.h>

#include "stower/pivot_scorer.hpp"
#include "testutil.hpp"

using namespace stower;

namespace {

struct ScorerFixture {
    Vocab vocab;
    StyleCorpus corpus;
    std::shared_ptr<BackboneModel> backbone;
    SyntheticSpec spec = default_synthetic_spec();
};

ScorerFixture make_fixture(std::uint64_t seed, int n_per_style, int backbone_epochs = 5) {
    RawCorpus raw = gen_synthetic_corpus(seed, n_per_style, default_synthetic_spec()).raw();
    ScorerFixture f;
    f.vocab = Vocab::build(raw.all_lines(), 1);
    f.corpus = tokenize_corpus(raw, f.vocab, 16);
    BackboneConfig config;
    config.layers = 1;
    config.d_model = 32;
    config.heads = 2;
    config.ffn_dim = 64;
    config.max_len = 16;
    config.epochs = backbone_epochs;
    config.lr = 2e-3f;
    config.token_budget = 1024;
    f.backbone = std::make_shared<BackboneModel>(
        pretrain_backbone_mlm(f.corpus, f.vocab.size(), config, seed));
    return f;
}

ScorerConfig fast_scorer_config() {
    ScorerConfig config;
    config.heads = 2;
    config.ffn_dim = 64;
    config.gamma = 0.05f;
    config.epochs = 8;
    config.lr = 3e-3f;
    config.token_budget = 256;
    config.holdout_frac = 0.25f;
    return config;
}

} // namespace

TEST_CASE("uniform logits give uniform importance") {
    std::vector<std::vector<float>> logits = {{0.3f, 0.3f, 0.3f, 0.3f}};
    std::vector<float> alpha = importance_from_logits(logits, 0.05f);
    testutil::check_close(alpha, std::vector<float>{0.25f, 0.25f, 0.25f, 0.25f}, 1e-6);
}

TEST_CASE("one head reduces to that head's softmax exactly") {
    std::vector<std::vector<float>> logits = {{0.02f, -0.03f, 0.05f}};
    const float gamma = 0.05f;
    std::vector<float> alpha = importance_from_logits(logits, gamma);
    // independent double softmax
    double e[3], total = 0.0;
    for (int i = 0; i < 3; ++i) {
        e[i] = std::exp(static_cast<double>(logits[0][static_cast<std::size_t>(i)]) / gamma);
        total += e[i];
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(alpha[static_cast<std::size_t>(i)] == doctest::Approx(e[i] / total).epsilon(1e-5));
    }
}

TEST_CASE("smaller gamma sharpens the top score") {
    std::vector<std::vector<float>> logits = {{0.10f, 0.07f, 0.02f, -0.05f}};
    std::vector<float> sharp = importance_from_logits(logits, 0.01f);
    std::vector<float> flat = importance_from_logits(logits, 1.0f);
    CHECK(sharp[0] > flat[0]);
    CHECK(sharp[0] > 0.9f);  // near one-hot at gamma = 0.01
}

TEST_CASE("importance scores sum to one over content tokens") {
    ScorerFixture f = make_fixture(51, 30, 1);
    Rng rng(5);
    ScorerModel model = ScorerModel::init(f.backbone, 2, fast_scorer_config(), rng);
    for (int i = 0; i < 10; ++i) {
        const Sentence& s = f.corpus.sentences[static_cast<std::size_t>(i * 3)];
        ImportanceScores scores = model.importance_scores(s);
        REQUIRE(static_cast<int>(scores.alpha.size()) == s.content_length());
        double total = 0.0;
        for (float a : scores.alpha) {
            CHECK(a >= 0.0f);
            CHECK(a <= 1.0f);
            total += static_cast<double>(a);
        }
        CHECK(std::abs(total - 1.0) < 1e-5);
    }
}

TEST_CASE("importance requires content tokens and positive gamma") {
    ScorerFixture f = make_fixture(52, 10, 1);
    Rng rng(5);
    ScorerModel model = ScorerModel::init(f.backbone, 2, fast_scorer_config(), rng);
    Sentence empty;
    empty.tokens = {Vocab::kBos, Vocab::kEos};
    CHECK_THROWS_AS(model.importance_scores(empty), UsageError);
    CHECK_THROWS_AS(importance_from_logits({{0.1f}}, 0.0f), UsageError);

    ScorerConfig bad = fast_scorer_config();
    bad.gamma = -0.5f;
    CHECK_THROWS_AS(ScorerModel::init(f.backbone, 2, bad, rng), UsageError);
}

TEST_CASE("masking with zero scores changes nothing") {
    Sentence s = testutil::make_sentence({5, 6, 7});
    ImportanceScores scores{{0.0f, 0.0f, 0.0f}};
    Rng rng(3);
    auto [masked, plan] = mask_sentence(s, scores, /*selected=*/true, rng);
    CHECK(masked.tokens == s.tokens);
    CHECK(plan.sentence_selected);
    for (std::uint8_t m : plan.masked) CHECK(m == 0);
}

TEST_CASE("mask pattern follows the documented draw sequence exactly") {
    Sentence s = testutil::make_sentence({5, 6, 7});
    ImportanceScores scores{{0.9f, 0.1f, 0.5f}};
    const std::uint64_t seed = 99;

    // the contract: p_i are consecutive uniform_float() draws from Rng(seed)
    Rng oracle(seed);
    std::vector<float> expected_draws = {oracle.uniform_float(), oracle.uniform_float(),
                                         oracle.uniform_float()};

    Rng rng(seed);
    auto [masked, plan] = mask_sentence(s, scores, true, rng);
    testutil::check_close(plan.draws, expected_draws, 0.0);
    for (int i = 0; i < 3; ++i) {
        const bool want = expected_draws[static_cast<std::size_t>(i)] < scores.alpha[static_cast<std::size_t>(i)];
        CHECK(plan.masked[static_cast<std::size_t>(i)] == (want ? 1 : 0));
        CHECK(masked.tokens[static_cast<std::size_t>(i + 1)] ==
              (want ? Vocab::kMask : s.tokens[static_cast<std::size_t>(i + 1)]));
    }
    CHECK(masked.tokens.front() == Vocab::kBos);
    CHECK(masked.tokens.back() == Vocab::kEos);
    CHECK(masked.tokens.size() == s.tokens.size());
}

TEST_CASE("unselected sentences draw but never mask") {
    Sentence s = testutil::make_sentence({5, 6, 7});
    ImportanceScores scores{{1.0f, 1.0f, 1.0f}};
    Rng rng(4);
    auto [masked, plan] = mask_sentence(s, scores, /*selected=*/false, rng);
    CHECK(masked.tokens == s.tokens);
    CHECK_FALSE(plan.sentence_selected);
    CHECK(plan.draws.size() == 3);  // draws consumed regardless
    for (std::uint8_t m : plan.masked) CHECK(m == 0);
}

TEST_CASE("empirical mask rate tracks alpha over 10k trials") {
    Sentence s = testutil::make_sentence({5});
    const float alpha = 0.3f;
    ImportanceScores scores{{alpha}};
    Rng rng(2024);
    int masked_count = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        auto [masked, plan] = mask_sentence(s, scores, true, rng);
        masked_count += plan.masked[0];
    }
    const double rate = static_cast<double>(masked_count) / trials;
    const double sigma = std::sqrt(alpha * (1.0 - alpha) / trials);
    CHECK(std::abs(rate - alpha) < 3.0 * sigma);
}

TEST_CASE("misaligned scores are rejected") {
    Sentence s = testutil::make_sentence({5, 6, 7});
    ImportanceScores wrong{{0.5f, 0.5f}};
    Rng rng(8);
    CHECK_THROWS_AS(mask_sentence(s, wrong, true, rng), UsageError);
}

TEST_CASE("style classifier separates the synthetic styles") {
    ScorerFixture f = make_fixture(53, 120, 5);
    ScorerTrainResult result = train_style_classifier(f.corpus, f.backbone, fast_scorer_config(), 7);
    CHECK(result.holdout_accuracy >= 0.99f);
}

TEST_CASE("label-shuffled corpus trains to chance accuracy") {
    ScorerFixture f = make_fixture(54, 150, 3);
    StyleCorpus shuffled = f.corpus;
    Rng rng(5);
    std::vector<int> labels;
    for (const Sentence& s : shuffled.sentences) labels.push_back(s.style);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < labels.size(); ++i) shuffled.sentences[i].style = labels[i];

    ScorerConfig config = fast_scorer_config();
    config.holdout_frac = 0.4f;
    ScorerTrainResult result = train_style_classifier(shuffled, f.backbone, config, 7);
    CHECK(result.holdout_accuracy > 0.45f);
    CHECK(result.holdout_accuracy < 0.55f);
}

TEST_CASE("scorer training is deterministic per seed") {
    ScorerFixture f = make_fixture(55, 60, 2);
    ScorerConfig config = fast_scorer_config();
    config.epochs = 2;
    ScorerTrainResult a = train_style_classifier(f.corpus, f.backbone, config, 7);
    ScorerTrainResult b = train_style_classifier(f.corpus, f.backbone, config, 7);
    ScorerTrainResult c = train_style_classifier(f.corpus, f.backbone, config, 8);
    CHECK(param_checksum(a.model.params()) == param_checksum(b.model.params()));
    CHECK(param_checksum(a.model.params()) != param_checksum(c.model.params()));
}

TEST_CASE("trained scorer puts more weight on markers than anchors") {
    ScorerFixture f = make_fixture(56, 150, 5);
    ScorerTrainResult result = train_style_classifier(f.corpus, f.backbone, fast_scorer_config(), 7);

    std::set<std::string> markers;
    for (const auto& lex : f.spec.marker_lexicons) markers.insert(lex.begin(), lex.end());

    int favorable = 0, tested = 0;
    for (std::size_t i = 0; i < f.corpus.sentences.size() && tested < 60; i += 5) {
        const Sentence& s = f.corpus.sentences[i];
        ImportanceScores scores = result.model.importance_scores(s);
        double marker_sum = 0.0, anchor_sum = 0.0;
        int marker_n = 0, anchor_n = 0;
        for (int t = 0; t < s.content_length(); ++t) {
            const std::string& tok = f.vocab.token(s.tokens[static_cast<std::size_t>(t + 1)]);
            if (markers.contains(tok)) {
                marker_sum += scores.alpha[static_cast<std::size_t>(t)];
                ++marker_n;
            } else {
                anchor_sum += scores.alpha[static_cast<std::size_t>(t)];
                ++anchor_n;
            }
        }
        if (marker_n == 0 || anchor_n == 0) continue;
        ++tested;
        favorable += marker_sum / marker_n > anchor_sum / anchor_n ? 1 : 0;
    }
    REQUIRE(tested >= 40);
    CHECK(static_cast<double>(favorable) / tested >= 0.9);
}

#include <cmath>

#include <doctest.h>

#include "stower/grad_check.hpp"
#include "stower/style_vae.hpp"
#include "testutil.hpp"

using namespace stower;

namespace {

VaeConfig tiny_vae_config() {
    VaeConfig config;
    config.d_latent = 8;
    config.layers = 1;
    config.heads = 2;
    config.ffn_dim = 16;
    config.max_len = 8;
    return config;
}

} // namespace

TEST_CASE("encode_latent emits d-dim mu and log_var and is pure") {
    Rng rng(3);
    VaeModel model = VaeModel::init(tiny_vae_config(), 12, 10, rng);
    Sentence s = testutil::make_sentence({5, 6, 7});
    Batch batch = testutil::single_batch(s);
    Tensor features = Tensor::randn({1, batch.cols, 10}, rng);

    LatentDistribution d1 = model.encode_latent(features, batch);
    CHECK(d1.mu.shape() == Shape{1, 8});
    CHECK(d1.log_var.shape() == Shape{1, 8});
    LatentDistribution d2 = model.encode_latent(features, batch);
    CHECK(testutil::spans_equal(d1.mu.data(), d2.mu.data()));
    CHECK(testutil::spans_equal(d1.log_var.data(), d2.log_var.data()));
}

TEST_CASE("padding changes nothing about the posterior") {
    Rng rng(5);
    const int backbone_dim = 10;
    VaeModel model = VaeModel::init(tiny_vae_config(), 12, backbone_dim, rng);
    Sentence s = testutil::make_sentence({5, 6, 7});

    Batch alone = testutil::single_batch(s);
    Tensor features_alone = Tensor::randn({1, alone.cols, backbone_dim}, rng);
    LatentDistribution plain = model.encode_latent(features_alone, alone);

    // same row padded out with garbage features at pad positions
    const int L = alone.cols + 3;
    Batch padded;
    padded.rows = 1;
    padded.cols = L;
    padded.tokens.assign(static_cast<std::size_t>(L), Vocab::kPad);
    padded.mask.assign(static_cast<std::size_t>(L), 0.0f);
    for (int c = 0; c < alone.cols; ++c) {
        padded.tokens[static_cast<std::size_t>(c)] = alone.tokens[static_cast<std::size_t>(c)];
        padded.mask[static_cast<std::size_t>(c)] = 1.0f;
    }
    Tensor features_padded = Tensor::full({1, L, backbone_dim}, 77.0f);
    for (int i = 0; i < alone.cols * backbone_dim; ++i) {
        features_padded.data()[static_cast<std::size_t>(i)] = features_alone.data()[static_cast<std::size_t>(i)];
    }
    LatentDistribution padded_dist = model.encode_latent(features_padded, padded);
    testutil::check_close(padded_dist.mu.data(), plain.mu.data(), 1e-5);
    testutil::check_close(padded_dist.log_var.data(), plain.log_var.data(), 1e-5);
}

TEST_CASE("encode_latent rejects an all-pad row") {
    Rng rng(7);
    VaeModel model = VaeModel::init(tiny_vae_config(), 12, 10, rng);
    Batch batch;
    batch.rows = 1;
    batch.cols = 4;
    batch.tokens.assign(4, Vocab::kPad);
    batch.mask.assign(4, 0.0f);
    Tensor features = Tensor::randn({1, 4, 10}, rng);
    CHECK_THROWS_AS(model.encode_latent(features, batch), UsageError);
}

TEST_CASE("sample_latent with zero noise returns mu") {
    LatentDistribution dist{Tensor::from_data({1, 3}, {0.5f, -1.0f, 2.0f}),
                            Tensor::from_data({1, 3}, {0.0f, 1.0f, -2.0f})};
    Tensor z = sample_latent(dist, Tensor::zeros({1, 3}));
    testutil::check_close(z.data(), dist.mu.data(), 1e-7);
    CHECK_THROWS_AS(sample_latent(dist, Tensor::zeros({1, 2})), UsageError);
}

TEST_CASE("sample_latent is reproducible per seed") {
    LatentDistribution dist{Tensor::from_data({1, 4}, {0, 1, 2, 3}),
                            Tensor::from_data({1, 4}, {0, 0, 0, 0})};
    auto draw = [&dist](std::uint64_t seed) {
        Rng rng(seed);
        Tensor eps = Tensor::zeros({1, 4});
        for (float& v : eps.data()) v = static_cast<float>(rng.normal());
        return sample_latent(dist, eps);
    };
    CHECK(testutil::spans_equal(draw(7).data(), draw(7).data()));
    CHECK_FALSE(testutil::spans_equal(draw(7).data(), draw(8).data()));
}

TEST_CASE("10k reparameterized samples match the distribution moments") {
    const double mu = 0.7, log_var = std::log(0.25);
    LatentDistribution dist{Tensor::from_data({1, 1}, {static_cast<float>(mu)}),
                            Tensor::from_data({1, 1}, {static_cast<float>(log_var)})};
    Rng rng(123);
    const int n = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        Tensor eps = Tensor::from_data({1, 1}, {static_cast<float>(rng.normal())});
        const double z = sample_latent(dist, eps).data()[0];
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double sigma = 0.5;  // sqrt(0.25)
    const double se_mean = sigma / std::sqrt(static_cast<double>(n));
    const double se_var = sigma * sigma * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(mean - mu) < 3 * se_mean);
    CHECK(std::abs(var - sigma * sigma) < 3 * se_var);
}

TEST_CASE("kl closed forms") {
    LatentDistribution prior{Tensor::zeros({1, 4}), Tensor::zeros({1, 4})};
    CHECK(kl_term(prior).item() == doctest::Approx(0.0));

    LatentDistribution shifted{Tensor::from_data({1, 2}, {1, 0}), Tensor::zeros({1, 2})};
    CHECK(kl_term(shifted).item() == doctest::Approx(0.5).epsilon(1e-6));

    LatentDistribution wide{Tensor::zeros({1, 1}),
                            Tensor::from_data({1, 1}, {static_cast<float>(std::log(2.0))})};
    CHECK(kl_term(wide).item() == doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).epsilon(1e-5));
}

TEST_CASE("kl is non-negative for 1000 random distributions") {
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        LatentDistribution dist{Tensor::randn({1, 6}, rng, 2.0f), Tensor::randn({1, 6}, rng, 2.0f)};
        CHECK(kl_term(dist).item() >= 0.0f);
    }
}

TEST_CASE("kl gradcheck") {
    Rng rng(33);
    Tensor mu = Tensor::randn({2, 5}, rng, 1.0f, true);
    Tensor lv = Tensor::randn({2, 5}, rng, 0.5f, true);
    auto fwd = [&] { return kl_term({mu, lv}); };
    CHECK(finite_diff_check(fwd, {{"mu", mu}, {"lv", lv}}).max_rel_err < 1e-3);
}

TEST_CASE("style loss closed forms at cos=1 and cos=0") {
    Rng rng(11);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, 4, rng);
    // style 0 row fixed to e0, style 1 row to e1
    std::fill(table.weight.data().begin(), table.weight.data().end(), 0.0f);
    table.weight.data()[0] = 1.0f;
    table.weight.data()[5] = 1.0f;

    Tensor z_parallel = Tensor::from_data({1, 4}, {2.5f, 0, 0, 0});
    std::vector<int> style0 = {0};
    CHECK(style_loss(table, z_parallel, style0).item() ==
          doctest::Approx(-std::log(1.0 / (1.0 + std::exp(-1.0)))).epsilon(1e-4));  // 0.31326

    Tensor z_orthogonal = Tensor::from_data({1, 4}, {0, 0, 3.0f, 0});
    CHECK(style_loss(table, z_orthogonal, style0).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-4));  // 0.69315
}

TEST_CASE("style loss moves only the table") {
    Rng rng(13);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, 4, rng);
    Tensor upstream = Tensor::randn({1, 4}, rng, 1.0f, true);  // stands in for encoder outputs
    Tensor z = scale(upstream, 2.0f);
    std::vector<int> styles = {1};
    Tensor loss = style_loss(table, z, styles);
    backward(loss);
    CHECK_FALSE(upstream.has_grad());
    REQUIRE(table.weight.has_grad());
    double grad_norm = 0.0;
    for (float g : table.weight.grad()) grad_norm += std::abs(static_cast<double>(g));
    CHECK(grad_norm > 0.0);
}

TEST_CASE("style loss rejects zero-norm inputs") {
    Rng rng(17);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, 4, rng);
    Tensor z = Tensor::zeros({1, 4});
    std::vector<int> styles = {0};
    CHECK_THROWS_AS(style_loss(table, z, styles), UsageError);
}

TEST_CASE("style loss gradcheck into the table") {
    Rng rng(19);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, 6, rng);
    Tensor z = Tensor::randn({3, 6}, rng);
    std::vector<int> styles = {0, 1, 0};
    auto fwd = [&] { return style_loss(table, z, styles); };
    CHECK(finite_diff_check(fwd, {{"table", table.weight}}).max_rel_err < 1e-3);
}

TEST_CASE("uniform decoder reconstruction loss is ln V") {
    Rng rng(23);
    const int vocab = 12;
    VaeModel model = VaeModel::init(tiny_vae_config(), vocab, 10, rng);
    std::fill(model.out_proj.weight.data().begin(), model.out_proj.weight.data().end(), 0.0f);
    std::fill(model.out_proj.bias.data().begin(), model.out_proj.bias.data().end(), 0.0f);

    Sentence s = testutil::make_sentence({5, 6, 7, 8});
    Batch batch = testutil::single_batch(s);
    Tensor conditioning = Tensor::randn({1, 8}, rng);
    Tensor loss = reconstruction_nll(model, batch, conditioning);
    CHECK(loss.item() == doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(1e-5));
}

TEST_CASE("reconstruction keeps sg(s_x): style table gets no gradient from it") {
    Rng rng(29);
    const int vocab = 12;
    VaeModel model = VaeModel::init(tiny_vae_config(), vocab, 10, rng);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, 8, rng);
    Sentence s = testutil::make_sentence({5, 6, 7}, 1);
    Batch batch = testutil::single_batch(s);
    Tensor features = Tensor::randn({1, batch.cols, 10}, rng);
    Tensor eps = Tensor::zeros({1, 8});

    Stage1Loss loss = stage1_total_loss(model, table, features, batch, batch, eps,
                                        /*lambda_vae=*/1.0f, /*lambda_style=*/0.0f, /*beta=*/1.0f);
    backward(loss.total);
    bool table_grad_nonzero = false;
    if (table.weight.has_grad()) {
        for (float g : table.weight.grad()) table_grad_nonzero = table_grad_nonzero || g != 0.0f;
    }
    CHECK_FALSE(table_grad_nonzero);
    CHECK(model.input_proj.weight.has_grad());
}

TEST_CASE("stage1 combine obeys the weighted sum") {
    Tensor zero = Tensor::scalar(0.0f);
    CHECK(combine_stage1_loss(zero, zero, zero, 1, 1, 1).item() == doctest::Approx(0.0));

    Tensor nll = Tensor::scalar(2.0f);
    Tensor kl = Tensor::scalar(0.5f);
    Tensor style = Tensor::scalar(0.7f);
    CHECK(combine_stage1_loss(nll, kl, style, 1, 1, 1).item() == doctest::Approx(3.2).epsilon(1e-6));

    // halving beta halves only the KL contribution
    const float with_full = combine_stage1_loss(nll, kl, style, 1, 1, 1).item();
    const float with_half = combine_stage1_loss(nll, kl, style, 1, 1, 0.5f).item();
    CHECK(with_full - with_half == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("decode_greedy contract and determinism") {
    Rng rng(37);
    VaeModel model = VaeModel::init(tiny_vae_config(), 12, 10, rng);
    std::vector<float> conditioning(8, 0.3f);
    std::vector<std::int32_t> a = model.decode_greedy(conditioning, 8);
    std::vector<std::int32_t> b = model.decode_greedy(conditioning, 8);
    CHECK(a == b);
    REQUIRE(!a.empty());
    CHECK(a.front() == Vocab::kBos);
    const int content = static_cast<int>(a.size()) - 1 - (a.back() == Vocab::kEos ? 1 : 0);
    CHECK(content <= 8);
    if (a.back() != Vocab::kEos) CHECK(content >= 8);
}

TEST_CASE("full stage-I loss passes the finite-difference check on two sentences") {
    Rng rng(41);
    const int vocab = 12, backbone_dim = 6;
    VaeConfig config = tiny_vae_config();
    VaeModel model = VaeModel::init(config, vocab, backbone_dim, rng);
    StyleEmbeddingTable table = StyleEmbeddingTable::init(2, config.d_latent, rng);

    Sentence s0 = testutil::make_sentence({5, 6, 7}, 0);
    Sentence s1 = testutil::make_sentence({8, 9}, 1);
    const Sentence* rows[] = {&s0, &s1};
    Batch batch = make_batch(rows, {});
    Tensor features = Tensor::randn({2, batch.cols, backbone_dim}, rng, 0.7f);
    Tensor eps = Tensor::randn({2, config.d_latent}, rng, 1.0f);
    const std::vector<int> styles(batch.styles.begin(), batch.styles.end());

    // Freeze the stop-gradient arguments at the base point: central
    // differences otherwise measure sensitivity through the sg() paths
    // that the analytic gradient is defined to ignore.
    LatentDistribution dist0 = model.encode_latent(features, batch);
    Tensor z0 = sample_latent(dist0, eps);
    Tensor z_const = Tensor::from_data(z0.shape(), {z0.data().begin(), z0.data().end()});
    Tensor s0_rows = table.rows_for(styles);
    Tensor s_const = Tensor::from_data(s0_rows.shape(), {s0_rows.data().begin(), s0_rows.data().end()});

    auto fwd = [&] {
        LatentDistribution dist = model.encode_latent(features, batch);
        Tensor z = sample_latent(dist, eps);
        Tensor nll = reconstruction_nll(model, batch, add(z, s_const));
        Tensor kl = kl_term(dist);
        Tensor style = style_loss(table, z_const, styles);
        return combine_stage1_loss(nll, kl, style, 1.0f, 1.0f, 1.0f);
    };
    std::vector<std::pair<std::string, Tensor>> params;
    for (auto& p : model.params()) params.push_back(p);
    for (auto& p : table.params()) params.push_back(p);

    // the frozen-sg closure must agree with the production loss at the
    // base point, in value and in gradients
    Stage1Loss production = stage1_total_loss(model, table, features, batch, batch, eps, 1, 1, 1);
    for (auto& [name, p] : params) {
        Tensor mut = p;
        mut.ensure_grad();
        mut.zero_grad();
    }
    backward(production.total);
    std::vector<std::vector<float>> production_grads;
    for (auto& [name, p] : params) production_grads.emplace_back(p.grad().begin(), p.grad().end());
    for (auto& [name, p] : params) {
        Tensor mut = p;
        mut.zero_grad();
    }
    Tensor frozen = fwd();
    CHECK(frozen.item() == doctest::Approx(production.total.item()).epsilon(1e-6));
    backward(frozen);
    for (std::size_t i = 0; i < params.size(); ++i) {
        testutil::check_close(params[i].second.grad(), production_grads[i], 1e-6);
    }

    GradCheckReport report = finite_diff_check(fwd, params);
    CHECK(report.max_rel_err < 1e-2);
}

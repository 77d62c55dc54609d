#include <cmath>

#include <doctest.h>

#include "stower/grad_check.hpp"
#include "stower/nn.hpp"
#include "testutil.hpp"

using namespace stower;

TEST_CASE("layer norm rows have zero mean and unit variance pre-affine") {
    Rng rng(3);
    Tensor x = Tensor::randn({6, 16}, rng, 2.5f);
    LayerNorm ln = LayerNorm::init(16);  // identity affine at init
    Tensor y = ln.forward(x);
    std::span<const float> v = y.data();
    for (int r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 16; ++j) mean += v[static_cast<std::size_t>(r * 16 + j)];
        mean /= 16.0;
        for (int j = 0; j < 16; ++j) {
            const double d = v[static_cast<std::size_t>(r * 16 + j)] - mean;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("layer norm block passes the finite-difference check") {
    Rng rng(5);
    Tensor x = Tensor::randn({2, 6}, rng, 1.0f, true);
    LayerNorm ln = LayerNorm::init(6);
    // non-identity affine so the gain gradient is exercised
    for (float& g : ln.gain.data()) g = 1.0f + 0.2f * g;
    Tensor w = Tensor::randn({2, 6}, rng);
    auto fwd = [&] { return sum(mul(ln.forward(x), w)); };
    GradCheckReport report =
        finite_diff_check(fwd, {{"x", x}, {"gain", ln.gain}, {"bias", ln.bias}});
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("attention block passes the finite-difference check") {
    Rng rng(7);
    const int D = 8, L = 5, B = 2;
    MultiHeadAttention mha = MultiHeadAttention::init(D, 2, rng);
    Tensor x = Tensor::randn({B, L, D}, rng, 0.7f, true);
    Tensor w = Tensor::randn({B, L, D}, rng);
    auto fwd = [&] { return sum(mul(mha.forward(x, Tensor{}), w)); };
    std::vector<std::pair<std::string, Tensor>> params = {{"x", x}};
    for (auto& p : [&] { ParamMap m; mha.collect("attn", m); return m; }()) params.push_back(p);
    GradCheckReport report = finite_diff_check(fwd, params);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("full transformer block gradcheck") {
    Rng rng(11);
    const int D = 8, L = 4, B = 2;
    TransformerBlock block = TransformerBlock::init(D, 2, 16, rng);
    Tensor x = Tensor::randn({B, L, D}, rng, 0.7f, true);
    Tensor w = Tensor::randn({B, L, D}, rng);
    Batch fake;
    fake.rows = B;
    fake.cols = L;
    fake.mask = {1, 1, 1, 0, 1, 1, 1, 1};
    fake.tokens.assign(static_cast<std::size_t>(B * L), 5);
    Tensor mask = padding_attn_mask(fake);
    auto fwd = [&] { return sum(mul(block.forward(x, mask), w)); };
    std::vector<std::pair<std::string, Tensor>> params = {{"x", x}};
    for (auto& p : [&] { ParamMap m; block.collect("block", m); return m; }()) params.push_back(p);
    CHECK(finite_diff_check(fwd, params).max_rel_err < 1e-3);
}

TEST_CASE("padding mask zeroes attention to padded keys") {
    Rng rng(13);
    const int D = 8, L = 4;
    MultiHeadAttention mha = MultiHeadAttention::init(D, 2, rng);

    // same content row, one padded to longer length with garbage values
    Tensor x_short = Tensor::randn({1, 3, D}, rng, 1.0f);
    Tensor x_long = Tensor::zeros({1, L, D});
    for (int i = 0; i < 3 * D; ++i) x_long.data()[static_cast<std::size_t>(i)] = x_short.data()[static_cast<std::size_t>(i)];
    for (int i = 3 * D; i < L * D; ++i) x_long.data()[static_cast<std::size_t>(i)] = 123.0f;

    Batch short_b;
    short_b.rows = 1;
    short_b.cols = 3;
    short_b.mask = {1, 1, 1};
    Batch long_b;
    long_b.rows = 1;
    long_b.cols = L;
    long_b.mask = {1, 1, 1, 0};

    Tensor out_short = mha.forward(x_short, padding_attn_mask(short_b));
    Tensor out_long = mha.forward(x_long, padding_attn_mask(long_b));
    for (int i = 0; i < 3 * D; ++i) {
        CHECK(out_short.data()[static_cast<std::size_t>(i)] ==
              doctest::Approx(out_long.data()[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("causal mask blocks attention to future positions") {
    Rng rng(17);
    const int D = 8, L = 5;
    TransformerStack stack = TransformerStack::init(1, D, 2, 16, rng);
    Tensor x = Tensor::randn({1, L, D}, rng);
    Tensor out1 = stack.forward(x, causal_attn_mask(L));

    // changing the future must not change earlier positions
    Tensor x2 = Tensor::from_data({1, L, D}, {x.data().begin(), x.data().end()});
    for (int j = 0; j < D; ++j) x2.data()[static_cast<std::size_t>((L - 1) * D + j)] += 10.0f;
    Tensor out2 = stack.forward(x2, causal_attn_mask(L));
    for (int i = 0; i < (L - 1) * D; ++i) {
        CHECK(out1.data()[static_cast<std::size_t>(i)] ==
              doctest::Approx(out2.data()[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("param maps are stable and checksums detect changes") {
    Rng rng(19);
    TransformerBlock block = TransformerBlock::init(8, 2, 16, rng);
    ParamMap a;
    block.collect("block", a);
    ParamMap b;
    block.collect("block", b);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].first == b[i].first);

    const std::uint64_t before = param_checksum(a);
    CHECK(before == param_checksum(b));
    a[0].second.data()[0] += 1.0f;
    CHECK(before != param_checksum(a));

    auto snap = snapshot_params(a);
    a[0].second.data()[0] += 5.0f;
    restore_params(a, snap);
    CHECK(param_checksum(a) != before);  // snapshot was taken after the first bump
}

TEST_CASE("first_token extracts position zero") {
    Tensor x = Tensor::from_data({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    Tensor f = first_token(x);
    CHECK(f.shape() == Shape{2, 3});
    testutil::check_close(f.data(), std::vector<float>{1, 2, 3, 7, 8, 9}, 0.0);
}

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <doctest.h>

#include "stower/corpus.hpp"
#include "stower/tensor.hpp"

namespace stower::testutil {

inline void check_close(std::span<const float> got, std::span<const float> want, double tol = 1e-5) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(static_cast<double>(got[i]) - static_cast<double>(want[i])) <= tol);
    }
}

inline bool spans_equal(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

inline Sentence make_sentence(std::vector<std::int32_t> content, int style = 0) {
    Sentence s;
    s.tokens.push_back(Vocab::kBos);
    for (std::int32_t t : content) s.tokens.push_back(t);
    s.tokens.push_back(Vocab::kEos);
    s.style = style;
    return s;
}

inline Batch single_batch(const Sentence& s) {
    const Sentence* row[] = {&s};
    return make_batch(row, {});
}

/// Tiny two-style corpus where markers decide the style, for fast
/// training tests.
inline RawCorpus tiny_raw_corpus(std::uint64_t seed, int n_per_style) {
    return gen_synthetic_corpus(seed, n_per_style, default_synthetic_spec()).raw();
}

} // namespace stower::testutil

#pragma once

#include <span>
#include <vector>

#include "stower/tensor.hpp"

namespace stower {

// Elementwise with numpy-style broadcasting (trailing alignment, 1-dims
// stretch). Gradients are reduced back over broadcast dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, float c);
Tensor add_scalar(const Tensor& a, float c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // domain x > 0
Tensor sqrt(const Tensor& a);  // domain x > 0 for gradients
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor clamp(const Tensor& a, float lo, float hi);

/// [*, M, K] x [K, N], or [*, M, K] x [*, K, N] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);
/// Rank-4 [A, B, C, D] -> [A, C, B, D]; separates/merges attention heads.
Tensor transpose_12(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Numerically stable softmax along `axis`; rows sum to 1.
Tensor softmax(const Tensor& a, int axis);

/// Normalization over the last axis, then affine (gain, bias), eps 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

/// Row lookup: table [V, D], ids length n -> [n, D]. Gradient scatters into table.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Mean of -log softmax(logits)[target] over included positions.
/// logits [P, V]; include (optional) marks positions that count.
Tensor cross_entropy_nll(const Tensor& logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> include = {});

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

/// x [B, L, D], mask [B, L] of 0/1 -> [B, D]: mean over unmasked positions.
Tensor mean_pool(const Tensor& x, const Tensor& mask);

Tensor sum(const Tensor& a);        // -> scalar, f64 accumulation
Tensor mean(const Tensor& a);       // -> scalar
Tensor sum_axis(const Tensor& a, int axis);

inline Tensor stop_gradient(const Tensor& a) { return a.detach(); }

/// cos(a, b) along the last axis; a, b [*, D] -> [*].
Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps = 1e-12f);

} // namespace stower

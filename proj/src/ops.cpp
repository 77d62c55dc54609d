#include "stower/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace stower {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw UsageError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Per-out-dim element strides; 0 where the input is broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t acc = 1;
    for (int i = static_cast<int>(in.size()) - 1, o = static_cast<int>(out.size()) - 1; o >= 0; --i, --o) {
        const int din = i >= 0 ? in[static_cast<std::size_t>(i)] : 1;
        if (din == out[static_cast<std::size_t>(o)]) {
            strides[static_cast<std::size_t>(o)] = din == 1 ? 0 : acc;
        } else {
            strides[static_cast<std::size_t>(o)] = 0;  // din == 1, broadcast
        }
        acc *= static_cast<std::size_t>(std::max(din, 1));
    }
    return strides;
}

template <class Fwd, class BwdA, class BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda, BwdB dfdb) {
    if (a.shape() == b.shape()) {
        Tensor out = make_op_result(a.shape(), {a, b}, [dfda, dfdb](TensorNode& node) {
            Tensor& pa = node.parents[0];
            Tensor& pb = node.parents[1];
            const std::size_t n = node.grad.size();
            const float* av = pa.data().data();
            const float* bv = pb.data().data();
            const float* g = node.grad.data();
            if (pa.requires_grad()) {
                float* ga = pa.grad_mut().data();
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfda(av[i], bv[i]);
            }
            if (pb.requires_grad()) {
                float* gb = pb.grad_mut().data();
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * dfdb(av[i], bv[i]);
            }
        });
        const std::size_t n = out.size();
        const float* av = a.data().data();
        const float* bv = b.data().data();
        float* ov = out.data().data();
        for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
        return out;
    }

    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const std::size_t rank = out_shape.size();
    const std::size_t n = shape_numel(out_shape);

    std::vector<std::size_t> out_strides(rank, 1);
    for (int i = static_cast<int>(rank) - 2; i >= 0; --i) {
        out_strides[static_cast<std::size_t>(i)] =
            out_strides[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(out_shape[static_cast<std::size_t>(i) + 1]);
    }

    auto map_index = [rank, out_strides](std::size_t flat, const std::vector<std::size_t>& strides) {
        std::size_t idx = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            const std::size_t coord = flat / out_strides[d];
            flat -= coord * out_strides[d];
            idx += coord * strides[d];
        }
        return idx;
    };

    Tensor out = make_op_result(out_shape, {a, b},
        [sa, sb, map_index, dfda, dfdb](TensorNode& node) {
            Tensor& pa = node.parents[0];
            Tensor& pb = node.parents[1];
            const float* av = pa.data().data();
            const float* bv = pb.data().data();
            const float* g = node.grad.data();
            const std::size_t n2 = node.grad.size();
            float* ga = pa.requires_grad() ? pa.grad_mut().data() : nullptr;
            float* gb = pb.requires_grad() ? pb.grad_mut().data() : nullptr;
            for (std::size_t i = 0; i < n2; ++i) {
                const std::size_t ia = map_index(i, sa);
                const std::size_t ib = map_index(i, sb);
                if (ga) ga[ia] += g[i] * dfda(av[ia], bv[ib]);
                if (gb) gb[ib] += g[i] * dfdb(av[ia], bv[ib]);
            }
        });
    const float* av = a.data().data();
    const float* bv = b.data().data();
    float* ov = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        ov[i] = fwd(av[map_index(i, sa)], bv[map_index(i, sb)]);
    }
    return out;
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd dfdx) {
    Tensor out = make_op_result(a.shape(), {a}, [dfdx](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        const std::size_t n = node.grad.size();
        const float* av = pa.data().data();
        const float* ov = node.values->data();
        const float* g = node.grad.data();
        float* ga = pa.grad_mut().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfdx(av[i], ov[i]);
    });
    const std::size_t n = out.size();
    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i]);
    return out;
}

void check_domain(const Tensor& a, const char* op, bool positive_only) {
    for (float v : a.data()) {
        if (positive_only ? v <= 0.0f : v < 0.0f) {
            throw UsageError(std::string(op) + ": input outside domain (" + std::to_string(v) + ")");
        }
    }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b,
                     [](float x, float y) { return x + y; },
                     [](float, float) { return 1.0f; },
                     [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b,
                     [](float x, float y) { return x - y; },
                     [](float, float) { return 1.0f; },
                     [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b,
                     [](float x, float y) { return x * y; },
                     [](float, float y) { return y; },
                     [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(a, b,
                     [](float x, float y) { return x / y; },
                     [](float, float y) { return 1.0f / y; },
                     [](float x, float y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, float c) {
    return unary_op(a, [c](float x) { return c * x; }, [c](float, float) { return c; });
}

Tensor add_scalar(const Tensor& a, float c) {
    return unary_op(a, [c](float x) { return x + c; }, [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

Tensor exp(const Tensor& a) {
    return unary_op(a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
    check_domain(a, "log", /*positive_only=*/true);
    return unary_op(a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tensor sqrt(const Tensor& a) {
    check_domain(a, "sqrt", /*positive_only=*/false);
    return unary_op(a, [](float x) { return std::sqrt(x); },
                    [](float, float y) { return 0.5f / std::max(y, 1e-12f); });
}

Tensor tanh(const Tensor& a) {
    return unary_op(a, [](float x) { return std::tanh(x); },
                    [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a,
                    [](float x) { return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                                                   : std::exp(x) / (1.0f + std::exp(x)); },
                    [](float, float y) { return y * (1.0f - y); });
}

Tensor gelu(const Tensor& a) {
    return unary_op(a,
                    [](float x) {
                        return static_cast<float>(0.5 * static_cast<double>(x) *
                                                  (1.0 + std::erf(static_cast<double>(x) * kInvSqrt2)));
                    },
                    [](float x, float) {
                        const double xd = static_cast<double>(x);
                        const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
                        return static_cast<float>(cdf + xd * pdf);
                    });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
    if (lo > hi) throw UsageError("clamp: lo > hi");
    return unary_op(a,
                    [lo, hi](float x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw UsageError("matmul requires rank >= 2, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const int M = a.shape()[a.shape().size() - 2];
    const int K = a.shape()[a.shape().size() - 1];
    const int Kb = b.shape()[b.shape().size() - 2];
    const int N = b.shape()[b.shape().size() - 1];
    if (K != Kb) {
        throw UsageError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    const bool b_shared = lead_b.empty();
    if (!b_shared && lead_a != lead_b) {
        throw UsageError("matmul leading dimensions must match (or rhs must be 2-D): " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t batch = shape_numel(lead_a);
    Shape out_shape = lead_a;
    out_shape.push_back(M);
    out_shape.push_back(N);

    const std::size_t sM = static_cast<std::size_t>(M);
    const std::size_t sK = static_cast<std::size_t>(K);
    const std::size_t sN = static_cast<std::size_t>(N);

    Tensor out = make_op_result(std::move(out_shape), {a, b},
        [batch, sM, sK, sN, b_shared](TensorNode& node) {
            Tensor& pa = node.parents[0];
            Tensor& pb = node.parents[1];
            const float* av = pa.data().data();
            const float* bv = pb.data().data();
            const float* g = node.grad.data();
            if (pa.requires_grad()) {
                float* ga = pa.grad_mut().data();
                for (std::size_t t = 0; t < batch; ++t) {
                    const float* gt = g + t * sM * sN;
                    const float* bt = bv + (b_shared ? 0 : t * sK * sN);
                    float* gat = ga + t * sM * sK;
                    // dA = dC @ B^T : rows of dC dotted with rows of B
                    for (std::size_t i = 0; i < sM; ++i) {
                        for (std::size_t k = 0; k < sK; ++k) {
                            const float* grow = gt + i * sN;
                            const float* brow = bt + k * sN;
                            float acc = 0.0f;
                            for (std::size_t j = 0; j < sN; ++j) acc += grow[j] * brow[j];
                            gat[i * sK + k] += acc;
                        }
                    }
                }
            }
            if (pb.requires_grad()) {
                float* gb = pb.grad_mut().data();
                for (std::size_t t = 0; t < batch; ++t) {
                    const float* gt = g + t * sM * sN;
                    const float* at = av + t * sM * sK;
                    float* gbt = gb + (b_shared ? 0 : t * sK * sN);
                    // dB = A^T @ dC, accumulated over the batch when B is shared
                    for (std::size_t i = 0; i < sM; ++i) {
                        const float* grow = gt + i * sN;
                        for (std::size_t k = 0; k < sK; ++k) {
                            const float aik = at[i * sK + k];
                            if (aik == 0.0f) continue;
                            float* brow = gbt + k * sN;
                            for (std::size_t j = 0; j < sN; ++j) brow[j] += aik * grow[j];
                        }
                    }
                }
            }
        });

    const float* av = a.data().data();
    const float* bv = b.data().data();
    float* ov = out.data().data();
    for (std::size_t t = 0; t < batch; ++t) {
        const float* at = av + t * sM * sK;
        const float* bt = bv + (b_shared ? 0 : t * sK * sN);
        float* ot = ov + t * sM * sN;
        for (std::size_t i = 0; i < sM; ++i) {
            float* orow = ot + i * sN;
            std::fill(orow, orow + sN, 0.0f);
            const float* arow = at + i * sK;
            for (std::size_t k = 0; k < sK; ++k) {
                const float aik = arow[k];
                const float* brow = bt + k * sN;
                for (std::size_t j = 0; j < sN; ++j) orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Tensor transpose_last2(const Tensor& a) {
    if (a.rank() < 2) throw UsageError("transpose_last2 requires rank >= 2");
    Shape out_shape = a.shape();
    const std::size_t r = out_shape.size();
    std::swap(out_shape[r - 2], out_shape[r - 1]);
    const std::size_t M = static_cast<std::size_t>(a.shape()[r - 2]);
    const std::size_t N = static_cast<std::size_t>(a.shape()[r - 1]);
    const std::size_t batch = a.size() / (M * N);

    Tensor out = make_op_result(std::move(out_shape), {a}, [M, N, batch](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        float* ga = pa.grad_mut().data();
        const float* g = node.grad.data();
        for (std::size_t t = 0; t < batch; ++t) {
            const float* gt = g + t * M * N;
            float* gat = ga + t * M * N;
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t i = 0; i < M; ++i) gat[i * N + j] += gt[j * M + i];
        }
    });
    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t t = 0; t < batch; ++t) {
        const float* at = av + t * M * N;
        float* ot = ov + t * M * N;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) ot[j * M + i] = at[i * N + j];
    }
    return out;
}

Tensor transpose_12(const Tensor& a) {
    if (a.rank() != 4) throw UsageError("transpose_12 requires rank 4, got " + shape_str(a.shape()));
    const std::size_t A = static_cast<std::size_t>(a.shape()[0]);
    const std::size_t B = static_cast<std::size_t>(a.shape()[1]);
    const std::size_t C = static_cast<std::size_t>(a.shape()[2]);
    const std::size_t D = static_cast<std::size_t>(a.shape()[3]);
    Shape out_shape = {static_cast<int>(A), static_cast<int>(C), static_cast<int>(B), static_cast<int>(D)};

    Tensor out = make_op_result(std::move(out_shape), {a}, [A, B, C, D](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        float* ga = pa.grad_mut().data();
        const float* g = node.grad.data();
        for (std::size_t x = 0; x < A; ++x)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t b = 0; b < B; ++b) {
                    const float* src = g + ((x * C + c) * B + b) * D;
                    float* dst = ga + ((x * B + b) * C + c) * D;
                    for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
                }
    });
    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t x = 0; x < A; ++x)
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const float* src = av + ((x * B + b) * C + c) * D;
                float* dst = ov + ((x * C + c) * B + b) * D;
                std::memcpy(dst, src, D * sizeof(float));
            }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.size()) {
        throw UsageError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    }
    Tensor out = make_op_result(std::move(shape), {a}, [](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        float* ga = pa.grad_mut().data();
        const float* g = node.grad.data();
        for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += g[i];
    });
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    return out;
}

Tensor softmax(const Tensor& a, int axis) {
    const int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw UsageError("softmax: axis out of range for shape " + shape_str(a.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
    const std::size_t len = static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(axis)]);
    for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);

    Tensor out = make_op_result(a.shape(), {a}, [outer, len, inner](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        const float* y = node.values->data();
        const float* g = node.grad.data();
        float* ga = pa.grad_mut().data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t idx = base + k * inner;
                    dot += static_cast<double>(g[idx]) * static_cast<double>(y[idx]);
                }
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t idx = base + k * inner;
                    ga[idx] += y[idx] * (g[idx] - static_cast<float>(dot));
                }
            }
        }
    });

    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, av[base + k * inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const float e = std::exp(av[base + k * inner] - mx);
                ov[base + k * inner] = e;
                total += static_cast<double>(e);
            }
            const float norm = static_cast<float>(1.0 / total);
            for (std::size_t k = 0; k < len; ++k) ov[base + k * inner] *= norm;
        }
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (x.rank() < 1) throw UsageError("layer_norm: rank >= 1 required");
    const std::size_t D = static_cast<std::size_t>(x.shape().back());
    if (gain.rank() != 1 || bias.rank() != 1 ||
        static_cast<std::size_t>(gain.shape()[0]) != D || static_cast<std::size_t>(bias.shape()[0]) != D) {
        throw UsageError("layer_norm: gain/bias must be [D] with D = last axis of x");
    }
    const std::size_t rows = x.size() / D;

    // cache per-row (mean, inv_std) for backward
    auto stats = std::make_shared<std::vector<float>>(rows * 2);

    Tensor out = make_op_result(x.shape(), {x, gain, bias}, [D, rows, stats](TensorNode& node) {
        Tensor& px = node.parents[0];
        Tensor& pg = node.parents[1];
        Tensor& pb = node.parents[2];
        const float* xv = px.data().data();
        const float* gv = pg.data().data();
        const float* g = node.grad.data();
        float* gx = px.requires_grad() ? px.grad_mut().data() : nullptr;
        float* gg = pg.requires_grad() ? pg.grad_mut().data() : nullptr;
        float* gb = pb.requires_grad() ? pb.grad_mut().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const float m = (*stats)[r * 2];
            const float inv = (*stats)[r * 2 + 1];
            const float* xr = xv + r * D;
            const float* gr = g + r * D;
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                const float xhat = (xr[j] - m) * inv;
                const float dxhat = gr[j] * gv[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
                if (gg) gg[j] += gr[j] * xhat;
                if (gb) gb[j] += gr[j];
            }
            if (gx) {
                const float mean_dxhat = static_cast<float>(sum_dxhat / static_cast<double>(D));
                const float mean_dxhat_xhat = static_cast<float>(sum_dxhat_xhat / static_cast<double>(D));
                float* gxr = gx + r * D;
                for (std::size_t j = 0; j < D; ++j) {
                    const float xhat = (xr[j] - m) * inv;
                    const float dxhat = gr[j] * gv[j];
                    gxr[j] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    });

    const float* xv = x.data().data();
    const float* gv = gain.data().data();
    const float* bv = bias.data().data();
    float* ov = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = xv + r * D;
        double s = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            s += static_cast<double>(xr[j]);
            s2 += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
        }
        const double m = s / static_cast<double>(D);
        const double var = std::max(s2 / static_cast<double>(D) - m * m, 0.0);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*stats)[r * 2] = static_cast<float>(m);
        (*stats)[r * 2 + 1] = inv;
        float* orow = ov + r * D;
        for (std::size_t j = 0; j < D; ++j) {
            orow[j] = (xr[j] - static_cast<float>(m)) * inv * gv[j] + bv[j];
        }
    }
    return out;
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
    if (table.rank() != 2) throw UsageError("embedding: table must be [V, D]");
    const int V = table.shape()[0];
    const std::size_t D = static_cast<std::size_t>(table.shape()[1]);
    for (std::int32_t id : ids) {
        if (id < 0 || id >= V) {
            throw UsageError("embedding: id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
        }
    }
    const std::size_t n = ids.size();
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());

    Tensor out = make_op_result({static_cast<int>(n), static_cast<int>(D)}, {table},
        [ids_copy, D](TensorNode& node) {
            Tensor& pt = node.parents[0];
            if (!pt.requires_grad()) return;
            float* gt = pt.grad_mut().data();
            const float* g = node.grad.data();
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                const std::size_t row = static_cast<std::size_t>((*ids_copy)[i]);
                const float* grow = g + i * D;
                float* trow = gt + row * D;
                for (std::size_t j = 0; j < D; ++j) trow[j] += grow[j];
            }
        });
    const float* tv = table.data().data();
    float* ov = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        std::memcpy(ov + i * D, tv + static_cast<std::size_t>(ids[i]) * D, D * sizeof(float));
    }
    return out;
}

Tensor cross_entropy_nll(const Tensor& logits, std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> include) {
    if (logits.rank() != 2) throw UsageError("cross_entropy_nll: logits must be [P, V]");
    const std::size_t P = static_cast<std::size_t>(logits.shape()[0]);
    const std::size_t V = static_cast<std::size_t>(logits.shape()[1]);
    if (targets.size() != P) throw UsageError("cross_entropy_nll: targets length must equal positions");
    if (!include.empty() && include.size() != P) {
        throw UsageError("cross_entropy_nll: include mask length must equal positions");
    }
    std::size_t counted = 0;
    for (std::size_t i = 0; i < P; ++i) {
        if (!include.empty() && !include[i]) continue;
        ++counted;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
            throw UsageError("cross_entropy_nll: target " + std::to_string(targets[i]) + " out of range");
        }
    }
    if (counted == 0) throw UsageError("cross_entropy_nll: no included positions");

    auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.begin(), targets.end());
    auto inc = std::make_shared<std::vector<std::uint8_t>>(include.begin(), include.end());

    Tensor out = make_op_result(Shape{}, {logits}, [tgt, inc, P, V, counted](TensorNode& node) {
        Tensor& pl = node.parents[0];
        if (!pl.requires_grad()) return;
        const float g = node.grad[0] / static_cast<float>(counted);
        const float* lv = pl.data().data();
        float* gl = pl.grad_mut().data();
        for (std::size_t i = 0; i < P; ++i) {
            if (!inc->empty() && !(*inc)[i]) continue;
            const float* row = lv + i * V;
            float mx = row[0];
            for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            double total = 0.0;
            for (std::size_t j = 0; j < V; ++j) total += std::exp(static_cast<double>(row[j] - mx));
            const double inv = 1.0 / total;
            float* grow = gl + i * V;
            for (std::size_t j = 0; j < V; ++j) {
                const double p = std::exp(static_cast<double>(row[j] - mx)) * inv;
                grow[j] += g * static_cast<float>(p - (static_cast<std::size_t>((*tgt)[i]) == j ? 1.0 : 0.0));
            }
        }
    });

    const float* lv = logits.data().data();
    double loss = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        if (!include.empty() && !include[i]) continue;
        const float* row = lv + i * V;
        float mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < V; ++j) total += std::exp(static_cast<double>(row[j] - mx));
        loss += std::log(total) + static_cast<double>(mx) - static_cast<double>(row[static_cast<std::size_t>(targets[i])]);
    }
    out.data()[0] = static_cast<float>(loss / static_cast<double>(counted));
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const int r = parts[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw UsageError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != r) throw UsageError("concat: rank mismatch");
        for (int d = 0; d < r; ++d) {
            if (d != axis && p.shape()[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)]) {
                throw UsageError("concat: shape mismatch outside concat axis");
            }
        }
        total += p.shape()[static_cast<std::size_t>(axis)];
    }
    out_shape[static_cast<std::size_t>(axis)] = total;

    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(out_shape[static_cast<std::size_t>(d)]);

    std::vector<std::size_t> lens;
    lens.reserve(parts.size());
    for (const Tensor& p : parts) lens.push_back(static_cast<std::size_t>(p.shape()[static_cast<std::size_t>(axis)]) * inner);
    const std::size_t out_row = static_cast<std::size_t>(total) * inner;

    std::vector<Tensor> parents(parts.begin(), parts.end());
    Tensor out = make_op_result(out_shape, std::move(parents), [lens, outer, out_row](TensorNode& node) {
        const float* g = node.grad.data();
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < node.parents.size(); ++pi) {
            Tensor& p = node.parents[pi];
            if (p.requires_grad()) {
                float* gp = p.grad_mut().data();
                for (std::size_t o = 0; o < outer; ++o) {
                    const float* src = g + o * out_row + offset;
                    float* dst = gp + o * lens[pi];
                    for (std::size_t j = 0; j < lens[pi]; ++j) dst[j] += src[j];
                }
            }
            offset += lens[pi];
        }
    });
    float* ov = out.data().data();
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const float* pv = parts[pi].data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(ov + o * out_row + offset, pv + o * lens[pi], lens[pi] * sizeof(float));
        }
        offset += lens[pi];
    }
    return out;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw UsageError("slice: axis out of range");
    const int extent = a.shape()[static_cast<std::size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > extent) {
        throw UsageError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") outside extent " + std::to_string(extent));
    }
    Shape out_shape = a.shape();
    out_shape[static_cast<std::size_t>(axis)] = len;
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(d)]);
    const std::size_t in_row = static_cast<std::size_t>(extent) * inner;
    const std::size_t out_row = static_cast<std::size_t>(len) * inner;
    const std::size_t shift = static_cast<std::size_t>(start) * inner;

    Tensor out = make_op_result(out_shape, {a}, [outer, in_row, out_row, shift](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        float* ga = pa.grad_mut().data();
        const float* g = node.grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            const float* src = g + o * out_row;
            float* dst = ga + o * in_row + shift;
            for (std::size_t j = 0; j < out_row; ++j) dst[j] += src[j];
        }
    });
    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(ov + o * out_row, av + o * in_row + shift, out_row * sizeof(float));
    }
    return out;
}

Tensor mean_pool(const Tensor& x, const Tensor& mask) {
    if (x.rank() != 3 || mask.rank() != 2) throw UsageError("mean_pool: expects x [B,L,D], mask [B,L]");
    const std::size_t B = static_cast<std::size_t>(x.shape()[0]);
    const std::size_t L = static_cast<std::size_t>(x.shape()[1]);
    const std::size_t D = static_cast<std::size_t>(x.shape()[2]);
    if (static_cast<std::size_t>(mask.shape()[0]) != B || static_cast<std::size_t>(mask.shape()[1]) != L) {
        throw UsageError("mean_pool: mask shape mismatch");
    }
    auto counts = std::make_shared<std::vector<float>>(B, 0.0f);
    const float* mv = mask.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        double c = 0.0;
        for (std::size_t l = 0; l < L; ++l) c += static_cast<double>(mv[b * L + l]);
        if (c <= 0.0) throw UsageError("mean_pool: row " + std::to_string(b) + " has no unmasked positions");
        (*counts)[b] = static_cast<float>(c);
    }

    Tensor out = make_op_result({static_cast<int>(B), static_cast<int>(D)}, {x, mask},
        [B, L, D, counts](TensorNode& node) {
            Tensor& px = node.parents[0];
            Tensor& pm = node.parents[1];
            if (!px.requires_grad()) return;
            const float* mv2 = pm.data().data();
            const float* g = node.grad.data();
            float* gx = px.grad_mut().data();
            for (std::size_t b = 0; b < B; ++b) {
                const float invc = 1.0f / (*counts)[b];
                for (std::size_t l = 0; l < L; ++l) {
                    const float w = mv2[b * L + l] * invc;
                    if (w == 0.0f) continue;
                    const float* grow = g + b * D;
                    float* xrow = gx + (b * L + l) * D;
                    for (std::size_t j = 0; j < D; ++j) xrow[j] += w * grow[j];
                }
            }
        });
    const float* xv = x.data().data();
    float* ov = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> acc(D, 0.0);
        for (std::size_t l = 0; l < L; ++l) {
            const float w = mv[b * L + l];
            if (w == 0.0f) continue;
            const float* xrow = xv + (b * L + l) * D;
            for (std::size_t j = 0; j < D; ++j) acc[j] += static_cast<double>(w) * xrow[j];
        }
        for (std::size_t j = 0; j < D; ++j) ov[b * D + j] = static_cast<float>(acc[j] / (*counts)[b]);
    }
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op_result(Shape{}, {a}, [](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        const float g = node.grad[0];
        float* ga = pa.grad_mut().data();
        for (std::size_t i = 0; i < pa.size(); ++i) ga[i] += g;
    });
    double acc = 0.0;
    for (float v : a.data()) acc += static_cast<double>(v);
    out.data()[0] = static_cast<float>(acc);
    return out;
}

Tensor mean(const Tensor& a) {
    const std::size_t n = a.size();
    Tensor out = make_op_result(Shape{}, {a}, [n](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        const float g = node.grad[0] / static_cast<float>(n);
        float* ga = pa.grad_mut().data();
        for (std::size_t i = 0; i < pa.size(); ++i) ga[i] += g;
    });
    double acc = 0.0;
    for (float v : a.data()) acc += static_cast<double>(v);
    out.data()[0] = static_cast<float>(acc / static_cast<double>(n));
    return out;
}

Tensor sum_axis(const Tensor& a, int axis) {
    const int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw UsageError("sum_axis: axis out of range");
    Shape out_shape;
    for (int d = 0; d < r; ++d) {
        if (d != axis) out_shape.push_back(a.shape()[static_cast<std::size_t>(d)]);
    }
    std::size_t outer = 1, inner = 1;
    const std::size_t len = static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(axis)]);
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(d)]);

    Tensor out = make_op_result(out_shape, {a}, [outer, len, inner](TensorNode& node) {
        Tensor& pa = node.parents[0];
        if (!pa.requires_grad()) return;
        const float* g = node.grad.data();
        float* ga = pa.grad_mut().data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < len; ++k) {
                for (std::size_t in = 0; in < inner; ++in) {
                    ga[(o * len + k) * inner + in] += g[o * inner + in];
                }
            }
        }
    });
    const float* av = a.data().data();
    float* ov = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (std::size_t k = 0; k < len; ++k) acc += static_cast<double>(av[(o * len + k) * inner + in]);
            ov[o * inner + in] = static_cast<float>(acc);
        }
    }
    return out;
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, float eps) {
    if (a.shape() != b.shape()) {
        throw UsageError("cosine_similarity: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor dot = sum_axis(mul(a, b), -1);
    Tensor na = sqrt(add_scalar(sum_axis(mul(a, a), -1), eps));
    Tensor nb = sqrt(add_scalar(sum_axis(mul(b, b), -1), eps));
    return div(dot, mul(na, nb));
}

} // namespace stower

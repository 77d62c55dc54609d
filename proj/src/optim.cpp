#include "stower/optim.hpp"

#include <cmath>

namespace stower {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    first_moment_.reserve(params_.size());
    second_moment_.reserve(params_.size());
    for (const Tensor& p : params_) {
        first_moment_.emplace_back(p.size(), 0.0f);
        second_moment_.emplace_back(p.size(), 0.0f);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (p.size() != first_moment_[pi].size()) {
            throw UsageError("adam: parameter " + std::to_string(pi) + " changed size");
        }
        if (!p.has_grad()) continue;  // zero gradient, zero update
        std::span<const float> g = p.grad();
        float* m = first_moment_[pi].data();
        float* v = second_moment_[pi].data();
        float* w = p.data().data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * g[i] * g[i];
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            w[i] -= static_cast<float>(static_cast<double>(config_.lr) * mhat /
                                       (std::sqrt(vhat) + static_cast<double>(config_.eps)));
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double clip_global_norm(std::span<const Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params) {
        if (!p.has_grad()) continue;
        for (float g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float s = static_cast<float>(max_norm / norm);
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            Tensor mut = p;
            for (float& g : mut.grad_mut()) g *= s;
        }
    }
    return norm;
}

} // namespace stower

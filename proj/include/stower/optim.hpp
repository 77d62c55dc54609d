#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stower/tensor.hpp"

namespace stower {

struct AdamConfig {
    float lr = 0.0005f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Bias-corrected Adam over a fixed parameter list. Moment buffers are
/// allocated per parameter and must keep matching shapes for the
/// optimizer's lifetime.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config = {});

    /// One update from the parameters' current grad buffers. Parameters
    /// without an allocated grad are treated as zero-gradient.
    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return config_; }
    void set_lr(float lr) { config_.lr = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> first_moment_;
    std::vector<std::vector<float>> second_moment_;
    AdamConfig config_;
    std::int64_t step_count_ = 0;
};

/// Scales all grads so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_global_norm(std::span<const Tensor> params, double max_norm);

} // namespace stower

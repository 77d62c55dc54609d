#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stower/tensor.hpp"

namespace stower {

/// Central-difference gradient audit. `forward` must rebuild the loss
/// from the parameters' current values (same inputs, same noise) every
/// time it is called.
struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        double max_abs_err = 0.0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;

    bool within(double tol) const { return max_rel_err < tol; }
};

/// For each parameter element, compares the analytic gradient with
/// (f(x+h) - f(x-h)) / 2h. The per-parameter error is normalized by that
/// parameter's largest gradient magnitude, floored at a tenth of the
/// whole block's gradient scale so identically-zero directions are
/// measured against the block rather than against their own noise:
///   rel_err = max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf, 0.1 * block_scale)
GradCheckReport finite_diff_check(const std::function<Tensor()>& forward,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double step = 1e-2);

} // namespace stower

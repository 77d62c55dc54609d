#include "stower/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace stower {

GradCheckReport finite_diff_check(const std::function<Tensor()>& forward,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double step) {
    for (const auto& [name, p] : params) {
        if (!p.requires_grad()) {
            throw UsageError("finite_diff_check: parameter '" + name + "' does not require grad");
        }
    }

    // analytic pass
    for (const auto& [name, p] : params) {
        Tensor mut = p;
        mut.ensure_grad();
        mut.zero_grad();
    }
    Tensor loss = forward();
    backward(loss);

    std::vector<std::vector<float>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, p] : params) {
        analytic.emplace_back(p.grad().begin(), p.grad().end());
    }

    GradCheckReport report;
    std::vector<double> a_infs(params.size()), n_infs(params.size()), abs_errs(params.size());
    double block_scale = 0.0;  // largest gradient magnitude anywhere in the block
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor param = params[pi].second;
        std::span<float> values = param.data();
        std::vector<double> numeric(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const float saved = values[i];
            const double h = step * std::max(1.0, std::abs(static_cast<double>(saved)));
            values[i] = static_cast<float>(static_cast<double>(saved) + h);
            const double f_plus = static_cast<double>(forward().item());
            values[i] = static_cast<float>(static_cast<double>(saved) - h);
            const double f_minus = static_cast<double>(forward().item());
            values[i] = saved;
            numeric[i] = (f_plus - f_minus) / (2.0 * h);
        }
        double a_inf = 0.0, n_inf = 0.0, abs_err = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            a_inf = std::max(a_inf, std::abs(static_cast<double>(analytic[pi][i])));
            n_inf = std::max(n_inf, std::abs(numeric[i]));
            abs_err = std::max(abs_err, std::abs(static_cast<double>(analytic[pi][i]) - numeric[i]));
        }
        a_infs[pi] = a_inf;
        n_infs[pi] = n_inf;
        abs_errs[pi] = abs_err;
        block_scale = std::max({block_scale, a_inf, n_inf});
    }
    // a parameter with an identically-zero gradient direction (e.g. a bias
    // that softmax shift-invariance cancels) is measured against the
    // block's gradient scale instead of against its own noise
    const double floor = 0.1 * block_scale + 1e-12;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        GradCheckReport::Entry entry;
        entry.name = params[pi].first;
        entry.max_abs_err = abs_errs[pi];
        entry.max_rel_err = abs_errs[pi] / std::max(std::max(a_infs[pi], n_infs[pi]), floor);
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace stower

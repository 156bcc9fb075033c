#pragma once

// Central finite-difference gradient checker. Used as the independent
// oracle for every differentiable op; runs in 64-bit mode only.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odpg/tensor.hpp"

namespace odpg_test {

using odpg::TensorD;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string where;
    bool ok(double tol) const { return max_rel_error < tol; }
};

// fn maps the inputs to a scalar loss. All inputs are treated as
// differentiable leaves.
inline GradCheckResult check_gradients(
    const std::function<TensorD(const std::vector<TensorD>&)>& fn, std::vector<TensorD> inputs,
    double h = 1e-5) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }

    auto loss = fn(inputs);
    odpg::backward(loss);

    GradCheckResult result;
    for (std::size_t which = 0; which < inputs.size(); ++which) {
        auto& in = inputs[which];
        const auto n = static_cast<std::size_t>(in.numel());
        for (std::size_t i = 0; i < n; ++i) {
            const double x0 = in.data()[i];
            double fp, fm;
            {
                odpg::NoGradGuard ng;
                in.data()[i] = x0 + h;
                fp = fn(inputs).item();
                in.data()[i] = x0 - h;
                fm = fn(inputs).item();
                in.data()[i] = x0;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = in.has_grad() ? in.grad_vec()[i] : 0.0;
            const double rel = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.where = "input " + std::to_string(which) + " elem " + std::to_string(i);
            }
        }
    }
    return result;
}

}  // namespace odpg_test

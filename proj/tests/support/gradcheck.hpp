#pragma once

// Central finite-difference oracle. Test-only: it never touches the tape
// machinery except through the public loss closure it is handed.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lfd/rng.hpp"
#include "lfd/tensor.hpp"

namespace lfd::testing {

struct GradCheckResult {
    // Worst leaf of ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-5).
    // The floor keeps leaves whose true gradient is zero (e.g. attention key
    // biases) from being judged on finite-difference round-off alone.
    double max_relative_error = 0.0;
    double max_abs_error = 0.0;
};

/// Compares tape gradients of `loss_fn` with central differences for every
/// leaf in `leaves`. Leaves must already require gradients.
inline GradCheckResult gradient_check(std::vector<Tensor> leaves, const std::function<Tensor()>& loss_fn,
                                      double step = 1e-5) {
    for (Tensor& leaf : leaves) leaf.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(loss_fn());
    }
    std::vector<std::vector<double>> analytic;
    for (const Tensor& leaf : leaves) {
        std::vector<double> g(leaf.size(), 0.0);
        if (!leaf.grad().empty()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
        analytic.push_back(std::move(g));
    }

    GradCheckResult result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        auto values = leaf.mutable_values();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss_fn().item();
            values[i] = saved - step;
            const double down = loss_fn().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[li][i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            result.max_abs_error = std::max(result.max_abs_error, std::abs(a - numeric));
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-5});
        result.max_relative_error = std::max(result.max_relative_error, std::sqrt(diff2) / denom);
    }
    return result;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = true) {
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace lfd::testing

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dcvlm/ops.hpp"
#include "dcvlm/random.hpp"
#include "dcvlm/tensor.hpp"

namespace dcvlm::testing {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// Largest of |analytic - numeric| / max(|analytic|, |numeric|, floor) over the
// checked entries. The floor keeps structurally zero gradients (a bias in
// front of a norm, say) from turning rounding noise into huge ratios. Central differences with step h on each leaf entry; at most
// `per_leaf` entries per leaf (chosen by a seeded draw) to bound runtime.
inline GradCheckResult gradcheck(const std::vector<Tensor<double>>& leaves,
                                 const std::function<Tensor<double>()>& loss_fn, double h = 1e-5,
                                 std::size_t per_leaf = 48, double floor = 1e-5) {
    for (const auto& leaf : leaves) leaf.node()->grad.clear();
    auto loss = loss_fn();
    backward(loss);

    GradCheckResult result;
    Rng pick(1234);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto leaf = leaves[li];
        std::vector<double> analytic(leaf.numel(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        std::vector<std::size_t> idx(leaf.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > per_leaf) {
            pick.shuffle(idx.begin(), idx.end());
            idx.resize(per_leaf);
        }
        for (std::size_t i : idx) {
            auto data = leaf.mutable_data();
            const double saved = data[i];
            double plus, minus;
            {
                NoGradGuard guard;
                data[i] = saved + h;
                plus = loss_fn().item();
                data[i] = saved - h;
                minus = loss_fn().item();
                data[i] = saved;
            }
            const double numeric = (plus - minus) / (2 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            const double err = std::abs(analytic[i] - numeric) / denom;
            ++result.checked;
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = "leaf " + std::to_string(li) + " [" + std::to_string(i) +
                               "] analytic=" + std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return result;
}

// Fixed random weighting so the loss depends on every output entry differently.
inline Tensor<double> probe_weights(const Shape& shape, std::uint64_t seed = 99) {
    Rng rng(seed);
    return Tensor<double>::uniform(shape, -1.0, 1.0, rng);
}

inline Tensor<double> weighted_sum(const Tensor<double>& out, const Tensor<double>& probe) {
    return sum_all(mul(out, probe));
}

inline Tensor<double> random_leaf(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor<double>::uniform(shape, lo, hi, rng, true);
}

}  // namespace dcvlm::testing

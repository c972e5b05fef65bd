#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "dcvlm/nn.hpp"

namespace dcvlm {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

/// Adam with decoupled weight decay. Decay applies to matrices and larger
/// tensors only; biases, norm affines and the scalar temperature are exempt.
template <typename T>
class AdamW {
 public:
    AdamW(ParamList<T> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto p = params_[i].tensor;
            if (!p.requires_grad() || !p.has_grad()) continue;
            auto w = p.mutable_data();
            auto g = p.grad();
            const bool decay = p.rank() >= 2 && opts_.weight_decay > 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = g[j];
                m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * gj;
                v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * gj * gj;
                if (lr == 0.0) continue;
                double val = w[j];
                if (decay) val -= lr * opts_.weight_decay * val;
                val -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + opts_.eps);
                w[j] = static_cast<T>(val);
            }
        }
    }

    void zero_grad() { zero_grads(params_); }
    std::size_t steps() const { return t_; }

 private:
    ParamList<T> params_;
    AdamWOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Linear warmup over the first ceil(warmup_ratio * total) steps, then cosine
/// decay to zero at `total`.
inline double warmup_cosine(std::size_t step, std::size_t total, double warmup_ratio, double peak) {
    if (total == 0) return peak;
    const auto warm = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
    if (step < warm) return peak * static_cast<double>(step + 1) / static_cast<double>(warm);
    if (total <= warm) return peak;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace dcvlm

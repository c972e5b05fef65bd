#pragma once

#include <memory>
#include <string>

#include "dcvlm/cost.hpp"
#include "dcvlm/nn.hpp"
#include "dcvlm/random.hpp"

namespace dcvlm {

struct LoraOptions {
    std::size_t rank = 16;
    double alpha = 32.0;
    double dropout = 0.05;
    // Use the bare W0 + AB update with no alpha/r factor.
    bool unscaled = false;
};

/// Low-rank update x -> s * drop(x) A B attached to a frozen Linear.
/// A is (d x r), B is (r x k); B starts at zero.
template <typename T>
class LoraAdapter final : public LinearAdapter<T> {
 public:
    /// Freezes the layer's weight and bias and installs the adapter on it.
    static std::shared_ptr<LoraAdapter> attach(Linear<T>& layer, const LoraOptions& opts, Rng& rng);

    const Tensor<T>& a() const { return a_; }
    const Tensor<T>& b() const { return b_; }
    const Tensor<T>& base() const { return base_; }
    std::size_t rank() const { return rank_; }
    double scale() const { return scale_; }

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }

    /// W0 + s A B as a new (untracked) tensor; forward then uses it directly.
    /// Only allowed in eval mode.
    Tensor<T> merge();
    /// Back to the factored path. W0 is never written, so this is exact.
    void unmerge();
    bool merged() const { return merged_.defined(); }

    const Tensor<T>* merged_weight() const override { return merged_.defined() ? &merged_ : nullptr; }
    Tensor<T> delta(const Tensor<T>& x) const override;
    void collect(ParamList<T>& out, const std::string& prefix) const override;

 private:
    Tensor<T> base_;
    Tensor<T> a_;
    Tensor<T> b_;
    Tensor<T> merged_;
    std::size_t rank_ = 0;
    double scale_ = 1.0;
    double dropout_ = 0.0;
    bool training_ = true;
    mutable Rng rng_;
};

/// One record per parameter that will receive gradients.
template <typename T>
CostReport trainable_param_count(const ParamList<T>& params);

/// Parameters that do not receive gradients.
template <typename T>
std::size_t frozen_param_count(const ParamList<T>& params);

}  // namespace dcvlm

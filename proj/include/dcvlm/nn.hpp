#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dcvlm/ops.hpp"
#include "dcvlm/tensor.hpp"

namespace dcvlm {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::size_t count_elements(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (const auto& p : params) p.tensor.node()->grad.clear();
}

/// Uniform in +-1/sqrt(fan_in).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, rng, true);
}

/// Extension point for low-rank adapters on a linear layer.
template <typename T>
class LinearAdapter {
 public:
    virtual ~LinearAdapter() = default;
    /// Replacement for the base weight once the update has been folded in.
    virtual const Tensor<T>* merged_weight() const { return nullptr; }
    virtual Tensor<T> delta(const Tensor<T>& x) const = 0;
    virtual void collect(ParamList<T>& out, const std::string& prefix) const = 0;
};

/// y = x W + b with W stored as (in x out).
template <typename T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;
    std::shared_ptr<LinearAdapter<T>> adapter;

    static Linear create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
        Linear layer;
        layer.weight = fan_in_uniform<T>({in, out}, in, rng);
        if (with_bias) layer.bias = Tensor<T>::zeros({out}, true);
        return layer;
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (adapter) {
            if (const auto* merged = adapter->merged_weight()) return linear(x, *merged, bias);
            return add(linear(x, weight, bias), adapter->delta(x));
        }
        return linear(x, weight, bias);
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        if (bias.defined()) out.push_back({prefix + ".bias", bias});
        if (adapter) adapter->collect(out, prefix);
    }
};

/// Affine parameters of a normalisation layer (scale init 1, shift init 0).
template <typename T>
struct NormParams {
    Tensor<T> gamma;
    Tensor<T> beta;

    static NormParams create(std::size_t n) {
        return {Tensor<T>::ones({n}, true), Tensor<T>::zeros({n}, true)};
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

/// linear -> GELU -> linear along the last axis.
template <typename T>
struct Mlp {
    Linear<T> fc1;
    Linear<T> fc2;

    static Mlp create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
        auto fc1 = Linear<T>::create(in, hidden, rng);
        auto fc2 = Linear<T>::create(hidden, out, rng);
        return {std::move(fc1), std::move(fc2)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

}  // namespace dcvlm

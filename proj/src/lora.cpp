#include "dcvlm/lora.hpp"

#include <algorithm>

#include "dcvlm/ops.hpp"

namespace dcvlm {

template <typename T>
std::shared_ptr<LoraAdapter<T>> LoraAdapter<T>::attach(Linear<T>& layer, const LoraOptions& opts, Rng& rng) {
    const std::size_t d = layer.in_features();
    const std::size_t k = layer.out_features();
    require(opts.rank >= 1 && 2 * opts.rank <= std::min(d, k), ErrorCode::configuration,
            "lora rank " + std::to_string(opts.rank) + " violates 1 <= r <= min(d, k) / 2 for a " + std::to_string(d) +
                "x" + std::to_string(k) + " layer");
    require(opts.dropout >= 0.0 && opts.dropout < 1.0, ErrorCode::configuration, "lora dropout must be in [0, 1)");
    require(!layer.adapter, ErrorCode::contract, "layer already has an adapter");

    auto ad = std::shared_ptr<LoraAdapter>(new LoraAdapter());
    ad->rank_ = opts.rank;
    ad->scale_ = opts.unscaled ? 1.0 : opts.alpha / static_cast<double>(opts.rank);
    ad->dropout_ = opts.dropout;
    ad->rng_ = rng.derive(0x10a);
    ad->a_ = fan_in_uniform<T>({d, opts.rank}, d, rng);
    ad->b_ = Tensor<T>::zeros({opts.rank, k}, true);
    layer.weight.set_requires_grad(false);
    if (layer.bias.defined()) layer.bias.set_requires_grad(false);
    ad->base_ = layer.weight;
    layer.adapter = ad;
    return ad;
}

template <typename T>
Tensor<T> LoraAdapter<T>::delta(const Tensor<T>& x) const {
    auto h = linear(dropout(x, dropout_, rng_, training_), a_, Tensor<T> {});
    return dcvlm::scale(linear(h, b_, Tensor<T> {}), static_cast<T>(scale_));
}

template <typename T>
Tensor<T> LoraAdapter<T>::merge() {
    require(!training_, ErrorCode::contract, "lora merge requires eval mode");
    NoGradGuard guard;
    auto ab = matmul(a_, b_);
    merged_ = add(base_, dcvlm::scale(ab, static_cast<T>(scale_))).detach();
    return merged_;
}

template <typename T>
void LoraAdapter<T>::unmerge() {
    merged_ = Tensor<T> {};
}

template <typename T>
void LoraAdapter<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".lora_A", a_});
    out.push_back({prefix + ".lora_B", b_});
}

template <typename T>
CostReport trainable_param_count(const ParamList<T>& params) {
    CostReport r;
    for (const auto& p : params)
        if (p.tensor.requires_grad()) r.add(p.name, 0, p.tensor.numel());
    return r;
}

template <typename T>
std::size_t frozen_param_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params)
        if (!p.tensor.requires_grad()) n += p.tensor.numel();
    return n;
}

#define DCVLM_LORA(T)                                                 \
    template class LoraAdapter<T>;                                    \
    template CostReport trainable_param_count(const ParamList<T>&);   \
    template std::size_t frozen_param_count(const ParamList<T>&);

DCVLM_LORA(float)
DCVLM_LORA(double)

}  // namespace dcvlm

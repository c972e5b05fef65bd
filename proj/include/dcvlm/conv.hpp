#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "dcvlm/cost.hpp"
#include "dcvlm/nn.hpp"
#include "dcvlm/tensor.hpp"

namespace dcvlm {

// Volumes are (B, C, H, W, D) with D contiguous. Axis values are the tensor
// dimension each 1D convolution runs along.
enum class Axis : std::size_t { h = 2, w = 3, d = 4 };

const char* axis_name(Axis axis);

/// Three parallel depthwise 1D convolutions, each followed by its own norm.
template <typename T>
struct DecomposedConvLayer {
    std::size_t channels = 0;
    std::array<std::size_t, 3> kernels {};
    std::array<Tensor<T>, 3> weight;  // (C, k_axis)
    std::array<Tensor<T>, 3> bias;    // (C)
    std::array<NormParams<T>, 3> norm;

    static DecomposedConvLayer create(std::size_t channels, std::size_t k, Rng& rng);
    static DecomposedConvLayer create(std::size_t channels, std::array<std::size_t, 3> kernels, Rng& rng);

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Depthwise k x k x k convolution; the baseline the decomposition replaces.
template <typename T>
struct FullDWConv3dLayer {
    std::size_t channels = 0;
    std::size_t kernel = 0;
    Tensor<T> weight;  // (C, k, k, k)
    Tensor<T> bias;    // (C)

    static FullDWConv3dLayer create(std::size_t channels, std::size_t k, Rng& rng);

    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Per-channel 1D convolution along `axis` with "same" zero padding.
/// weight is (C, k) with k odd; bias is (C).
template <typename T>
Tensor<T> dwconv1d_axis(const Tensor<T>& x, Axis axis, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> dwconv1d_axis(const Tensor<T>& x, Axis axis, const DecomposedConvLayer<T>& layer);

/// Norm_h(X*_h) + Norm_w(X*_w) + Norm_d(X*_d), without the residual.
template <typename T>
Tensor<T> decomposed_branches(const Tensor<T>& x, const DecomposedConvLayer<T>& layer);

/// x + decomposed_branches(x).
template <typename T>
Tensor<T> decomposed_block(const Tensor<T>& x, const DecomposedConvLayer<T>& layer);

/// Depthwise 3D convolution with "same" zero padding. weight is (C, k, k, k).
template <typename T>
Tensor<T> full_dwconv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> full_dwconv3d(const Tensor<T>& x, const FullDWConv3dLayer<T>& layer);

/// Dense 3D convolution, weight (C_out, C_in, k, k, k), cubic stride and padding.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// Output spatial extent of conv3d along one axis; throws if the kernel does not fit.
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

// Analytic costs. Multiply-adds count every kernel tap at every output
// position, padded taps included, which is what the naive loops execute.
CostReport count_decomposed_cost(std::size_t channels, std::array<std::size_t, 3> kernels, const Shape& input_shape,
                                 bool with_norm_params = true);
CostReport count_full_dw_cost(std::size_t channels, std::size_t k, const Shape& input_shape);
CostReport count_conv3d_cost(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                             std::size_t padding, const Shape& input_shape);

template <typename T>
CostReport count_cost(const DecomposedConvLayer<T>& layer, const Shape& input_shape) {
    return count_decomposed_cost(layer.channels, layer.kernels, input_shape);
}

template <typename T>
CostReport count_cost(const FullDWConv3dLayer<T>& layer, const Shape& input_shape) {
    return count_full_dw_cost(layer.channels, layer.kernel, input_shape);
}

struct BenchmarkRecord {
    Shape shape;
    std::size_t kernel = 0;
    std::size_t repetitions = 0;
    double decomposed_median_s = 0.0;
    double full_median_s = 0.0;
    std::uint64_t decomposed_multiply_adds = 0;
    std::uint64_t full_multiply_adds = 0;

    double multiply_add_ratio() const {
        return static_cast<double>(full_multiply_adds) / static_cast<double>(decomposed_multiply_adds);
    }
    double speedup() const { return full_median_s / decomposed_median_s; }
};

/// Median wall time of the three axis convolutions versus one full depthwise
/// 3D convolution on the same input (32-bit, no gradient recording).
BenchmarkRecord benchmark_pair(const Shape& input_shape, std::size_t k, std::size_t repetitions,
                               std::size_t warmup = 1, std::uint64_t seed = 7);

}  // namespace dcvlm

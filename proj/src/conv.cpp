#include "dcvlm/conv.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>

#include "dcvlm/ops.hpp"

namespace dcvlm {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require_volume(const Shape& shape, const char* op) {
    require(shape.size() == 5, ErrorCode::dimension,
            std::string(op) + " expects a (B, C, H, W, D) volume, got " + shape_str(shape));
}

void require_odd(std::size_t k, const char* what) {
    require(k % 2 == 1, ErrorCode::configuration,
            std::string(what) + " kernel size must be odd for symmetric same padding, got " + std::to_string(k));
}

std::size_t spatial_numel(const Shape& shape) { return shape[2] * shape[3] * shape[4]; }

// The tensor viewed as (outer, len, inner) around one spatial axis.
struct AxisView {
    std::size_t outer;
    std::size_t len;
    std::size_t inner;
    std::size_t channel_div;  // channel of outer index o is (o / channel_div) % C
};

AxisView axis_view(const Shape& shape, Axis axis) {
    const auto a = static_cast<std::size_t>(axis);
    AxisView v {1, shape[a], 1, 1};
    for (std::size_t i = 0; i < a; ++i) v.outer *= shape[i];
    for (std::size_t i = a + 1; i < shape.size(); ++i) v.inner *= shape[i];
    for (std::size_t i = 2; i < a; ++i) v.channel_div *= shape[i];
    return v;
}

// Valid output range [lo, hi) for tap j with padding p over a length-n axis.
inline void tap_range(std::size_t n, std::size_t j, std::size_t p, std::size_t& lo, std::size_t& hi) {
    lo = j < p ? p - j : 0;
    hi = j > p ? (n > j - p ? n - (j - p) : 0) : n;
    if (hi < lo) hi = lo;
}

template <typename T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T s {0};
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

const char* axis_name(Axis axis) {
    switch (axis) {
        case Axis::h: return "h";
        case Axis::w: return "w";
        case Axis::d: return "d";
    }
    return "?";
}

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
    require(stride >= 1 && kernel >= 1, ErrorCode::configuration, "conv3d stride and kernel must be positive");
    require(input + 2 * padding >= kernel, ErrorCode::shape,
            "conv3d kernel " + std::to_string(kernel) + " larger than padded input " +
                std::to_string(input + 2 * padding));
    return (input + 2 * padding - kernel) / stride + 1;
}

template <typename T>
DecomposedConvLayer<T> DecomposedConvLayer<T>::create(std::size_t channels, std::size_t k, Rng& rng) {
    return create(channels, {k, k, k}, rng);
}

template <typename T>
DecomposedConvLayer<T> DecomposedConvLayer<T>::create(std::size_t channels, std::array<std::size_t, 3> kernels,
                                                      Rng& rng) {
    require(channels >= 1, ErrorCode::configuration, "decomposed conv needs at least one channel");
    DecomposedConvLayer layer;
    layer.channels = channels;
    layer.kernels = kernels;
    for (std::size_t a = 0; a < 3; ++a) {
        require_odd(kernels[a], "decomposed conv");
        layer.weight[a] = fan_in_uniform<T>({channels, kernels[a]}, kernels[a], rng);
        layer.bias[a] = Tensor<T>::zeros({channels}, true);
        layer.norm[a] = NormParams<T>::create(channels);
    }
    return layer;
}

template <typename T>
void DecomposedConvLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    static constexpr const char* names[3] = {"h", "w", "d"};
    for (std::size_t a = 0; a < 3; ++a) {
        out.push_back({prefix + ".conv_" + names[a] + ".weight", weight[a]});
        out.push_back({prefix + ".conv_" + names[a] + ".bias", bias[a]});
        norm[a].collect(out, prefix + ".norm_" + names[a]);
    }
}

template <typename T>
FullDWConv3dLayer<T> FullDWConv3dLayer<T>::create(std::size_t channels, std::size_t k, Rng& rng) {
    require(channels >= 1, ErrorCode::configuration, "full depthwise conv needs at least one channel");
    require_odd(k, "full depthwise conv");
    FullDWConv3dLayer layer;
    layer.channels = channels;
    layer.kernel = k;
    layer.weight = fan_in_uniform<T>({channels, k, k, k}, k * k * k, rng);
    layer.bias = Tensor<T>::zeros({channels}, true);
    return layer;
}

template <typename T>
void FullDWConv3dLayer<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

template <typename T>
Tensor<T> dwconv1d_axis(const Tensor<T>& x, Axis axis, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_volume(x.shape(), "dwconv1d_axis");
    require(weight.rank() == 2 && bias.rank() == 1 && bias.dim(0) == weight.dim(0), ErrorCode::configuration,
            "dwconv1d_axis weight must be (C, k) with bias (C), got " + shape_str(weight.shape()) + " and " +
                shape_str(bias.shape()));
    const std::size_t channels = x.dim(1);
    require(weight.dim(0) == channels, ErrorCode::configuration,
            "dwconv1d_axis channel mismatch: input has " + std::to_string(channels) + ", layer has " +
                std::to_string(weight.dim(0)));
    const std::size_t k = weight.dim(1);
    require_odd(k, "dwconv1d_axis");
    const std::size_t p = k / 2;
    const AxisView v = axis_view(x.shape(), axis);
    const std::size_t row = v.len * v.inner;
    const auto src = x.data();
    const auto w = weight.data();
    const auto b = bias.data();
    std::vector<T> out(src.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t c = (o / v.channel_div) % channels;
        const T* xs = src.data() + o * row;
        T* os = out.data() + o * row;
        std::fill(os, os + row, b[c]);
        for (std::size_t j = 0; j < k; ++j) {
            std::size_t lo, hi;
            tap_range(v.len, j, p, lo, hi);
            if (hi > lo) axpy(os + lo * v.inner, xs + (lo + j - p) * v.inner, w[c * k + j], (hi - lo) * v.inner);
        }
    }
    return make_result<T>(x.shape(), std::move(out), "dwconv1d_axis", {x, weight, bias},
                          [x, weight, bias, v, channels, k, p, row](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gw = grad_sink(weight);
                              auto gb = grad_sink(bias);
                              const auto xsrc = x.data();
                              const auto w = weight.data();
                              for (std::size_t o = 0; o < v.outer; ++o) {
                                  const std::size_t c = (o / v.channel_div) % channels;
                                  const T* gs = g.data() + o * row;
                                  if (!gb.empty())
                                      for (std::size_t i = 0; i < row; ++i) gb[c] += gs[i];
                                  for (std::size_t j = 0; j < k; ++j) {
                                      std::size_t lo, hi;
                                      tap_range(v.len, j, p, lo, hi);
                                      if (hi == lo) continue;
                                      const std::size_t n = (hi - lo) * v.inner;
                                      const std::size_t src_off = o * row + (lo + j - p) * v.inner;
                                      if (!gx.empty()) axpy(gx.data() + src_off, gs + lo * v.inner, w[c * k + j], n);
                                      if (!gw.empty()) gw[c * k + j] += dot(gs + lo * v.inner, xsrc.data() + src_off, n);
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> dwconv1d_axis(const Tensor<T>& x, Axis axis, const DecomposedConvLayer<T>& layer) {
    const std::size_t a = static_cast<std::size_t>(axis) - 2;
    return dwconv1d_axis(x, axis, layer.weight[a], layer.bias[a]);
}

template <typename T>
Tensor<T> decomposed_branches(const Tensor<T>& x, const DecomposedConvLayer<T>& layer) {
    static constexpr Axis axes[3] = {Axis::h, Axis::w, Axis::d};
    Tensor<T> total;
    for (std::size_t a = 0; a < 3; ++a) {
        auto branch = instance_norm(dwconv1d_axis(x, axes[a], layer), layer.norm[a].gamma, layer.norm[a].beta);
        total = a == 0 ? branch : add(total, branch);
    }
    return total;
}

template <typename T>
Tensor<T> decomposed_block(const Tensor<T>& x, const DecomposedConvLayer<T>& layer) {
    return add(x, decomposed_branches(x, layer));
}

template <typename T>
Tensor<T> full_dwconv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_volume(x.shape(), "full_dwconv3d");
    require(weight.rank() == 4 && weight.dim(1) == weight.dim(2) && weight.dim(2) == weight.dim(3) &&
                bias.rank() == 1 && bias.dim(0) == weight.dim(0),
            ErrorCode::configuration,
            "full_dwconv3d weight must be (C, k, k, k) with bias (C), got " + shape_str(weight.shape()));
    const std::size_t channels = x.dim(1);
    require(weight.dim(0) == channels, ErrorCode::configuration,
            "full_dwconv3d channel mismatch: input has " + std::to_string(channels) + ", layer has " +
                std::to_string(weight.dim(0)));
    const std::size_t k = weight.dim(1);
    require_odd(k, "full_dwconv3d");
    const std::size_t p = k / 2;
    const std::size_t H = x.dim(2), W = x.dim(3), D = x.dim(4);
    const std::size_t vol = H * W * D;
    const std::size_t k3 = k * k * k;
    const auto src = x.data();
    const auto wt = weight.data();
    std::vector<T> out(src.size());
    for (std::size_t bc = 0; bc < x.dim(0) * channels; ++bc) {
        const std::size_t c = bc % channels;
        const T* xs = src.data() + bc * vol;
        T* os = out.data() + bc * vol;
        std::fill(os, os + vol, bias.data()[c]);
        // Kernel taps in lexicographic order so every output accumulates the
        // same sequence of products as a direct nested loop would.
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t ww = 0; ww < W; ++ww) {
                T* orow = os + (h * W + ww) * D;
                for (std::size_t a = 0; a < k; ++a) {
                    if (h + a < p || h + a - p >= H) continue;
                    const std::size_t sh = h + a - p;
                    for (std::size_t b = 0; b < k; ++b) {
                        if (ww + b < p || ww + b - p >= W) continue;
                        const std::size_t sw = ww + b - p;
                        const T* xrow = xs + (sh * W + sw) * D;
                        const T* wk = wt.data() + c * k3 + (a * k + b) * k;
                        for (std::size_t cc = 0; cc < k; ++cc) {
                            std::size_t lo, hi;
                            tap_range(D, cc, p, lo, hi);
                            if (hi > lo) axpy(orow + lo, xrow + lo + cc - p, wk[cc], hi - lo);
                        }
                    }
                }
            }
    }
    return make_result<T>(x.shape(), std::move(out), "full_dwconv3d", {x, weight, bias},
                          [x, weight, bias, channels, k, p, H, W, D, vol, k3](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gw = grad_sink(weight);
                              auto gb = grad_sink(bias);
                              const auto xsrc = x.data();
                              const auto wt = weight.data();
                              for (std::size_t bc = 0; bc < x.dim(0) * channels; ++bc) {
                                  const std::size_t c = bc % channels;
                                  const T* gs = g.data() + bc * vol;
                                  const T* xs = xsrc.data() + bc * vol;
                                  if (!gb.empty())
                                      for (std::size_t i = 0; i < vol; ++i) gb[c] += gs[i];
                                  for (std::size_t h = 0; h < H; ++h)
                                      for (std::size_t ww = 0; ww < W; ++ww) {
                                          const T* grow = gs + (h * W + ww) * D;
                                          for (std::size_t a = 0; a < k; ++a) {
                                              if (h + a < p || h + a - p >= H) continue;
                                              const std::size_t sh = h + a - p;
                                              for (std::size_t b = 0; b < k; ++b) {
                                                  if (ww + b < p || ww + b - p >= W) continue;
                                                  const std::size_t off = bc * vol + (sh * W + ww + b - p) * D;
                                                  const std::size_t widx = c * k3 + (a * k + b) * k;
                                                  for (std::size_t cc = 0; cc < k; ++cc) {
                                                      std::size_t lo, hi;
                                                      tap_range(D, cc, p, lo, hi);
                                                      if (hi == lo) continue;
                                                      if (!gx.empty())
                                                          axpy(gx.data() + off + lo + cc - p, grow + lo, wt[widx + cc],
                                                               hi - lo);
                                                      if (!gw.empty())
                                                          gw[widx + cc] +=
                                                              dot(grow + lo, xs + (off - bc * vol) + lo + cc - p, hi - lo);
                                                  }
                                              }
                                          }
                                      }
                              }
                          });
}

template <typename T>
Tensor<T> full_dwconv3d(const Tensor<T>& x, const FullDWConv3dLayer<T>& layer) {
    return full_dwconv3d(x, layer.weight, layer.bias);
}

namespace {

struct ConvGeometry {
    std::size_t cin, cout, k, stride, pad;
    std::size_t H, W, D, Ho, Wo, Do;
    std::size_t rows() const { return cin * k * k * k; }
    std::size_t out_spatial() const { return Ho * Wo * Do; }
};

// Output depth indices [lo, hi) whose tap c lands inside the input.
std::pair<std::size_t, std::size_t> valid_depth(const ConvGeometry& g, std::size_t c) {
    std::size_t lo = 0;
    while (lo < g.Do && lo * g.stride + c < g.pad) ++lo;
    std::size_t hi = lo;
    while (hi < g.Do && hi * g.stride + c < g.pad + g.D) ++hi;
    return {lo, hi};
}

// Columns for output h-slices [h0, h1): cols is (rows x (h1-h0)*Wo*Do).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t h0, std::size_t h1, T* cols) {
    const std::size_t ncols = (h1 - h0) * g.Wo * g.Do;
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t a = 0; a < g.k; ++a)
            for (std::size_t b = 0; b < g.k; ++b)
                for (std::size_t c = 0; c < g.k; ++c, ++r) {
                    T* dst = cols + r * ncols;
                    const auto [lo, hi] = valid_depth(g, c);
                    for (std::size_t oh = h0; oh < h1; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + a) - static_cast<std::ptrdiff_t>(g.pad);
                        for (std::size_t ow = 0; ow < g.Wo; ++ow, dst += g.Do) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + b) - static_cast<std::ptrdiff_t>(g.pad);
                            const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.H) && iw >= 0 &&
                                                iw < static_cast<std::ptrdiff_t>(g.W);
                            if (!row_ok) {
                                std::fill(dst, dst + g.Do, T {0});
                                continue;
                            }
                            const T* src = x + ((ci * g.H + ih) * g.W + iw) * g.D + (lo * g.stride + c - g.pad);
                            std::fill(dst, dst + lo, T {0});
                            if (g.stride == 1)
                                std::copy(src, src + (hi - lo), dst + lo);
                            else
                                for (std::size_t od = lo; od < hi; ++od, src += g.stride) dst[od] = *src;
                            std::fill(dst + hi, dst + g.Do, T {0});
                        }
                    }
                }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, std::size_t h0, std::size_t h1, T* gx) {
    const std::size_t ncols = (h1 - h0) * g.Wo * g.Do;
    std::size_t r = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci)
        for (std::size_t a = 0; a < g.k; ++a)
            for (std::size_t b = 0; b < g.k; ++b)
                for (std::size_t c = 0; c < g.k; ++c, ++r) {
                    const T* srcc = cols + r * ncols;
                    const auto [lo, hi] = valid_depth(g, c);
                    for (std::size_t oh = h0; oh < h1; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + a) - static_cast<std::ptrdiff_t>(g.pad);
                        for (std::size_t ow = 0; ow < g.Wo; ++ow, srcc += g.Do) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + b) - static_cast<std::ptrdiff_t>(g.pad);
                            const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.H) && iw >= 0 &&
                                                iw < static_cast<std::ptrdiff_t>(g.W);
                            if (!row_ok) continue;
                            T* dst = gx + ((ci * g.H + ih) * g.W + iw) * g.D + (lo * g.stride + c - g.pad);
                            for (std::size_t od = lo; od < hi; ++od, dst += g.stride) *dst += srcc[od];
                        }
                    }
                }
}

// Output h-slices per im2col chunk, keeping the column buffer near 16M values.
std::size_t chunk_rows(const ConvGeometry& g) {
    const std::size_t per_slice = g.rows() * g.Wo * g.Do;
    return std::max<std::size_t>(1, (std::size_t {1} << 24) / std::max<std::size_t>(per_slice, 1));
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    require_volume(x.shape(), "conv3d");
    require(weight.rank() == 5 && weight.dim(2) == weight.dim(3) && weight.dim(3) == weight.dim(4),
            ErrorCode::configuration, "conv3d weight must be (C_out, C_in, k, k, k), got " + shape_str(weight.shape()));
    require(weight.dim(1) == x.dim(1), ErrorCode::configuration,
            "conv3d channel mismatch: input has " + std::to_string(x.dim(1)) + ", weight expects " +
                std::to_string(weight.dim(1)));
    require(!bias.defined() || bias.numel() == weight.dim(0), ErrorCode::configuration, "conv3d bias mismatch");
    ConvGeometry geo {x.dim(1), weight.dim(0), weight.dim(2), stride, padding, x.dim(2), x.dim(3), x.dim(4), 0, 0, 0};
    geo.Ho = conv_output_size(geo.H, geo.k, stride, padding);
    geo.Wo = conv_output_size(geo.W, geo.k, stride, padding);
    geo.Do = conv_output_size(geo.D, geo.k, stride, padding);
    const std::size_t batch = x.dim(0);
    const std::size_t in_vol = geo.cin * geo.H * geo.W * geo.D;
    const std::size_t so = geo.out_spatial();
    const std::size_t slice = geo.Wo * geo.Do;
    const std::size_t step = chunk_rows(geo);
    const auto rows = static_cast<Eigen::Index>(geo.rows());
    const auto cout = static_cast<Eigen::Index>(geo.cout);
    std::vector<T> out(batch * geo.cout * so);
    std::vector<T> cols;
    CMapR<T> Wm(weight.data().data(), cout, rows);
    for (std::size_t b = 0; b < batch; ++b) {
        Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>> Y(out.data() + b * geo.cout * so, cout,
                                                        static_cast<Eigen::Index>(so), Eigen::OuterStride<>(so));
        for (std::size_t h0 = 0; h0 < geo.Ho; h0 += step) {
            const std::size_t h1 = std::min(geo.Ho, h0 + step);
            const std::size_t n = (h1 - h0) * slice;
            cols.resize(geo.rows() * n);
            im2col(geo, x.data().data() + b * in_vol, h0, h1, cols.data());
            Y.middleCols(static_cast<Eigen::Index>(h0 * slice), static_cast<Eigen::Index>(n)).noalias() =
                Wm * CMapR<T>(cols.data(), rows, static_cast<Eigen::Index>(n));
        }
        if (bias.defined())
            for (std::size_t co = 0; co < geo.cout; ++co) {
                T* yr = out.data() + (b * geo.cout + co) * so;
                const T bv = bias.data()[co];
                for (std::size_t i = 0; i < so; ++i) yr[i] += bv;
            }
    }
    Shape shape {batch, geo.cout, geo.Ho, geo.Wo, geo.Do};
    std::vector<Tensor<T>> inputs {x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<T>(std::move(shape), std::move(out), "conv3d", inputs,
                          [x, weight, bias, geo, batch, in_vol, so, slice, step, rows, cout](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gw = grad_sink(weight);
                              std::span<T> gb = bias.defined() ? grad_sink(bias) : std::span<T> {};
                              CMapR<T> Wm(weight.data().data(), cout, rows);
                              std::vector<T> cols;
                              for (std::size_t b = 0; b < batch; ++b) {
                                  Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>> G(
                                      g.data() + b * geo.cout * so, cout, static_cast<Eigen::Index>(so),
                                      Eigen::OuterStride<>(so));
                                  if (!gb.empty())
                                      for (std::size_t co = 0; co < geo.cout; ++co) {
                                          const T* gr = g.data() + (b * geo.cout + co) * so;
                                          for (std::size_t i = 0; i < so; ++i) gb[co] += gr[i];
                                      }
                                  if (gx.empty() && gw.empty()) continue;
                                  for (std::size_t h0 = 0; h0 < geo.Ho; h0 += step) {
                                      const std::size_t h1 = std::min(geo.Ho, h0 + step);
                                      const auto n = static_cast<Eigen::Index>((h1 - h0) * slice);
                                      const auto Gc = G.middleCols(static_cast<Eigen::Index>(h0 * slice), n);
                                      cols.resize(geo.rows() * static_cast<std::size_t>(n));
                                      if (!gw.empty()) {
                                          im2col(geo, x.data().data() + b * in_vol, h0, h1, cols.data());
                                          MapR<T>(gw.data(), cout, rows).noalias() +=
                                              Gc * CMapR<T>(cols.data(), rows, n).transpose();
                                      }
                                      if (!gx.empty()) {
                                          MapR<T>(cols.data(), rows, n).noalias() = Wm.transpose() * Gc;
                                          col2im(geo, cols.data(), h0, h1, gx.data() + b * in_vol);
                                      }
                                  }
                              }
                          });
}

CostReport count_decomposed_cost(std::size_t channels, std::array<std::size_t, 3> kernels, const Shape& input_shape,
                                 bool with_norm_params) {
    require_volume(input_shape, "count_cost");
    const std::uint64_t positions = input_shape[0] * spatial_numel(input_shape);
    static constexpr const char* names[3] = {"h", "w", "d"};
    CostReport report;
    for (std::size_t a = 0; a < 3; ++a) {
        report.add(std::string("conv_") + names[a] + ".weight", channels * positions * kernels[a], channels * kernels[a]);
        report.add(std::string("conv_") + names[a] + ".bias", 0, channels);
        if (with_norm_params) {
            report.add(std::string("norm_") + names[a] + ".gamma", 0, channels);
            report.add(std::string("norm_") + names[a] + ".beta", 0, channels);
        }
    }
    return report;
}

CostReport count_full_dw_cost(std::size_t channels, std::size_t k, const Shape& input_shape) {
    require_volume(input_shape, "count_cost");
    const std::uint64_t positions = input_shape[0] * spatial_numel(input_shape);
    CostReport report;
    report.add("weight", channels * positions * k * k * k, channels * k * k * k);
    report.add("bias", 0, channels);
    return report;
}

CostReport count_conv3d_cost(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                             std::size_t padding, const Shape& input_shape) {
    require_volume(input_shape, "count_cost");
    const std::uint64_t outputs = input_shape[0] * conv_output_size(input_shape[2], k, stride, padding) *
                                  conv_output_size(input_shape[3], k, stride, padding) *
                                  conv_output_size(input_shape[4], k, stride, padding);
    const std::uint64_t taps = c_in * k * k * k;
    CostReport report;
    report.add("weight", outputs * c_out * taps, c_out * taps);
    report.add("bias", 0, c_out);
    return report;
}

BenchmarkRecord benchmark_pair(const Shape& input_shape, std::size_t k, std::size_t repetitions, std::size_t warmup,
                               std::uint64_t seed) {
    require_volume(input_shape, "bench-conv");
    require(repetitions >= 1, ErrorCode::argument, "benchmark needs at least one repetition");
    NoGradGuard no_grad;
    Rng rng(seed);
    const std::size_t channels = input_shape[1];
    const auto x = Tensor<float>::uniform(input_shape, -1.0, 1.0, rng);
    const auto dec = DecomposedConvLayer<float>::create(channels, k, rng);
    const auto full = FullDWConv3dLayer<float>::create(channels, k, rng);

    auto run_decomposed = [&] {
        for (Axis axis : {Axis::h, Axis::w, Axis::d}) (void)dwconv1d_axis(x, axis, dec);
    };
    auto run_full = [&] { (void)full_dwconv3d(x, full); };
    auto median_seconds = [&](auto&& fn) {
        for (std::size_t i = 0; i < warmup; ++i) fn();
        std::vector<double> times;
        for (std::size_t i = 0; i < repetitions; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(times.begin(), times.end());
        const std::size_t n = times.size();
        return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    };

    BenchmarkRecord rec;
    rec.shape = input_shape;
    rec.kernel = k;
    rec.repetitions = repetitions;
    rec.decomposed_median_s = median_seconds(run_decomposed);
    rec.full_median_s = median_seconds(run_full);
    rec.decomposed_multiply_adds = count_decomposed_cost(channels, {k, k, k}, input_shape).total_multiply_adds();
    rec.full_multiply_adds = count_full_dw_cost(channels, k, input_shape).total_multiply_adds();
    return rec;
}

#define DCVLM_CONV(T)                                                                                         \
    template struct DecomposedConvLayer<T>;                                                                   \
    template struct FullDWConv3dLayer<T>;                                                                     \
    template Tensor<T> dwconv1d_axis(const Tensor<T>&, Axis, const Tensor<T>&, const Tensor<T>&);             \
    template Tensor<T> dwconv1d_axis(const Tensor<T>&, Axis, const DecomposedConvLayer<T>&);                  \
    template Tensor<T> decomposed_branches(const Tensor<T>&, const DecomposedConvLayer<T>&);                  \
    template Tensor<T> decomposed_block(const Tensor<T>&, const DecomposedConvLayer<T>&);                     \
    template Tensor<T> full_dwconv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> full_dwconv3d(const Tensor<T>&, const FullDWConv3dLayer<T>&);                          \
    template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);

DCVLM_CONV(float)
DCVLM_CONV(double)

}  // namespace dcvlm

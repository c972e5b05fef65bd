#include "dcvlm/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace dcvlm {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
    return strides;
}

// Broadcast plan: output shape plus per-output-axis strides into each operand
// (0 along broadcast axes).
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
    Broadcast plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1) {
            plan.out[i] = pa[i];
        } else if (pa[i] == 1) {
            plan.out[i] = pb[i];
        } else {
            fail(ErrorCode::dimension,
                 "cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
    }
    const auto sa = contiguous_strides(pa);
    const auto sb = contiguous_strides(pb);
    plan.stride_a.resize(rank);
    plan.stride_b.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        plan.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
        plan.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
    }
    return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Broadcast& plan, F&& f) {
    const std::size_t n = shape_numel(plan.out);
    if (plan.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t rank = plan.out.size();
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t axis = rank; axis-- > 0;) {
            ++counter[axis];
            ia += plan.stride_a[axis];
            ib += plan.stride_b[axis];
            if (counter[axis] < plan.out[axis]) break;
            ia -= plan.stride_a[axis] * counter[axis];
            ib -= plan.stride_b[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
    auto plan = plan_broadcast(a.shape(), b.shape());
    std::vector<T> out(shape_numel(plan.out));
    const auto xa = a.data();
    const auto xb = b.data();
    for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(xa[i], xb[j]); });
    return make_result<T>(plan.out, std::move(out), name, {a, b},
                          [a, b, plan, da, db](std::span<const T> g) {
                              const auto xa = a.data();
                              const auto xb = b.data();
                              auto ga = grad_sink(a);
                              auto gb = grad_sink(b);
                              for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                                  if (!ga.empty()) ga[i] += g[o] * da(xa[i], xb[j]);
                                  if (!gb.empty()) gb[j] += g[o] * db(xa[i], xb[j]);
                              });
                          });
}

// Derivative is expressed through both input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
    const auto in = x.data();
    std::vector<T> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    auto result = make_result<T>(x.shape(), std::move(out), name, {x}, nullptr);
    if (result.requires_grad()) {
        std::weak_ptr<detail::Node<T>> weak_out = result.node();
        result.node()->grad_fn->backward = [x, weak_out, deriv](std::span<const T> g) {
            auto gx = grad_sink(x);
            const auto in = x.data();
            const auto out = weak_out.lock();
            for (std::size_t i = 0; i < in.size(); ++i) gx[i] += g[i] * deriv(in[i], out->data[i]);
        };
    }
    return result;
}

template <typename T>
T stable_sigmoid(T v) {
    if (v >= T {0}) return T {1} / (T {1} + std::exp(-v));
    const T e = std::exp(v);
    return e / (T {1} + e);
}

struct AxisView {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
    require(axis < shape.size(), ErrorCode::dimension,
            "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T {1}; },
                     [](T, T) { return T {1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T {1}; },
                     [](T, T) { return T {-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                     [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T {1} / y; },
                     [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(x, "neg", [](T v) { return -v; }, [](T, T) { return T {-1}; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    return unary_op(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    for (auto v : x.data()) {
        if (!(v > T {0})) fail(ErrorCode::domain, "log of non-positive value " + std::to_string(v));
    }
    return unary_op(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T {1} / v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(x, "sigmoid", [](T v) { return stable_sigmoid(v); },
                    [](T, T y) { return y * (T {1} - y); });
}

template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
    return unary_op(
        x, "log_sigmoid",
        [](T v) { return std::min(v, T {0}) - std::log1p(std::exp(-std::abs(v))); },
        [](T v, T) { return stable_sigmoid(-v); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    static constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    static constexpr T k = static_cast<T>(0.044715);
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(x.numel());
    Eigen::Map<const Arr> v(x.data().data(), n);
    // tanh is kept for the backward pass.
    Arr t = (c * (v + k * v * v * v)).tanh();
    std::vector<T> out(x.numel());
    Eigen::Map<Arr>(out.data(), n) = T {0.5} * v * (T {1} + t);
    return make_result<T>(x.shape(), std::move(out), "gelu", {x}, [x, t = std::move(t)](std::span<const T> g) {
        auto gx = grad_sink(x);
        const auto n = static_cast<Eigen::Index>(x.numel());
        Eigen::Map<const Arr> v(x.data().data(), n), gg(g.data(), n);
        Eigen::Map<Arr>(gx.data(), n) +=
            gg * (T {0.5} * (T {1} + t) + T {0.5} * v * (T {1} - t * t) * c * (T {1} + T {3} * k * v * v));
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary_op(x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary_op(x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T {1}; });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorCode::dimension,
            "matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<T> out(static_cast<std::size_t>(m * n));
    MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
    return make_result<T>({a.dim(0), b.dim(1)}, std::move(out), "matmul", {a, b},
                          [a, b, m, k, n](std::span<const T> g) {
                              CMapR<T> G(g.data(), m, n);
                              if (auto ga = grad_sink(a); !ga.empty())
                                  MapR<T>(ga.data(), m, k).noalias() += G * CMapR<T>(b.data().data(), k, n).transpose();
                              if (auto gb = grad_sink(b); !gb.empty())
                                  MapR<T>(gb.data(), k, n).noalias() += CMapR<T>(a.data().data(), m, k).transpose() * G;
                          });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(x.rank() >= 1 && weight.rank() == 2 && x.shape().back() == weight.dim(0), ErrorCode::dimension,
            "linear shape mismatch: input " + shape_str(x.shape()) + " with weight " + shape_str(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias) {
        require(bias.numel() == weight.dim(1), ErrorCode::dimension,
                "linear bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
    }
    const auto in = static_cast<Eigen::Index>(weight.dim(0));
    const auto outd = static_cast<Eigen::Index>(weight.dim(1));
    const auto rows = static_cast<Eigen::Index>(x.numel() / weight.dim(0));
    std::vector<T> out(static_cast<std::size_t>(rows * outd));
    MapR<T> Y(out.data(), rows, outd);
    Y.noalias() = CMapR<T>(x.data().data(), rows, in) * CMapR<T>(weight.data().data(), in, outd);
    if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
    Shape shape = x.shape();
    shape.back() = weight.dim(1);
    std::vector<Tensor<T>> inputs {x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result<T>(std::move(shape), std::move(out), "linear", inputs,
                          [x, weight, bias, has_bias, in, outd, rows](std::span<const T> g) {
                              CMapR<T> G(g.data(), rows, outd);
                              if (auto gx = grad_sink(x); !gx.empty())
                                  MapR<T>(gx.data(), rows, in).noalias() +=
                                      G * CMapR<T>(weight.data().data(), in, outd).transpose();
                              if (auto gw = grad_sink(weight); !gw.empty())
                                  MapR<T>(gw.data(), in, outd).noalias() +=
                                      CMapR<T>(x.data().data(), rows, in).transpose() * G;
                              if (has_bias) {
                                  if (auto gb = grad_sink(bias); !gb.empty())
                                      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), outd) +=
                                          G.colwise().sum();
                              }
                          });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    require(x.rank() >= 2, ErrorCode::dimension, "transpose needs rank >= 2, got " + shape_str(x.shape()));
    const std::size_t m = x.shape()[x.rank() - 2];
    const std::size_t n = x.shape()[x.rank() - 1];
    const std::size_t batch = x.numel() / (m * n);
    const auto src = x.data();
    std::vector<T> out(src.size());
    for (std::size_t b = 0; b < batch; ++b) {
        const T* s = src.data() + b * m * n;
        T* d = out.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) d[j * m + i] = s[i * n + j];
    }
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    return make_result<T>(std::move(shape), std::move(out), "transpose", {x},
                          [x, m, n, batch](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              for (std::size_t b = 0; b < batch; ++b) {
                                  const T* s = g.data() + b * m * n;
                                  T* d = gx.data() + b * m * n;
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += s[j * m + i];
                              }
                          });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(shape_numel(shape) == x.numel(), ErrorCode::dimension,
            "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [x](std::span<const T> g) {
        auto gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    require(!parts.empty(), ErrorCode::argument, "concat of zero tensors");
    const Shape& first = parts.front().shape();
    require(axis < first.size(), ErrorCode::dimension, "concat axis out of range for " + shape_str(first));
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        bool ok = p.rank() == first.size();
        for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == axis || p.shape()[i] == first[i];
        require(ok, ErrorCode::dimension,
                "concat shape mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
        shape[axis] += p.shape()[axis];
    }
    const auto view = axis_view(shape, axis);
    std::vector<T> out(shape_numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = p.shape()[axis] * view.inner;
        const auto src = p.data();
        for (std::size_t o = 0; o < view.outer; ++o)
            std::copy_n(src.data() + o * chunk, chunk, out.data() + o * view.len * view.inner + offset);
        offset += chunk;
    }
    return make_result<T>(std::move(shape), std::move(out), "concat", parts,
                          [parts, offsets, view, axis](std::span<const T> g) {
                              for (std::size_t k = 0; k < parts.size(); ++k) {
                                  auto gp = grad_sink(parts[k]);
                                  if (gp.empty()) continue;
                                  const std::size_t chunk = parts[k].shape()[axis] * view.inner;
                                  for (std::size_t o = 0; o < view.outer; ++o) {
                                      const T* s = g.data() + o * view.len * view.inner + offsets[k];
                                      T* d = gp.data() + o * chunk;
                                      for (std::size_t i = 0; i < chunk; ++i) d[i] += s[i];
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto view = axis_view(x.shape(), axis);
    require(begin < end && end <= view.len, ErrorCode::argument,
            "slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                shape_str(x.shape()));
    Shape shape = x.shape();
    shape[axis] = end - begin;
    const std::size_t chunk = (end - begin) * view.inner;
    std::vector<T> out(view.outer * chunk);
    const auto src = x.data();
    for (std::size_t o = 0; o < view.outer; ++o)
        std::copy_n(src.data() + (o * view.len + begin) * view.inner, chunk, out.data() + o * chunk);
    return make_result<T>(std::move(shape), std::move(out), "slice", {x},
                          [x, view, begin, chunk](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              for (std::size_t o = 0; o < view.outer; ++o) {
                                  T* d = gx.data() + (o * view.len + begin) * view.inner;
                                  const T* s = g.data() + o * chunk;
                                  for (std::size_t i = 0; i < chunk; ++i) d[i] += s[i];
                              }
                          });
}

namespace {

struct ReducePlan {
    Shape out_shape;
    std::vector<std::size_t> out_stride;  // per input axis, 0 when reduced
    std::size_t count = 1;
};

ReducePlan plan_reduce(const Shape& shape, const std::vector<std::size_t>& axes, bool keep_dims) {
    require(!axes.empty(), ErrorCode::degenerate_reduction, "reduction over an empty axis list");
    std::vector<bool> reduced(shape.size(), false);
    for (auto a : axes) {
        require(a < shape.size(), ErrorCode::dimension,
                "reduction axis " + std::to_string(a) + " out of range for " + shape_str(shape));
        require(!reduced[a], ErrorCode::argument, "duplicate reduction axis " + std::to_string(a));
        reduced[a] = true;
    }
    ReducePlan plan;
    Shape kept;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (reduced[i]) {
            plan.count *= shape[i];
            if (keep_dims) plan.out_shape.push_back(1);
        } else {
            kept.push_back(shape[i]);
            plan.out_shape.push_back(shape[i]);
        }
    }
    const auto kept_strides = contiguous_strides(kept);
    plan.out_stride.assign(shape.size(), 0);
    std::size_t k = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (!reduced[i]) plan.out_stride[i] = kept_strides[k++];
    }
    return plan;
}

template <typename F>
void for_each_reduce(const Shape& shape, const ReducePlan& plan, F&& f) {
    const std::size_t n = shape_numel(shape);
    const std::size_t rank = shape.size();
    std::vector<std::size_t> counter(rank, 0);
    std::size_t o = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, o);
        for (std::size_t axis = rank; axis-- > 0;) {
            ++counter[axis];
            o += plan.out_stride[axis];
            if (counter[axis] < shape[axis]) break;
            o -= plan.out_stride[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

template <typename T>
Tensor<T> reduce_impl(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keep_dims, bool average) {
    auto plan = plan_reduce(x.shape(), axes, keep_dims);
    const T factor = average ? T {1} / static_cast<T>(plan.count) : T {1};
    std::vector<T> out(shape_numel(plan.out_shape), T {0});
    const auto src = x.data();
    for_each_reduce(x.shape(), plan, [&](std::size_t i, std::size_t o) { out[o] += src[i]; });
    if (average) {
        for (auto& v : out) v *= factor;
    }
    return make_result<T>(plan.out_shape, std::move(out), average ? "mean" : "sum", {x},
                          [x, plan, factor](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              for_each_reduce(x.shape(), plan,
                                              [&](std::size_t i, std::size_t o) { gx[i] += g[o] * factor; });
                          });
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keep_dims) {
    return reduce_impl(x, axes, keep_dims, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keep_dims) {
    return reduce_impl(x, axes, keep_dims, true);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T total {0};
    for (auto v : x.data()) total += v;
    return make_result<T>({}, {total}, "sum_all", {x}, [x](std::span<const T> g) {
        auto gx = grad_sink(x);
        for (auto& v : gx) v += g[0];
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T {1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
    const auto v = axis_view(x.shape(), axis);
    require(v.len >= 2, ErrorCode::dimension, "layer_norm axis must have length >= 2, got " + shape_str(x.shape()));
    if (gamma.defined())
        require(gamma.numel() == v.len, ErrorCode::dimension, "layer_norm gamma shape " + shape_str(gamma.shape()));
    if (beta.defined())
        require(beta.numel() == v.len, ErrorCode::dimension, "layer_norm beta shape " + shape_str(beta.shape()));
    const auto src = x.data();
    std::vector<T> xhat(src.size());
    std::vector<T> rstd(v.outer * v.inner);
    std::vector<T> acc(v.inner);
    const T inv_len = T {1} / static_cast<T>(v.len);
    for (std::size_t o = 0; o < v.outer; ++o) {
        const T* xs = src.data() + o * v.len * v.inner;
        T* hs = xhat.data() + o * v.len * v.inner;
        std::fill(acc.begin(), acc.end(), T {0});
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) acc[i] += xs[l * v.inner + i];
        for (auto& a : acc) a *= inv_len;  // mean
        std::vector<T> var(v.inner, T {0});
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const T d = xs[l * v.inner + i] - acc[i];
                hs[l * v.inner + i] = d;
                var[i] += d * d;
            }
        T* rs = rstd.data() + o * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i)
            rs[i] = T {1} / std::sqrt(var[i] * inv_len + static_cast<T>(eps));
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t i = 0; i < v.inner; ++i) hs[l * v.inner + i] *= rs[i];
    }
    std::vector<T> out(xhat);
    const bool has_gamma = gamma.defined();
    const bool has_beta = beta.defined();
    if (has_gamma || has_beta) {
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t l = 0; l < v.len; ++l) {
                const T gm = has_gamma ? gamma.data()[l] : T {1};
                const T bt = has_beta ? beta.data()[l] : T {0};
                T* row = out.data() + (o * v.len + l) * v.inner;
                for (std::size_t i = 0; i < v.inner; ++i) row[i] = row[i] * gm + bt;
            }
    }
    std::vector<Tensor<T>> inputs {x};
    if (has_gamma) inputs.push_back(gamma);
    if (has_beta) inputs.push_back(beta);
    return make_result<T>(x.shape(), std::move(out), "layer_norm", inputs,
                          [x, gamma, beta, v, has_gamma, has_beta, xhat = std::move(xhat),
                           rstd = std::move(rstd)](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gg = has_gamma ? grad_sink(gamma) : std::span<T> {};
                              auto gb = has_beta ? grad_sink(beta) : std::span<T> {};
                              const T inv_len = T {1} / static_cast<T>(v.len);
                              std::vector<T> m1(v.inner), m2(v.inner);
                              for (std::size_t o = 0; o < v.outer; ++o) {
                                  const std::size_t base = o * v.len * v.inner;
                                  if (!gg.empty() || !gb.empty()) {
                                      for (std::size_t l = 0; l < v.len; ++l) {
                                          T sg {0}, sb {0};
                                          for (std::size_t i = 0; i < v.inner; ++i) {
                                              const std::size_t k = base + l * v.inner + i;
                                              sg += g[k] * xhat[k];
                                              sb += g[k];
                                          }
                                          if (!gg.empty()) gg[l] += sg;
                                          if (!gb.empty()) gb[l] += sb;
                                      }
                                  }
                                  if (gx.empty()) continue;
                                  std::fill(m1.begin(), m1.end(), T {0});
                                  std::fill(m2.begin(), m2.end(), T {0});
                                  for (std::size_t l = 0; l < v.len; ++l) {
                                      const T gm = has_gamma ? gamma.data()[l] : T {1};
                                      for (std::size_t i = 0; i < v.inner; ++i) {
                                          const std::size_t k = base + l * v.inner + i;
                                          const T dh = g[k] * gm;
                                          m1[i] += dh;
                                          m2[i] += dh * xhat[k];
                                      }
                                  }
                                  const T* rs = rstd.data() + o * v.inner;
                                  for (std::size_t l = 0; l < v.len; ++l) {
                                      const T gm = has_gamma ? gamma.data()[l] : T {1};
                                      for (std::size_t i = 0; i < v.inner; ++i) {
                                          const std::size_t k = base + l * v.inner + i;
                                          const T dh = g[k] * gm;
                                          gx[k] += rs[i] * (dh - m1[i] * inv_len - xhat[k] * m2[i] * inv_len);
                                      }
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    require(x.rank() >= 3, ErrorCode::dimension, "instance_norm needs (B, C, ...), got " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0);
    const std::size_t channels = x.dim(1);
    const std::size_t spatial = x.numel() / (batch * channels);
    require(spatial >= 2, ErrorCode::dimension, "instance_norm needs at least 2 positions per channel");
    require(gamma.numel() == channels && beta.numel() == channels, ErrorCode::dimension,
            "instance_norm affine parameters must have " + std::to_string(channels) + " entries");
    const auto src = x.data();
    std::vector<T> xhat(src.size());
    std::vector<T> rstd(batch * channels);
    std::vector<T> out(src.size());
    const T inv = T {1} / static_cast<T>(spatial);
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
        const T* xs = src.data() + bc * spatial;
        T* hs = xhat.data() + bc * spatial;
        T m {0};
        for (std::size_t i = 0; i < spatial; ++i) m += xs[i];
        m *= inv;
        T var {0};
        for (std::size_t i = 0; i < spatial; ++i) {
            hs[i] = xs[i] - m;
            var += hs[i] * hs[i];
        }
        const T r = T {1} / std::sqrt(var * inv + static_cast<T>(eps));
        rstd[bc] = r;
        const T gm = gamma.data()[bc % channels];
        const T bt = beta.data()[bc % channels];
        T* os = out.data() + bc * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
            hs[i] *= r;
            os[i] = hs[i] * gm + bt;
        }
    }
    return make_result<T>(x.shape(), std::move(out), "instance_norm", {x, gamma, beta},
                          [x, gamma, beta, batch, channels, spatial, xhat = std::move(xhat),
                           rstd = std::move(rstd)](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gg = grad_sink(gamma);
                              auto gb = grad_sink(beta);
                              const T inv = T {1} / static_cast<T>(spatial);
                              for (std::size_t bc = 0; bc < batch * channels; ++bc) {
                                  const std::size_t c = bc % channels;
                                  const T* gs = g.data() + bc * spatial;
                                  const T* hs = xhat.data() + bc * spatial;
                                  T sg {0}, sgh {0};
                                  for (std::size_t i = 0; i < spatial; ++i) {
                                      sg += gs[i];
                                      sgh += gs[i] * hs[i];
                                  }
                                  if (!gg.empty()) gg[c] += sgh;
                                  if (!gb.empty()) gb[c] += sg;
                                  if (gx.empty()) continue;
                                  const T gm = gamma.data()[c];
                                  const T r = rstd[bc];
                                  T* dx = gx.data() + bc * spatial;
                                  for (std::size_t i = 0; i < spatial; ++i)
                                      dx[i] += r * gm * (gs[i] - sg * inv - hs[i] * sgh * inv);
                              }
                          });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis);
    const auto src = x.data();
    std::vector<T> out(src.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            T mx = src[base];
            for (std::size_t l = 1; l < v.len; ++l) mx = std::max(mx, src[base + l * v.inner]);
            T s {0};
            for (std::size_t l = 0; l < v.len; ++l) s += std::exp(src[base + l * v.inner] - mx);
            const T lse = mx + std::log(s);
            for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] = src[base + l * v.inner] - lse;
        }
    auto result = make_result<T>(x.shape(), std::move(out), "log_softmax", {x}, nullptr);
    if (result.requires_grad()) {
        std::weak_ptr<detail::Node<T>> weak_out = result.node();
        result.node()->grad_fn->backward = [x, v, weak_out](std::span<const T> g) {
            auto gx = grad_sink(x);
            const auto out = weak_out.lock();
            const auto& y = out->data;
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t i = 0; i < v.inner; ++i) {
                    const std::size_t base = o * v.len * v.inner + i;
                    T gs {0};
                    for (std::size_t l = 0; l < v.len; ++l) gs += g[base + l * v.inner];
                    for (std::size_t l = 0; l < v.len; ++l) {
                        const std::size_t k = base + l * v.inner;
                        gx[k] += g[k] - std::exp(y[k]) * gs;
                    }
                }
        };
    }
    return result;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, double eps) {
    require(x.rank() >= 1, ErrorCode::dimension, "l2_normalize needs rank >= 1");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const auto src = x.data();
    std::vector<T> out(src.size());
    std::vector<T> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T s {0};
        for (std::size_t j = 0; j < d; ++j) s += src[r * d + j] * src[r * d + j];
        norms[r] = std::sqrt(s + static_cast<T>(eps));
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = src[r * d + j] / norms[r];
    }
    auto result = make_result<T>(x.shape(), std::move(out), "l2_normalize", {x}, nullptr);
    if (result.requires_grad()) {
        std::weak_ptr<detail::Node<T>> weak_out = result.node();
        result.node()->grad_fn->backward = [x, d, rows, weak_out, norms = std::move(norms)](std::span<const T> g) {
            auto gx = grad_sink(x);
            const auto out = weak_out.lock();
            const auto& y = out->data;
            for (std::size_t r = 0; r < rows; ++r) {
                T dot {0};
                for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    gx[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / norms[r];
            }
        };
    }
    return result;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::size_t>& ids, const Shape& index_shape) {
    require(table.rank() == 2, ErrorCode::dimension, "embedding table must be 2-D");
    require(shape_numel(index_shape) == ids.size(), ErrorCode::shape, "embedding index shape mismatch");
    const std::size_t vocab = table.dim(0);
    const std::size_t d = table.dim(1);
    for (auto id : ids)
        require(id < vocab, ErrorCode::argument,
                "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    std::vector<T> out(ids.size() * d);
    const auto src = table.data();
    for (std::size_t k = 0; k < ids.size(); ++k) std::copy_n(src.data() + ids[k] * d, d, out.data() + k * d);
    Shape shape = index_shape;
    shape.push_back(d);
    return make_result<T>(std::move(shape), std::move(out), "embedding", {table},
                          [table, ids, d](std::span<const T> g) {
                              auto gt = grad_sink(table);
                              for (std::size_t k = 0; k < ids.size(); ++k)
                                  for (std::size_t j = 0; j < d; ++j) gt[ids[k] * d + j] += g[k * d + j];
                          });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
    require(p >= 0.0 && p < 1.0, ErrorCode::argument, "dropout probability must be in [0, 1)");
    if (!training || p == 0.0) return x;
    std::vector<T> mask(x.numel());
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : mask) m = rng.uniform() < p ? T {0} : keep;
    return mul(x, Tensor<T>::from_vector(x.shape(), std::move(mask)));
}

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require(x.rank() >= 3 && weight.rank() == 2 && weight.dim(1) == x.dim(1), ErrorCode::dimension,
            "pointwise_conv shape mismatch: input " + shape_str(x.shape()) + " with weight " +
                shape_str(weight.shape()));
    require(bias.numel() == weight.dim(0), ErrorCode::dimension, "pointwise_conv bias mismatch");
    const std::size_t batch = x.dim(0);
    const auto cin = static_cast<Eigen::Index>(weight.dim(1));
    const auto cout = static_cast<Eigen::Index>(weight.dim(0));
    const auto spatial = static_cast<Eigen::Index>(x.numel() / (batch * weight.dim(1)));
    std::vector<T> out(batch * static_cast<std::size_t>(cout * spatial));
    CMapR<T> W(weight.data().data(), cout, cin);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data().data(), cout);
    for (std::size_t b = 0; b < batch; ++b) {
        MapR<T> Y(out.data() + b * cout * spatial, cout, spatial);
        Y.noalias() = W * CMapR<T>(x.data().data() + b * cin * spatial, cin, spatial);
        Y.colwise() += bvec;
    }
    Shape shape = x.shape();
    shape[1] = weight.dim(0);
    return make_result<T>(std::move(shape), std::move(out), "pointwise_conv", {x, weight, bias},
                          [x, weight, bias, batch, cin, cout, spatial](std::span<const T> g) {
                              auto gx = grad_sink(x);
                              auto gw = grad_sink(weight);
                              auto gb = grad_sink(bias);
                              CMapR<T> W(weight.data().data(), cout, cin);
                              for (std::size_t b = 0; b < batch; ++b) {
                                  CMapR<T> G(g.data() + b * cout * spatial, cout, spatial);
                                  if (!gx.empty())
                                      MapR<T>(gx.data() + b * cin * spatial, cin, spatial).noalias() +=
                                          W.transpose() * G;
                                  if (!gw.empty())
                                      MapR<T>(gw.data(), cout, cin).noalias() +=
                                          G * CMapR<T>(x.data().data() + b * cin * spatial, cin, spatial).transpose();
                                  if (!gb.empty())
                                      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb.data(), cout) +=
                                          G.rowwise().sum();
                              }
                          });
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
    require(x.rank() >= 3, ErrorCode::dimension, "to_tokens needs (B, C, ...), got " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0);
    const std::size_t channels = x.dim(1);
    return transpose(reshape(x, {batch, channels, x.numel() / (batch * channels)}));
}

#define DCVLM_OPS(T)                                                                                        \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                             \
    template Tensor<T> neg(const Tensor<T>&);                                                               \
    template Tensor<T> exp(const Tensor<T>&);                                                               \
    template Tensor<T> log(const Tensor<T>&);                                                               \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                           \
    template Tensor<T> log_sigmoid(const Tensor<T>&);                                                       \
    template Tensor<T> gelu(const Tensor<T>&);                                                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                                          \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                     \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> transpose(const Tensor<T>&);                                                         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                    \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                  \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                      \
    template Tensor<T> sum(const Tensor<T>&, const std::vector<std::size_t>&, bool);                        \
    template Tensor<T> mean(const Tensor<T>&, const std::vector<std::size_t>&, bool);                       \
    template Tensor<T> sum_all(const Tensor<T>&);                                                           \
    template Tensor<T> mean_all(const Tensor<T>&);                                                          \
    template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&, double); \
    template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
    template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                          \
    template Tensor<T> l2_normalize(const Tensor<T>&, double);                                              \
    template Tensor<T> embedding(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);          \
    template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                                       \
    template Tensor<T> pointwise_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> to_tokens(const Tensor<T>&);

DCVLM_OPS(float)
DCVLM_OPS(double)

}  // namespace dcvlm

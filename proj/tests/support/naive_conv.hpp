#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace dcvlm::testing {

// Direct nested-loop convolutions on (B, C, H, W, D) arrays. Every kernel tap
// at every output position bumps `multiplies`, padded taps included; padded
// taps contribute nothing to the sum.

inline std::size_t vidx(const std::array<std::size_t, 5>& s, std::size_t b, std::size_t c, std::size_t h,
                        std::size_t w, std::size_t d) {
    return (((b * s[1] + c) * s[2] + h) * s[3] + w) * s[4] + d;
}

inline std::vector<double> naive_axis_conv(const std::vector<double>& x, const std::array<std::size_t, 5>& s,
                                           int axis, const std::vector<double>& weight, std::size_t k,
                                           const std::vector<double>& bias, std::uint64_t& multiplies) {
    std::vector<double> out(x.size());
    const long p = static_cast<long>(k / 2);
    for (std::size_t b = 0; b < s[0]; ++b)
        for (std::size_t c = 0; c < s[1]; ++c)
            for (std::size_t h = 0; h < s[2]; ++h)
                for (std::size_t w = 0; w < s[3]; ++w)
                    for (std::size_t d = 0; d < s[4]; ++d) {
                        double acc = bias[c];
                        for (std::size_t j = 0; j < k; ++j) {
                            ++multiplies;
                            long pos[3] = {static_cast<long>(h), static_cast<long>(w), static_cast<long>(d)};
                            pos[axis - 2] += static_cast<long>(j) - p;
                            const long len = static_cast<long>(s[axis]);
                            if (pos[axis - 2] < 0 || pos[axis - 2] >= len) continue;
                            acc += weight[c * k + j] *
                                   x[vidx(s, b, c, static_cast<std::size_t>(pos[0]), static_cast<std::size_t>(pos[1]),
                                          static_cast<std::size_t>(pos[2]))];
                        }
                        out[vidx(s, b, c, h, w, d)] = acc;
                    }
    return out;
}

inline std::vector<double> naive_full_dw(const std::vector<double>& x, const std::array<std::size_t, 5>& s,
                                         const std::vector<double>& weight, std::size_t k,
                                         const std::vector<double>& bias, std::uint64_t& multiplies) {
    std::vector<double> out(x.size());
    const long p = static_cast<long>(k / 2);
    for (std::size_t b = 0; b < s[0]; ++b)
        for (std::size_t c = 0; c < s[1]; ++c)
            for (std::size_t h = 0; h < s[2]; ++h)
                for (std::size_t w = 0; w < s[3]; ++w)
                    for (std::size_t d = 0; d < s[4]; ++d) {
                        double acc = bias[c];
                        for (std::size_t a = 0; a < k; ++a)
                            for (std::size_t bb = 0; bb < k; ++bb)
                                for (std::size_t cc = 0; cc < k; ++cc) {
                                    ++multiplies;
                                    const long ih = static_cast<long>(h + a) - p;
                                    const long iw = static_cast<long>(w + bb) - p;
                                    const long id = static_cast<long>(d + cc) - p;
                                    if (ih < 0 || iw < 0 || id < 0 || ih >= static_cast<long>(s[2]) ||
                                        iw >= static_cast<long>(s[3]) || id >= static_cast<long>(s[4]))
                                        continue;
                                    acc += weight[((c * k + a) * k + bb) * k + cc] *
                                           x[vidx(s, b, c, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw),
                                                  static_cast<std::size_t>(id))];
                                }
                        out[vidx(s, b, c, h, w, d)] = acc;
                    }
    return out;
}

// Dense strided convolution, weight (Cout, Cin, k, k, k).
inline std::vector<double> naive_conv3d(const std::vector<double>& x, const std::array<std::size_t, 5>& s,
                                        const std::vector<double>& weight, std::size_t cout, std::size_t k,
                                        const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                        std::array<std::size_t, 5>& out_shape, std::uint64_t& multiplies) {
    auto osz = [&](std::size_t n) { return (n + 2 * pad - k) / stride + 1; };
    out_shape = {s[0], cout, osz(s[2]), osz(s[3]), osz(s[4])};
    std::vector<double> out(out_shape[0] * cout * out_shape[2] * out_shape[3] * out_shape[4]);
    const long P = static_cast<long>(pad);
    for (std::size_t b = 0; b < s[0]; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t h = 0; h < out_shape[2]; ++h)
                for (std::size_t w = 0; w < out_shape[3]; ++w)
                    for (std::size_t d = 0; d < out_shape[4]; ++d) {
                        double acc = 0.0;
                        for (std::size_t ci = 0; ci < s[1]; ++ci)
                            for (std::size_t a = 0; a < k; ++a)
                                for (std::size_t bb = 0; bb < k; ++bb)
                                    for (std::size_t cc = 0; cc < k; ++cc) {
                                        ++multiplies;
                                        const long ih = static_cast<long>(h * stride + a) - P;
                                        const long iw = static_cast<long>(w * stride + bb) - P;
                                        const long id = static_cast<long>(d * stride + cc) - P;
                                        if (ih < 0 || iw < 0 || id < 0 || ih >= static_cast<long>(s[2]) ||
                                            iw >= static_cast<long>(s[3]) || id >= static_cast<long>(s[4]))
                                            continue;
                                        acc += weight[(((co * s[1] + ci) * k + a) * k + bb) * k + cc] *
                                               x[vidx(s, b, ci, static_cast<std::size_t>(ih),
                                                      static_cast<std::size_t>(iw), static_cast<std::size_t>(id))];
                                    }
                        out[vidx(out_shape, b, co, h, w, d)] = acc + bias[co];
                    }
    return out;
}

}  // namespace dcvlm::testing

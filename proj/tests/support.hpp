#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "bt/tensor.hpp"

namespace bt::testing {

inline Tensor random_normal(Shape shape, std::uint64_t seed, float stddev = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, stddev);
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = d(rng);
    return t;
}

inline Tensor random_uniform(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(lo, hi);
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = d(rng);
    return t;
}

// max |a - b| / max(1, max |b|)
inline double rel_error(const Tensor& a, const Tensor& b) {
    double diff = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - b[i]));
        scale = std::max(scale, std::fabs(static_cast<double>(b[i])));
    }
    return diff / scale;
}

// Direct nested-loop convolution, [N,C,H,W] * [F,C,kh,kw].
inline Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor y({n, f, oh, ow});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < f; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double s = 0.0;
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const auto yy = static_cast<std::ptrdiff_t>(i * stride + u) - static_cast<std::ptrdiff_t>(pad);
                                const auto xx = static_cast<std::ptrdiff_t>(j * stride + v) - static_cast<std::ptrdiff_t>(pad);
                                if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
                                    xx >= static_cast<std::ptrdiff_t>(wd))
                                    continue;
                                s += static_cast<double>(w[((o * c + ch) * kh + u) * kw + v]) *
                                     x[((b * c + ch) * h + static_cast<std::size_t>(yy)) * wd + static_cast<std::size_t>(xx)];
                            }
                    y[((b * f + o) * oh + i) * ow + j] = static_cast<float>(s);
                }
    return y;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace bt::testing

#pragma once

#include <cstddef>
#include <string>

#include "bt/error.hpp"
#include "bt/tensor.hpp"

namespace bt::detail {

struct ConvGeometry {
    std::size_t batch, channels, in_h, in_w;
    std::size_t kernel_h, kernel_w, stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch_size() const noexcept { return channels * kernel_h * kernel_w; }
    std::size_t locations() const noexcept { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& input, std::size_t kernel_h, std::size_t kernel_w,
                                  std::size_t stride, std::size_t padding) {
    if (input.size() != 4) throw InvalidInput("conv input must be [N, C, H, W]");
    if (stride == 0) throw InvalidInput("conv stride must be >= 1");
    if (kernel_h == 0 || kernel_w == 0) throw InvalidInput("conv kernel must be non-empty");
    if (padding >= kernel_h || padding >= kernel_w)
        throw InvalidInput("unsupported conv padding " + std::to_string(padding) +
                           " for kernel " + std::to_string(kernel_h) + "x" +
                           std::to_string(kernel_w));
    ConvGeometry g{input[0], input[1], input[2], input[3], kernel_h, kernel_w, stride, padding,
                   0, 0};
    if (g.in_h + 2 * padding < kernel_h || g.in_w + 2 * padding < kernel_w)
        throw InvalidInput("conv input smaller than kernel");
    g.out_h = (g.in_h + 2 * padding - kernel_h) / stride + 1;
    g.out_w = (g.in_w + 2 * padding - kernel_w) / stride + 1;
    return g;
}

// col is [C*kH*kW, outH*outW] for a single image.
inline void im2col(const float* image, const ConvGeometry& g, float* col) {
    const std::size_t l = g.locations();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                float* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * l;
                const float* plane = image + c * g.in_h * g.in_w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    float* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = 0.0f;
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                                      ? 0.0f
                                      : src[ix];
                    }
                }
            }
}

// Scatter-adds col back into image (adjoint of im2col).
inline void col2im(const float* col, const ConvGeometry& g, float* image) {
    const std::size_t l = g.locations();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const float* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * l;
                float* plane = image + c * g.in_h * g.in_w;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    float* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.padding);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w))
                            dst[ix] += row[oy * g.out_w + ox];
                    }
                }
            }
}

}  // namespace bt::detail

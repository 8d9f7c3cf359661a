#include "bt/data/augment.hpp"

#include <algorithm>

#include "bt/error.hpp"

namespace bt::data {

void AugmentPolicy::validate(std::size_t height, std::size_t width) const {
    if (cutout && (cutout_size == 0 || cutout_size >= height || cutout_size >= width))
        throw InvalidInput("cutout hole must be smaller than the image");
}

Tensor augment(const Tensor& batch, const AugmentPolicy& policy, Rng& rng) {
    if (batch.rank() != 4) throw InvalidInput("augment expects [N, C, H, W]");
    const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    policy.validate(h, w);
    if (!policy.any()) return batch;

    Tensor out = batch;
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < n; ++i) {
        float* img = out.data() + i * c * plane;
        if (policy.random_crop && policy.crop_pad > 0) {
            const auto pad = static_cast<std::ptrdiff_t>(policy.crop_pad);
            std::uniform_int_distribution<std::ptrdiff_t> off(-pad, pad);
            const std::ptrdiff_t dy = off(rng), dx = off(rng);
            const float* src = batch.data() + i * c * plane;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                            sx < static_cast<std::ptrdiff_t>(w);
                        img[ch * plane + y * w + x] =
                            inside ? src[ch * plane + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)]
                                   : 0.0f;
                    }
        }
        if (policy.cutout) {
            const std::size_t s = policy.cutout_size;
            std::uniform_int_distribution<std::size_t> oy(0, h - s), ox(0, w - s);
            const std::size_t y0 = oy(rng), x0 = ox(rng);
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = y0; y < y0 + s; ++y)
                    std::fill_n(img + ch * plane + y * w + x0, s, 0.0f);
        }
    }
    return out;
}

}  // namespace bt::data

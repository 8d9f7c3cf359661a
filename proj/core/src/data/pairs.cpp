#include "bt/data/pairs.hpp"

#include <algorithm>
#include <cmath>

#include "bt/data/image.hpp"
#include "bt/error.hpp"

namespace bt::data {

namespace {

void check_image(const Tensor& y) {
    if (y.rank() != 3 || y.dim(0) != 1) throw InvalidInput("expected a [1, H, W] luma image");
}

std::vector<std::size_t> grid(std::size_t extent, std::size_t patch, std::size_t stride) {
    std::vector<std::size_t> at;
    for (std::size_t p = 0; p + patch <= extent; p += stride) at.push_back(p);
    return at;
}

void copy_window(const Tensor& src, std::size_t y0, std::size_t x0, std::size_t size,
                 std::vector<float>& dst) {
    const std::size_t w = src.dim(2);
    for (std::size_t y = 0; y < size; ++y) {
        const float* row = src.data() + (y0 + y) * w + x0;
        dst.insert(dst.end(), row, row + size);
    }
}

}  // namespace

void PatchPairSet::validate() const {
    if (inputs.rank() != 4 || targets.rank() != 4 || inputs.dim(0) != targets.dim(0))
        throw InvalidInput("patch pair count mismatch");
    const std::size_t s = degradation.kind == Degradation::Kind::Downscale ? degradation.scale : 1;
    if (targets.dim(2) != inputs.dim(2) * s || targets.dim(3) != inputs.dim(3) * s)
        throw InvalidInput("target patch size must be input size times scale");
}

PatchPairSet make_sr_pairs(const std::vector<Tensor>& y_images, std::size_t scale,
                           std::size_t patch, std::size_t stride) {
    if (scale < 2 || scale > 4) throw InvalidInput("SR scale must be 2, 3 or 4");
    if (patch == 0 || stride == 0) throw InvalidInput("patch and stride must be positive");
    std::vector<float> in, tg;
    std::size_t count = 0;
    for (const auto& img : y_images) {
        check_image(img);
        const Tensor hr = crop_to_multiple(img, scale);
        const std::size_t lh = hr.dim(1) / scale, lw = hr.dim(2) / scale;
        if (patch > lh || patch > lw) throw InvalidInput("patch larger than image");
        const Tensor lr = resize_bicubic(hr, lh, lw, true);
        for (std::size_t y : grid(lh, patch, stride))
            for (std::size_t x : grid(lw, patch, stride)) {
                copy_window(lr, y, x, patch, in);
                copy_window(hr, y * scale, x * scale, patch * scale, tg);
                ++count;
            }
    }
    if (count == 0) throw InvalidInput("no images given");
    for (float& v : in) v = std::clamp(v, 0.0f, 1.0f);
    PatchPairSet set{Tensor({count, 1, patch, patch}, std::move(in)),
                     Tensor({count, 1, patch * scale, patch * scale}, std::move(tg)),
                     {Degradation::Kind::Downscale, scale, 0.0f}};
    return set;
}

Tensor add_clipped_noise(const Tensor& y, float sigma, Rng& rng) {
    if (!(sigma > 0.0f && sigma < 1.0f)) throw InvalidInput("noise sigma must lie in (0, 1)");
    std::normal_distribution<double> noise(0.0, sigma);
    Tensor out = y;
    for (float& v : out.values()) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
    return out;
}

PatchPairSet make_noise_pairs(const std::vector<Tensor>& y_images, float sigma, std::size_t patch,
                              std::size_t stride, Rng& rng) {
    if (!(sigma > 0.0f && sigma < 1.0f)) throw InvalidInput("noise sigma must lie in (0, 1)");
    if (patch == 0 || stride == 0) throw InvalidInput("patch and stride must be positive");
    std::vector<float> in, tg;
    std::size_t count = 0;
    for (const auto& img : y_images) {
        check_image(img);
        if (patch > img.dim(1) || patch > img.dim(2)) throw InvalidInput("patch larger than image");
        const Tensor noisy = add_clipped_noise(img, sigma, rng);
        for (std::size_t y : grid(img.dim(1), patch, stride))
            for (std::size_t x : grid(img.dim(2), patch, stride)) {
                copy_window(noisy, y, x, patch, in);
                copy_window(img, y, x, patch, tg);
                ++count;
            }
    }
    if (count == 0) throw InvalidInput("no images given");
    return {Tensor({count, 1, patch, patch}, std::move(in)),
            Tensor({count, 1, patch, patch}, std::move(tg)),
            {Degradation::Kind::Noise, 1, sigma}};
}

}  // namespace bt::data

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "bt/tensor.hpp"

namespace bt::data {

/// 8-bit interleaved image, row-major, `channels` in {1, 3, 4}.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Decodes PNG (8/16-bit, any colour type) or uncompressed 24/32-bit BMP.
Image load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& image);
void save_bmp(const std::filesystem::path& path, const Image& image);

/// All .png/.bmp files in `dir`, sorted by file name.
std::vector<Image> load_image_dir(const std::filesystem::path& dir);

/// Luma with BT.601 weights, [1, H, W]. Values stay in 0..255 unless
/// `normalized`, which divides by 255.
Tensor rgb_to_y(const Image& image, bool normalized = false);

/// Returned for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / mse).
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Same, ignoring `border` pixels on each side of the last two dimensions.
double psnr_shaved(const Tensor& a, const Tensor& b, std::size_t border, double peak = 1.0);

/// Catmull-Rom (a = -0.5) resampling over the last two dimensions with
/// pixel-centre alignment. With `antialias`, downscaling widens the kernel
/// by the scale factor.
Tensor resize_bicubic(const Tensor& x, std::size_t out_h, std::size_t out_w, bool antialias = true);

/// Crops the last two dimensions to the largest multiple of `scale`.
Tensor crop_to_multiple(const Tensor& x, std::size_t scale);

/// Mean Y-channel PSNR of bicubic down/up-scaling against the originals,
/// with `scale` border pixels excluded.
double bicubic_baseline_psnr(const std::vector<Image>& images, std::size_t scale);

}  // namespace bt::data

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bt/tensor.hpp"

namespace bt::data {

/// N x C x H x W 8-bit images with integer labels.
struct LabeledImageSet {
    std::size_t count = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t class_count = 0;
    std::vector<std::uint8_t> pixels;  // planar per image: [N][C][H][W]
    std::vector<std::int32_t> labels;

    std::size_t image_size() const noexcept { return channels * height * width; }
    /// Throws FormatError if counts or labels are inconsistent.
    void validate() const;
    /// Images [begin, end) scaled to [0, 1] as [n, C, H, W].
    Tensor to_tensor(std::size_t begin, std::size_t end) const;
    Tensor to_tensor() const { return to_tensor(0, count); }
    /// First `n` samples (all if n == 0 or n >= count).
    LabeledImageSet head(std::size_t n) const;

    friend bool operator==(const LabeledImageSet&, const LabeledImageSet&) = default;
};

/// Raw IDX array: big-endian dims, element type code 0x08 (unsigned byte).
struct IdxArray {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

/// Reads an IDX file, transparently gunzipping `.gz` content.
IdxArray read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Pairs an IDX image file (magic 0x00000803) with a label file (0x00000801).
LabeledImageSet load_idx(const std::filesystem::path& images,
                         const std::filesystem::path& labels, std::size_t class_count = 10);
void save_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const LabeledImageSet& set);

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Concatenates CIFAR-10 binary batches (1 label byte + 3x32x32 pixels per record).
LabeledImageSet load_cifar_binary(std::span<const std::filesystem::path> files);
LabeledImageSet load_cifar_binary(const std::filesystem::path& file);
void save_cifar_binary(const std::filesystem::path& file, const LabeledImageSet& set);

}  // namespace bt::data

#pragma once

#include <cstddef>
#include <cstdint>

#include "bt/regularization.hpp"
#include "bt/tensor.hpp"

namespace bt::data {

struct AugmentPolicy {
    bool random_crop = false;
    std::size_t crop_pad = 4;
    bool cutout = false;
    std::size_t cutout_size = 8;
    std::uint64_t seed = 0;

    bool any() const noexcept { return random_crop || cutout; }
    /// Throws InvalidInput if the hole does not fit the image.
    void validate(std::size_t height, std::size_t width) const;
};

/// Zero-pads each [N, C, H, W] image by crop_pad and crops a random H x W
/// window, then zeroes one cutout_size square lying fully inside the image.
Tensor augment(const Tensor& batch, const AugmentPolicy& policy, Rng& rng);

}  // namespace bt::data

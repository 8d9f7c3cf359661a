#pragma once

#include <cstddef>
#include <vector>

#include "bt/regularization.hpp"
#include "bt/tensor.hpp"

namespace bt::data {

struct Degradation {
    enum class Kind { Downscale, Noise } kind = Kind::Downscale;
    std::size_t scale = 2;
    float sigma = 0.0f;
};

/// Y-channel patches in [0, 1]; inputs [N, 1, p, p], targets [N, 1, p*s, p*s]
/// (s = 1 for noise).
struct PatchPairSet {
    Tensor inputs;
    Tensor targets;
    Degradation degradation;

    std::size_t size() const noexcept { return inputs.empty() ? 0 : inputs.dim(0); }
    void validate() const;
};

/// Each [1, H, W] image is cropped to a multiple of `scale`, bicubic
/// downscaled, and cut on a regular grid into `patch` x `patch` LR inputs
/// with `stride` (in LR pixels); targets are the matching HR windows.
PatchPairSet make_sr_pairs(const std::vector<Tensor>& y_images, std::size_t scale,
                           std::size_t patch, std::size_t stride);

/// Input clip(Y + N(0, sigma^2), 0, 1), target Y, on a `patch` grid.
PatchPairSet make_noise_pairs(const std::vector<Tensor>& y_images, float sigma,
                              std::size_t patch, std::size_t stride, Rng& rng);

/// Whole-image noisy copy, as used for evaluation.
Tensor add_clipped_noise(const Tensor& y, float sigma, Rng& rng);

}  // namespace bt::data

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bt/quantizer.hpp"
#include "bt/tensor.hpp"

namespace bt {

using Rng = std::mt19937_64;

/// Which stage scale sets the noise deviation for two-stage schemes.
enum class NoiseScale : std::uint8_t { Alpha1 = 0, Alpha2 = 1, AlphaOpt = 2 };

struct TransitionRegConfig {
    float lambda = 0.1f;
    float noise_gain = 0.1f;
    bool enabled = false;
    std::uint64_t rng_seed = 0;
    // Measure the L1 divergence on dequantized values instead of integer codes.
    bool dequantized_distance = false;
    NoiseScale noise_scale = NoiseScale::Alpha1;

    void validate() const;
};

/// W + noise_gain * eps with eps ~ N(0, alpha^2) elementwise.
Tensor corrupt(const Tensor& w, float alpha, float noise_gain, Rng& rng);

/// Per-scale-group variant: group g (contiguous, numel / alphas.size()
/// elements) draws noise with deviation alphas[g].
Tensor corrupt(const Tensor& w, std::span<const float> group_alpha, float noise_gain,
               Rng& rng);

struct TransitionPenalty {
    double penalty = 0.0;  // mean |q(W) - q(W~)| per element
    QuantTensor quantized;
    QuantTensor corrupted;
    // sign(q(W) - q(W~)) per element, in {-1, 0, 1}; drives the surrogate gradient.
    std::vector<std::int8_t> divergence_sign;
};

/// Quantizes W and a noise-corrupted copy under the same scheme and returns
/// their mean elementwise L1 distance. The run draws from `rng`.
TransitionPenalty transition_penalty(const Tensor& w, const QuantScheme& scheme,
                                     const TransitionRegConfig& reg, Rng& rng);

/// Weight values at which the quantized code of group `group` changes.
std::vector<float> transition_points(const QuantTensor& q, std::size_t group);

/// Mean over elements of the distance to the nearest transition point.
double mean_distance_to_transition(const Tensor& w, const QuantScheme& scheme);
double mean_distance_to_transition(const Tensor& w, const QuantTensor& q);

}  // namespace bt

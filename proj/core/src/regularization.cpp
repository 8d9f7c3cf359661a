#include "bt/regularization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bt/error.hpp"

namespace bt {

namespace {

std::span<const float> noise_scales(const QuantTensor& q, NoiseScale which) {
    const bool two_stage = q.alpha2.size() == q.alpha1.size() && !q.alpha2.empty();
    if (!two_stage) return q.alpha1;
    switch (which) {
        case NoiseScale::Alpha1: return q.alpha1;
        case NoiseScale::Alpha2: return q.alpha2;
        case NoiseScale::AlphaOpt: return q.alpha;
    }
    return q.alpha1;
}

}  // namespace

void TransitionRegConfig::validate() const {
    if (!(lambda >= 0.0f) || !std::isfinite(lambda)) throw InvalidInput("reg.lambda must be >= 0");
    if (!(noise_gain >= 0.0f) || !std::isfinite(noise_gain))
        throw InvalidInput("reg.noise_gain must be >= 0");
}

Tensor corrupt(const Tensor& w, float alpha, float noise_gain, Rng& rng) {
    const float a[] = {alpha};
    return corrupt(w, std::span<const float>(a), noise_gain, rng);
}

Tensor corrupt(const Tensor& w, std::span<const float> group_alpha, float noise_gain,
               Rng& rng) {
    if (group_alpha.empty() || w.numel() % group_alpha.size() != 0)
        throw InvalidInput("corrupt: scale groups do not divide the tensor");
    for (float a : group_alpha)
        if (!(a >= 0.0f)) throw InvalidInput("corrupt: alpha must be >= 0");
    if (!(noise_gain >= 0.0f)) throw InvalidInput("corrupt: noise_gain must be >= 0");

    Tensor out = w;
    const std::size_t gs = w.numel() / group_alpha.size();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t g = 0; g < group_alpha.size(); ++g) {
        const double sigma = static_cast<double>(noise_gain) * group_alpha[g];
        if (sigma == 0.0) continue;
        for (std::size_t i = g * gs; i < (g + 1) * gs; ++i)
            out[i] = static_cast<float>(w[i] + sigma * normal(rng));
    }
    return out;
}

TransitionPenalty transition_penalty(const Tensor& w, const QuantScheme& scheme,
                                     const TransitionRegConfig& reg, Rng& rng) {
    if (!scheme.quantizes())
        throw InvalidInput("transition_penalty: scheme full has no transitions");
    reg.validate();

    TransitionPenalty out;
    out.quantized = quantize(w, scheme);
    const Tensor noisy = corrupt(w, noise_scales(out.quantized, reg.noise_scale),
                                 reg.noise_gain, rng);
    out.corrupted = quantize(noisy, scheme);

    const std::size_t n = w.numel();
    out.divergence_sign.resize(n);
    double sum = 0.0;
    if (reg.dequantized_distance) {
        const Tensor a = dequantize(out.quantized);
        const Tensor b = dequantize(out.corrupted);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(a[i]) - b[i];
            sum += std::fabs(d);
            out.divergence_sign[i] = static_cast<std::int8_t>((d > 0) - (d < 0));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const int d = out.quantized.effective_code(i) - out.corrupted.effective_code(i);
            sum += std::abs(d);
            out.divergence_sign[i] = static_cast<std::int8_t>((d > 0) - (d < 0));
        }
    }
    out.penalty = sum / static_cast<double>(n);
    return out;
}

std::vector<float> transition_points(const QuantTensor& q, std::size_t group) {
    std::vector<float> points;
    switch (q.scheme.kind) {
        case SchemeKind::Binary: points = {0.0f}; break;
        case SchemeKind::Ternary: points = {-q.delta.at(group), q.delta.at(group)}; break;
        case SchemeKind::BT:
        case SchemeKind::BinaryPair: {
            // Stage 1 switches where the residual W - a1*sign(W) crosses its
            // own thresholds, on whichever sign branch that point lies.
            const float a1 = q.alpha1.at(group);
            const float d2 = q.scheme.kind == SchemeKind::BT ? q.delta.at(group) : 0.0f;
            points.push_back(0.0f);
            for (float t : {a1 - d2, a1 + d2})
                if (t >= 0.0f) points.push_back(t);
            for (float t : {-a1 - d2, -a1 + d2})
                if (t < 0.0f) points.push_back(t);
            std::sort(points.begin(), points.end());
            points.erase(std::unique(points.begin(), points.end()), points.end());
            break;
        }
        case SchemeKind::Full: throw InvalidInput("transition_points: scheme full");
    }
    return points;
}

double mean_distance_to_transition(const Tensor& w, const QuantScheme& scheme) {
    if (!scheme.quantizes())
        throw InvalidInput("mean_distance_to_transition: scheme full has no transitions");
    return mean_distance_to_transition(w, quantize(w, scheme));
}

double mean_distance_to_transition(const Tensor& w, const QuantTensor& q) {
    if (w.shape() != q.shape) throw InvalidInput("mean_distance_to_transition: shape mismatch");
    const std::size_t gs = q.group_size();
    double sum = 0.0;
    for (std::size_t g = 0; g < q.group_count(); ++g) {
        const auto points = transition_points(q, g);
        for (std::size_t i = g * gs; i < (g + 1) * gs; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (float t : points)
                best = std::min(best, std::fabs(static_cast<double>(w[i]) - t));
            sum += best;
        }
    }
    return sum / static_cast<double>(w.numel());
}

}  // namespace bt

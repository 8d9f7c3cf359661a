#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "bt/tensor.hpp"

namespace bt {

enum class SchemeKind : std::uint8_t {
    Full = 0,
    Binary = 1,
    Ternary = 2,
    BT = 3,
    // Two binary stages through the residual chain. Diagnostic only: it is
    // the ternary-equivalent construction, not a training scheme.
    BinaryPair = 4,
};

enum class Granularity : std::uint8_t { PerTensor = 0, PerOutputChannel = 1 };

struct QuantScheme {
    SchemeKind kind = SchemeKind::Full;
    float ternary_delta_coeff = 0.66f;
    Granularity granularity = Granularity::PerTensor;
    // TWN convention: ternary scale averages |W| over nonzero codes only.
    bool ternary_alpha_nonzero_only = false;

    bool quantizes() const noexcept { return kind != SchemeKind::Full; }
    void validate() const;

    friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

/// "full", "bwn", "twn", "bt" (and "pair" for the diagnostic scheme).
std::string_view scheme_name(SchemeKind kind) noexcept;
SchemeKind parse_scheme(std::string_view name);

using CodePlane = std::vector<std::int8_t>;

/// Quantized weights: one or two integer code planes plus per-group scales.
///
/// Scale groups are contiguous: one group for PerTensor, shape[0] groups of
/// numel/shape[0] elements for PerOutputChannel.
struct QuantTensor {
    Shape shape;
    QuantScheme scheme;
    std::vector<CodePlane> planes;
    std::vector<float> alpha;   // effective scale per group
    std::vector<float> alpha1;  // E[|W|] per group
    std::vector<float> alpha2;  // E[|E1|] per group; two-stage schemes only
    std::vector<float> delta;   // ternary threshold per group (on W or on E1)

    std::size_t numel() const noexcept { return planes.empty() ? 0 : planes[0].size(); }
    std::size_t group_count() const noexcept { return alpha.size(); }
    std::size_t group_size() const noexcept {
        return alpha.empty() ? 0 : numel() / alpha.size();
    }

    /// Sum of the code planes at element i, in {-2..2}.
    int effective_code(std::size_t i) const noexcept;
    std::vector<std::int8_t> effective_codes() const;

    /// Groups whose lower bound (a1 - a2) exceeds the upper bound 0.5(a1 + a2).
    std::size_t flipped_bound_groups() const noexcept;
    std::size_t nonpositive_scale_groups() const noexcept;

    /// Throws InvalidInput if plane count, code ranges or scale counts break
    /// the invariants of `scheme.kind`.
    void validate() const;
};

struct QuantDiagnostics {
    double mse = 0.0;       // ||W - W_hat||^2 / n
    double l2 = 0.0;        // ||W - W_hat||
    double sparsity = 0.0;  // fraction of zero effective codes
    // Counts for effective code levels -2..2 (index = level + 2).
    std::array<std::size_t, 5> level_histogram{};
};

/// Number of scale groups for `shape`; throws on an empty group.
std::size_t scale_group_count(const Shape& shape, Granularity granularity);

/// W_b = sign(W) with sign(0) = +1, alpha = E[|W|] per group.
QuantTensor binarize(const Tensor& w, Granularity granularity = Granularity::PerTensor);

/// Threshold quantizer: +1 above delta, -1 below -delta, 0 for |W| <= delta,
/// with delta = delta_coeff * E[|W|] and alpha = E[|W|] per group.
QuantTensor ternarize(const Tensor& w, float delta_coeff = 0.66f,
                      Granularity granularity = Granularity::PerTensor,
                      bool alpha_nonzero_only = false);

/// E = W - dequantize(Q).
Tensor residual(const Tensor& w, const QuantTensor& q);

/// Combined scale for two residual stages: 0.75 a1 - 0.25 a2, the midpoint of
/// (a1 - a2) and 0.5 (a1 + a2).
float alpha_opt(float alpha1, float alpha2);

struct ScaleBounds {
    float lower;  // a1 - a2
    float upper;  // 0.5 (a1 + a2)
    bool ordered() const noexcept { return lower <= upper; }
};
ScaleBounds scale_bounds(float alpha1, float alpha2) noexcept;

/// Binary stage on W, ternary stage on the residual E1, shared scale alpha_opt.
QuantTensor bt_quantize(const Tensor& w, const QuantScheme& scheme);

/// Binary stage followed by a second binary stage on the residual; effective
/// codes take values in {-2, 0, 2}.
QuantTensor binary_residual_pair(const Tensor& w,
                                 Granularity granularity = Granularity::PerTensor);

/// Dispatches on scheme.kind; Full is rejected.
QuantTensor quantize(const Tensor& w, const QuantScheme& scheme);

Tensor dequantize(const QuantTensor& q);

QuantDiagnostics diagnostics(const Tensor& w, const QuantTensor& q);

}  // namespace bt

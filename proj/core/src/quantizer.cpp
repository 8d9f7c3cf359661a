#include "bt/quantizer.hpp"

#include <cmath>
#include <string>

#include "bt/error.hpp"

namespace bt {

namespace {

struct GroupRange {
    std::size_t begin;
    std::size_t end;
};

GroupRange group_range(std::size_t group, std::size_t group_size) {
    return {group * group_size, (group + 1) * group_size};
}

double mean_abs(std::span<const float> values) {
    double sum = 0.0;
    for (float v : values) sum += std::fabs(static_cast<double>(v));
    return sum / static_cast<double>(values.size());
}

QuantTensor make_shell(const Tensor& w, SchemeKind kind, Granularity granularity) {
    QuantTensor q;
    q.shape = w.shape();
    q.scheme.kind = kind;
    q.scheme.granularity = granularity;
    const std::size_t groups = scale_group_count(w.shape(), granularity);
    q.alpha.assign(groups, 0.0f);
    q.alpha1.assign(groups, 0.0f);
    return q;
}

// Sign plane and per-group E[|W|] of `w`.
void sign_stage(const Tensor& w, std::size_t groups, CodePlane& codes,
                std::vector<float>& scale) {
    const std::size_t gs = w.numel() / groups;
    codes.resize(w.numel());
    scale.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const auto [b, e] = group_range(g, gs);
        scale[g] = static_cast<float>(mean_abs(w.values().subspan(b, e - b)));
        for (std::size_t i = b; i < e; ++i) codes[i] = w[i] >= 0.0f ? 1 : -1;
    }
}

// Threshold plane of `w`; returns per-group E[|W|] in `mean_abs_out` and the
// thresholds in `delta`. With `nonzero_only`, `scale` averages |W| over the
// nonzero codes; otherwise scale = mean_abs_out.
void threshold_stage(const Tensor& w, std::size_t groups, float delta_coeff,
                     bool nonzero_only, CodePlane& codes, std::vector<float>& scale,
                     std::vector<float>& mean_abs_out, std::vector<float>& delta) {
    const std::size_t gs = w.numel() / groups;
    codes.resize(w.numel());
    scale.resize(groups);
    mean_abs_out.resize(groups);
    delta.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const auto [b, e] = group_range(g, gs);
        const float m = static_cast<float>(mean_abs(w.values().subspan(b, e - b)));
        const float d = delta_coeff * m;
        mean_abs_out[g] = m;
        delta[g] = d;
        double nz_sum = 0.0;
        std::size_t nz = 0;
        for (std::size_t i = b; i < e; ++i) {
            const float v = w[i];
            if (v > d) {
                codes[i] = 1;
            } else if (v < -d) {
                codes[i] = -1;
            } else {
                codes[i] = 0;
                continue;
            }
            nz_sum += std::fabs(static_cast<double>(v));
            ++nz;
        }
        if (nonzero_only)
            scale[g] = nz ? static_cast<float>(nz_sum / static_cast<double>(nz)) : 0.0f;
        else
            scale[g] = m;
    }
}

template <typename SecondStage>
QuantTensor two_stage(const Tensor& w, SchemeKind kind, Granularity granularity,
                      SecondStage&& second) {
    QuantTensor q = make_shell(w, kind, granularity);
    const std::size_t groups = q.alpha.size();
    q.planes.resize(2);
    sign_stage(w, groups, q.planes[0], q.alpha1);

    QuantTensor stage0;
    stage0.shape = w.shape();
    stage0.scheme.kind = SchemeKind::Binary;
    stage0.scheme.granularity = granularity;
    stage0.planes = {q.planes[0]};
    stage0.alpha = q.alpha1;
    const Tensor e1 = residual(w, stage0);

    second(e1, groups, q);
    for (std::size_t g = 0; g < groups; ++g) q.alpha[g] = alpha_opt(q.alpha1[g], q.alpha2[g]);
    return q;
}

}  // namespace

void QuantScheme::validate() const {
    if (!(ternary_delta_coeff > 0.0f) || !std::isfinite(ternary_delta_coeff))
        throw InvalidInput("ternary_delta_coeff must be > 0");
    if (static_cast<unsigned>(kind) > static_cast<unsigned>(SchemeKind::BinaryPair))
        throw InvalidInput("unknown scheme kind");
}

std::string_view scheme_name(SchemeKind kind) noexcept {
    switch (kind) {
        case SchemeKind::Full: return "full";
        case SchemeKind::Binary: return "bwn";
        case SchemeKind::Ternary: return "twn";
        case SchemeKind::BT: return "bt";
        case SchemeKind::BinaryPair: return "pair";
    }
    return "unknown";
}

SchemeKind parse_scheme(std::string_view name) {
    if (name == "full") return SchemeKind::Full;
    if (name == "bwn" || name == "binary") return SchemeKind::Binary;
    if (name == "twn" || name == "ternary") return SchemeKind::Ternary;
    if (name == "bt") return SchemeKind::BT;
    if (name == "pair") return SchemeKind::BinaryPair;
    throw InvalidInput("unknown quantization scheme '" + std::string(name) +
                       "' (expected full|bwn|twn|bt)");
}

int QuantTensor::effective_code(std::size_t i) const noexcept {
    int c = 0;
    for (const auto& p : planes) c += p[i];
    return c;
}

std::vector<std::int8_t> QuantTensor::effective_codes() const {
    std::vector<std::int8_t> out(numel(), 0);
    for (const auto& p : planes)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int8_t>(out[i] + p[i]);
    return out;
}

std::size_t QuantTensor::flipped_bound_groups() const noexcept {
    if (alpha2.size() != alpha1.size()) return 0;
    std::size_t n = 0;
    for (std::size_t g = 0; g < alpha1.size(); ++g)
        if (!scale_bounds(alpha1[g], alpha2[g]).ordered()) ++n;
    return n;
}

std::size_t QuantTensor::nonpositive_scale_groups() const noexcept {
    std::size_t n = 0;
    for (float a : alpha)
        if (a <= 0.0f) ++n;
    return n;
}

void QuantTensor::validate() const {
    const std::size_t n = shape_numel(shape);
    if (n == 0) throw InvalidInput("quantized tensor has empty shape");
    const std::size_t expected_planes =
        (scheme.kind == SchemeKind::BT || scheme.kind == SchemeKind::BinaryPair) ? 2 : 1;
    if (scheme.kind == SchemeKind::Full) throw InvalidInput("quantized tensor with scheme full");
    if (planes.size() != expected_planes)
        throw InvalidInput("quantized tensor has " + std::to_string(planes.size()) +
                           " planes, scheme expects " + std::to_string(expected_planes));
    for (std::size_t p = 0; p < planes.size(); ++p) {
        if (planes[p].size() != n) throw InvalidInput("code plane length mismatch");
        const bool binary_plane =
            scheme.kind != SchemeKind::Ternary && (p == 0 || scheme.kind == SchemeKind::BinaryPair);
        for (auto c : planes[p]) {
            if (binary_plane ? (c != 1 && c != -1) : (c < -1 || c > 1))
                throw InvalidInput("code out of range for plane " + std::to_string(p));
        }
    }
    const std::size_t groups = scale_group_count(shape, scheme.granularity);
    if (alpha.size() != groups) throw InvalidInput("scale count does not match granularity");
}

std::size_t scale_group_count(const Shape& shape, Granularity granularity) {
    const std::size_t n = shape_numel(shape);
    if (n == 0) throw InvalidInput("empty scale group: tensor has no elements");
    if (granularity == Granularity::PerTensor) return 1;
    if (shape[0] == 0 || n / shape[0] == 0)
        throw InvalidInput("empty scale group for per-channel granularity on shape " +
                           shape_to_string(shape));
    return shape[0];
}

QuantTensor binarize(const Tensor& w, Granularity granularity) {
    require_quantizable(w, "binarize");
    QuantTensor q = make_shell(w, SchemeKind::Binary, granularity);
    q.planes.resize(1);
    sign_stage(w, q.alpha.size(), q.planes[0], q.alpha1);
    q.alpha = q.alpha1;
    return q;
}

QuantTensor ternarize(const Tensor& w, float delta_coeff, Granularity granularity,
                      bool alpha_nonzero_only) {
    require_quantizable(w, "ternarize");
    if (!(delta_coeff > 0.0f)) throw InvalidInput("ternarize: delta_coeff must be > 0");
    QuantTensor q = make_shell(w, SchemeKind::Ternary, granularity);
    q.scheme.ternary_delta_coeff = delta_coeff;
    q.scheme.ternary_alpha_nonzero_only = alpha_nonzero_only;
    q.planes.resize(1);
    threshold_stage(w, q.alpha.size(), delta_coeff, alpha_nonzero_only, q.planes[0],
                    q.alpha, q.alpha1, q.delta);
    return q;
}

Tensor residual(const Tensor& w, const QuantTensor& q) {
    if (w.shape() != q.shape)
        throw InvalidInput("residual: shape mismatch " + shape_to_string(w.shape()) + " vs " +
                           shape_to_string(q.shape));
    Tensor e = dequantize(q);
    for (std::size_t i = 0; i < e.numel(); ++i) e[i] = w[i] - e[i];
    return e;
}

float alpha_opt(float alpha1, float alpha2) {
    if (!(alpha1 >= 0.0f) || !(alpha2 >= 0.0f))
        throw InvalidInput("alpha_opt: scales must be >= 0");
    return static_cast<float>(0.75 * alpha1 - 0.25 * static_cast<double>(alpha2));
}

ScaleBounds scale_bounds(float alpha1, float alpha2) noexcept {
    return {alpha1 - alpha2, 0.5f * (alpha1 + alpha2)};
}

QuantTensor bt_quantize(const Tensor& w, const QuantScheme& scheme) {
    require_quantizable(w, "bt_quantize");
    scheme.validate();
    QuantTensor q = two_stage(
        w, SchemeKind::BT, scheme.granularity,
        [&](const Tensor& e1, std::size_t groups, QuantTensor& out) {
            std::vector<float> e1_mean_abs;
            threshold_stage(e1, groups, scheme.ternary_delta_coeff,
                            scheme.ternary_alpha_nonzero_only, out.planes[1], out.alpha2,
                            e1_mean_abs, out.delta);
        });
    q.scheme = scheme;
    q.scheme.kind = SchemeKind::BT;
    return q;
}

QuantTensor binary_residual_pair(const Tensor& w, Granularity granularity) {
    require_quantizable(w, "binary_residual_pair");
    return two_stage(w, SchemeKind::BinaryPair, granularity,
                     [](const Tensor& e1, std::size_t groups, QuantTensor& out) {
                         sign_stage(e1, groups, out.planes[1], out.alpha2);
                     });
}

QuantTensor quantize(const Tensor& w, const QuantScheme& scheme) {
    scheme.validate();
    switch (scheme.kind) {
        case SchemeKind::Binary: return binarize(w, scheme.granularity);
        case SchemeKind::Ternary:
            return ternarize(w, scheme.ternary_delta_coeff, scheme.granularity,
                             scheme.ternary_alpha_nonzero_only);
        case SchemeKind::BT: return bt_quantize(w, scheme);
        case SchemeKind::BinaryPair: return binary_residual_pair(w, scheme.granularity);
        case SchemeKind::Full: break;
    }
    throw InvalidInput("quantize: scheme full applies no quantization");
}

Tensor dequantize(const QuantTensor& q) {
    Tensor out(q.shape);
    const std::size_t groups = q.group_count();
    if (groups == 0 || q.planes.empty()) throw InvalidInput("dequantize: empty quantized tensor");
    const std::size_t gs = q.group_size();
    for (std::size_t g = 0; g < groups; ++g) {
        const auto [b, e] = group_range(g, gs);
        for (std::size_t i = b; i < e; ++i)
            out[i] = q.alpha[g] * static_cast<float>(q.effective_code(i));
    }
    return out;
}

QuantDiagnostics diagnostics(const Tensor& w, const QuantTensor& q) {
    if (w.shape() != q.shape) throw InvalidInput("diagnostics: shape mismatch");
    const Tensor approx = dequantize(q);
    QuantDiagnostics d;
    double sq = 0.0;
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double diff = static_cast<double>(w[i]) - approx[i];
        sq += diff * diff;
        const int c = q.effective_code(i);
        if (c == 0) ++zeros;
        ++d.level_histogram[static_cast<std::size_t>(c + 2)];
    }
    const auto n = static_cast<double>(w.numel());
    d.mse = sq / n;
    d.l2 = std::sqrt(sq);
    d.sparsity = static_cast<double>(zeros) / n;
    return d;
}

}  // namespace bt

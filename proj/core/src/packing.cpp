#include "bt/packing.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <string>

#include "binary_io.hpp"
#include "bt/error.hpp"
#include "im2col.hpp"

namespace bt {

namespace {

constexpr char kMagic[5] = "BQT1";
constexpr std::size_t kWord = PackedPlane::word_size;

bool plane_is_ternary(SchemeKind kind, std::size_t plane) {
    return (kind == SchemeKind::Ternary && plane == 0) || (kind == SchemeKind::BT && plane == 1);
}

std::size_t plane_count(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::Binary:
        case SchemeKind::Ternary: return 1;
        case SchemeKind::BT:
        case SchemeKind::BinaryPair: return 2;
        case SchemeKind::Full: break;
    }
    throw FormatError("packed tensor cannot use scheme full");
}

std::uint64_t range_mask(std::size_t word, std::size_t begin, std::size_t end) {
    const std::size_t lo = word * kWord;
    const std::size_t from = begin > lo ? begin - lo : 0;
    const std::size_t to = end - lo >= kWord ? kWord : end - lo;
    const std::uint64_t upper = to == kWord ? ~std::uint64_t{0} : ((std::uint64_t{1} << to) - 1);
    const std::uint64_t lower = (std::uint64_t{1} << from) - 1;
    return upper & ~lower;
}

double masked_sum(std::uint64_t bits, std::size_t word_base, std::size_t begin,
                  const float* a) {
    double s = 0.0;
    while (bits) {
        const int b = std::countr_zero(bits);
        s += a[word_base + static_cast<std::size_t>(b) - begin];
        bits &= bits - 1;
    }
    return s;
}

// sum of code_i * a[i - begin] over i in [begin, end).
double plane_range_dot(const PackedPlane& pl, std::size_t begin, std::size_t end,
                       const float* a) {
    if (begin >= end) return 0.0;
    double plus = 0.0;
    double minus = 0.0;
    double total = 0.0;
    const bool ternary = pl.ternary();
    if (!ternary)
        for (std::size_t i = begin; i < end; ++i) total += a[i - begin];
    for (std::size_t w = begin / kWord; w <= (end - 1) / kWord; ++w) {
        const std::uint64_t range = range_mask(w, begin, end);
        const std::uint64_t sign = pl.sign_bits[w] & range;
        if (ternary) {
            const std::uint64_t nz = pl.nonzero_mask[w] & range;
            plus += masked_sum(sign & nz, w * kWord, begin, a);
            minus += masked_sum(~sign & nz, w * kWord, begin, a);
        } else {
            plus += masked_sum(sign, w * kWord, begin, a);
        }
    }
    return ternary ? plus - minus : (plus + plus) - total;
}

double group_alpha(const PackedQuantTensor& p, std::size_t element) {
    return p.alpha[element / p.group_size()];
}

}  // namespace

int PackedPlane::code(std::size_t i) const noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i % word_size);
    const std::size_t w = i / word_size;
    if (ternary() && !(nonzero_mask[w] & bit)) return 0;
    return (sign_bits[w] & bit) ? 1 : -1;
}

PackedPlane pack_plane(const CodePlane& codes, bool ternary) {
    PackedPlane pl;
    pl.length = codes.size();
    pl.sign_bits.assign(pl.word_count(), 0);
    if (ternary) pl.nonzero_mask.assign(pl.word_count(), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const std::uint64_t bit = std::uint64_t{1} << (i % kWord);
        const int c = codes[i];
        if (!ternary && c == 0) throw InvalidInput("pack: zero code in a binary plane");
        if (c > 0) pl.sign_bits[i / kWord] |= bit;
        if (ternary && c != 0) pl.nonzero_mask[i / kWord] |= bit;
    }
    return pl;
}

CodePlane unpack_plane(const PackedPlane& plane) {
    CodePlane codes(plane.length);
    for (std::size_t i = 0; i < plane.length; ++i) codes[i] = static_cast<std::int8_t>(plane.code(i));
    return codes;
}

std::size_t PackedQuantTensor::storage_bytes() const noexcept {
    std::size_t bytes = alpha.size() * sizeof(float);
    for (const auto& pl : planes) bytes += pl.storage_bytes();
    return bytes;
}

PackedQuantTensor pack(const QuantTensor& q) {
    q.validate();
    PackedQuantTensor p;
    p.shape = q.shape;
    p.scheme = q.scheme;
    p.alpha = q.alpha;
    for (std::size_t i = 0; i < q.planes.size(); ++i)
        p.planes.push_back(pack_plane(q.planes[i], plane_is_ternary(q.scheme.kind, i)));
    return p;
}

QuantTensor unpack(const PackedQuantTensor& p) {
    QuantTensor q;
    q.shape = p.shape;
    q.scheme = p.scheme;
    q.alpha = p.alpha;
    for (const auto& pl : p.planes) q.planes.push_back(unpack_plane(pl));
    return q;
}

float packed_dot(const PackedQuantTensor& p, std::span<const float> a) {
    if (a.size() != p.numel())
        throw InvalidInput("packed_dot: length mismatch " + std::to_string(a.size()) + " vs " +
                           std::to_string(p.numel()));
    const std::size_t gs = p.group_size();
    double acc = 0.0;
    for (std::size_t g = 0; g < p.alpha.size(); ++g) {
        double group = 0.0;
        for (const auto& pl : p.planes)
            group += plane_range_dot(pl, g * gs, (g + 1) * gs, a.data() + g * gs);
        acc += p.alpha[g] * group;
    }
    return static_cast<float>(acc);
}

Tensor packed_linear(const PackedQuantTensor& p, const Tensor& x) {
    if (p.shape.size() != 2 || x.rank() != 2 || x.dim(1) != p.shape[1])
        throw InvalidInput("packed_linear: shape mismatch " + shape_to_string(p.shape) + " vs " +
                           shape_to_string(x.shape()));
    const std::size_t out_features = p.shape[0];
    const std::size_t in_features = p.shape[1];
    if (p.group_size() % in_features != 0)
        throw InvalidInput("packed_linear: scale groups must cover whole rows");
    Tensor y({x.dim(0), out_features});
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        const float* row = x.data() + n * in_features;
        for (std::size_t o = 0; o < out_features; ++o) {
            const std::size_t begin = o * in_features;
            double acc = 0.0;
            for (const auto& pl : p.planes)
                acc += plane_range_dot(pl, begin, begin + in_features, row);
            y[n * out_features + o] = static_cast<float>(group_alpha(p, begin) * acc);
        }
    }
    return y;
}

Tensor packed_conv2d(const PackedQuantTensor& p, const Tensor& x, std::size_t stride,
                     std::size_t padding) {
    if (p.shape.size() != 4 || x.rank() != 4 || x.dim(1) != p.shape[1])
        throw InvalidInput("packed_conv2d: shape mismatch " + shape_to_string(p.shape) + " vs " +
                           shape_to_string(x.shape()));
    const detail::ConvGeometry geo =
        detail::conv_geometry(x.shape(), p.shape[2], p.shape[3], stride, padding);
    const std::size_t filters = p.shape[0];
    const std::size_t k = geo.patch_size();
    const std::size_t l = geo.locations();
    if (p.group_size() % k != 0)
        throw InvalidInput("packed_conv2d: scale groups must cover whole filters");

    bool any_binary = false;
    for (const auto& pl : p.planes) any_binary |= !pl.ternary();

    Tensor y({geo.batch, filters, geo.out_h, geo.out_w});
    std::vector<float> col(k * l);
    std::vector<double> column_sum(l);
    std::vector<double> acc(l);
    std::vector<double> plus(l);
    std::vector<double> minus(l);

    auto add_rows = [&](std::uint64_t bits, std::size_t element_base, std::size_t filter_base,
                        std::vector<double>& dst) {
        while (bits) {
            const std::size_t kk =
                element_base + static_cast<std::size_t>(std::countr_zero(bits)) - filter_base;
            const float* src = col.data() + kk * l;
            for (std::size_t j = 0; j < l; ++j) dst[j] += src[j];
            bits &= bits - 1;
        }
    };

    for (std::size_t n = 0; n < geo.batch; ++n) {
        detail::im2col(x.data() + n * geo.channels * geo.in_h * geo.in_w, geo, col.data());
        if (any_binary) {
            std::fill(column_sum.begin(), column_sum.end(), 0.0);
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t j = 0; j < l; ++j) column_sum[j] += col[kk * l + j];
        }
        for (std::size_t f = 0; f < filters; ++f) {
            const std::size_t begin = f * k;
            const std::size_t end = begin + k;
            std::fill(acc.begin(), acc.end(), 0.0);
            for (const auto& pl : p.planes) {
                std::fill(plus.begin(), plus.end(), 0.0);
                if (pl.ternary()) std::fill(minus.begin(), minus.end(), 0.0);
                for (std::size_t w = begin / kWord; w <= (end - 1) / kWord; ++w) {
                    const std::uint64_t range = range_mask(w, begin, end);
                    const std::uint64_t sign = pl.sign_bits[w] & range;
                    if (pl.ternary()) {
                        const std::uint64_t nz = pl.nonzero_mask[w] & range;
                        add_rows(sign & nz, w * kWord, begin, plus);
                        add_rows(~sign & nz, w * kWord, begin, minus);
                    } else {
                        add_rows(sign, w * kWord, begin, plus);
                    }
                }
                if (pl.ternary()) {
                    for (std::size_t j = 0; j < l; ++j) acc[j] += plus[j] - minus[j];
                } else {
                    for (std::size_t j = 0; j < l; ++j) acc[j] += (plus[j] + plus[j]) - column_sum[j];
                }
            }
            const double a = group_alpha(p, begin);
            float* dst = y.data() + (n * filters + f) * l;
            for (std::size_t j = 0; j < l; ++j) dst[j] = static_cast<float>(a * acc[j]);
        }
    }
    return y;
}

void write_packed(std::ostream& os, const PackedQuantTensor& p) {
    io::write_magic(os, kMagic);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.scheme.kind));
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p.scheme.granularity));
    io::write_le<std::uint8_t>(os, p.scheme.ternary_alpha_nonzero_only ? 1 : 0);
    io::write_le<std::uint8_t>(os, 0);
    io::write_le<float>(os, p.scheme.ternary_delta_coeff);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) io::write_le<std::uint64_t>(os, d);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.alpha.size()));
    for (float a : p.alpha) io::write_le<float>(os, a);
    for (const auto& pl : p.planes) {
        for (auto w : pl.sign_bits) io::write_le<std::uint64_t>(os, w);
        for (auto w : pl.nonzero_mask) io::write_le<std::uint64_t>(os, w);
    }
    if (!os) throw std::runtime_error("write_packed: stream error");
}

PackedQuantTensor read_packed(std::istream& is) {
    io::expect_magic(is, kMagic, "packed tensor");
    PackedQuantTensor p;
    const auto kind = io::read_le<std::uint8_t>(is);
    if (kind < 1 || kind > static_cast<std::uint8_t>(SchemeKind::BinaryPair))
        throw FormatError("packed tensor: unknown scheme id " + std::to_string(kind));
    p.scheme.kind = static_cast<SchemeKind>(kind);
    const auto gran = io::read_le<std::uint8_t>(is);
    if (gran > 1) throw FormatError("packed tensor: unknown granularity");
    p.scheme.granularity = static_cast<Granularity>(gran);
    p.scheme.ternary_alpha_nonzero_only = io::read_le<std::uint8_t>(is) != 0;
    (void)io::read_le<std::uint8_t>(is);
    p.scheme.ternary_delta_coeff = io::read_le<float>(is);
    const auto rank = io::read_le<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw FormatError("packed tensor: rank out of range");
    for (std::uint32_t i = 0; i < rank; ++i) p.shape.push_back(io::read_le<std::uint64_t>(is));
    const std::size_t n = shape_numel(p.shape);
    if (n == 0 || n > (std::size_t{1} << 34)) throw FormatError("packed tensor: bad shape");
    const auto scales = io::read_le<std::uint32_t>(is);
    std::size_t expected_groups = 0;
    try {
        expected_groups = scale_group_count(p.shape, p.scheme.granularity);
    } catch (const InvalidInput& e) {
        throw FormatError(std::string("packed tensor: ") + e.what());
    }
    if (scales != expected_groups) throw FormatError("packed tensor: scale count mismatch");
    for (std::uint32_t i = 0; i < scales; ++i) p.alpha.push_back(io::read_le<float>(is));
    const std::size_t words = (n + kWord - 1) / kWord;
    for (std::size_t pi = 0; pi < plane_count(p.scheme.kind); ++pi) {
        PackedPlane pl;
        pl.length = n;
        pl.sign_bits.resize(words);
        for (auto& w : pl.sign_bits) w = io::read_le<std::uint64_t>(is);
        if (plane_is_ternary(p.scheme.kind, pi)) {
            pl.nonzero_mask.resize(words);
            for (auto& w : pl.nonzero_mask) w = io::read_le<std::uint64_t>(is);
        }
        const std::size_t tail = n % kWord;
        if (tail) {
            const std::uint64_t pad = ~((std::uint64_t{1} << tail) - 1);
            if ((pl.sign_bits.back() & pad) ||
                (!pl.nonzero_mask.empty() && (pl.nonzero_mask.back() & pad)))
                throw FormatError("packed tensor: nonzero pad bits");
        }
        p.planes.push_back(std::move(pl));
    }
    return p;
}

}  // namespace bt

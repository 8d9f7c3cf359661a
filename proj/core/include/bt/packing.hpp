#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "bt/quantizer.hpp"
#include "bt/tensor.hpp"

namespace bt {

/// Bit-packed code plane. Element i lives in bit (i % 64) of word (i / 64).
/// sign_bits: 1 = +1, 0 = -1. nonzero_mask is present only for ternary
/// planes. Pad bits past `length` are zero.
struct PackedPlane {
    static constexpr std::size_t word_size = 64;

    std::vector<std::uint64_t> sign_bits;
    std::vector<std::uint64_t> nonzero_mask;
    std::size_t length = 0;

    bool ternary() const noexcept { return !nonzero_mask.empty(); }
    std::size_t word_count() const noexcept { return (length + word_size - 1) / word_size; }
    std::size_t storage_bytes() const noexcept {
        return (sign_bits.size() + nonzero_mask.size()) * sizeof(std::uint64_t);
    }
    int code(std::size_t i) const noexcept;

    friend bool operator==(const PackedPlane&, const PackedPlane&) = default;
};

PackedPlane pack_plane(const CodePlane& codes, bool ternary);
CodePlane unpack_plane(const PackedPlane& plane);

struct PackedQuantTensor {
    Shape shape;
    QuantScheme scheme;
    std::vector<PackedPlane> planes;
    std::vector<float> alpha;

    std::size_t numel() const noexcept { return shape_numel(shape); }
    std::size_t group_size() const noexcept { return alpha.empty() ? 0 : numel() / alpha.size(); }
    /// Plane words plus scales; excludes the fixed-size serialization header.
    std::size_t storage_bytes() const noexcept;

    friend bool operator==(const PackedQuantTensor&, const PackedQuantTensor&) = default;
};

PackedQuantTensor pack(const QuantTensor& q);
/// Restores code planes, scheme and effective scales. Stage scales and
/// thresholds are not part of the packed form and come back empty.
QuantTensor unpack(const PackedQuantTensor& p);

/// alpha * sum_i code_i * a_i, accumulated in double without multiplying
/// activations by weights.
float packed_dot(const PackedQuantTensor& p, std::span<const float> a);

/// x: [N, in], p: [out, in] -> [N, out].
Tensor packed_linear(const PackedQuantTensor& p, const Tensor& x);

/// x: [N, C, H, W], p: [F, C, kH, kW] -> [N, F, Ho, Wo], zero padding.
Tensor packed_conv2d(const PackedQuantTensor& p, const Tensor& x, std::size_t stride,
                     std::size_t padding);

/// Portable "BQT1" serialization (little-endian).
void write_packed(std::ostream& os, const PackedQuantTensor& p);
PackedQuantTensor read_packed(std::istream& is);

}  // namespace bt

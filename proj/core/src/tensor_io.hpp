#pragma once

#include <istream>
#include <ostream>

#include "binary_io.hpp"
#include "bt/tensor.hpp"

namespace bt::io {

// u32 rank, u64 dims, f32 values.
inline void write_tensor(std::ostream& os, const Tensor& t) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) write_le<std::uint64_t>(os, d);
    for (float v : t.values()) write_le<float>(os, v);
}

inline Tensor read_tensor(std::istream& is) {
    const auto rank = read_le<std::uint32_t>(is);
    if (rank > 8) throw FormatError("tensor rank out of range");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_le<std::uint64_t>(is));
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("tensor too large");
    std::vector<float> values(n);
    for (auto& v : values) v = read_le<float>(is);
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace bt::io

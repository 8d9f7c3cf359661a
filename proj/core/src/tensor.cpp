#include "bt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "bt/error.hpp"

namespace bt {

std::size_t shape_numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
        throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::from(std::initializer_list<float> values) {
    return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
}

void Tensor::reshape(Shape shape) {
    if (shape_numel(shape) != data_.size())
        throw InvalidInput("cannot reshape " + shape_to_string(shape_) + " to " +
                           shape_to_string(shape));
    shape_ = std::move(shape);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](float v) { return std::isfinite(v); });
}

void require_quantizable(const Tensor& w, const char* op) {
    if (w.empty()) throw InvalidInput(std::string(op) + ": empty tensor");
    if (!w.all_finite()) throw InvalidInput(std::string(op) + ": non-finite entry");
}

}  // namespace bt

#pragma once

// Dense layer kernels with explicit backward passes. All image tensors are
// [N, C, H, W]; dense activations are [N, F].

#include <cstdint>
#include <span>
#include <vector>

#include "bt/tensor.hpp"

namespace bt::nn {

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
              std::size_t padding);

struct ConvGrads {
    Tensor dx;
    Tensor dw;
    Tensor db;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t stride,
                          std::size_t padding, bool need_dx = true);

/// x: [N, in] (or any shape [N, ...] flattened), w: [out, in].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);

struct LinearGrads {
    Tensor dx;
    Tensor dw;
    Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax);
Tensor maxpool2_backward(const Shape& x_shape, const std::vector<std::uint32_t>& argmax,
                         const Tensor& dy);

struct BatchNormCache {
    Tensor x_hat;
    std::vector<float> inv_std;
};
inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

/// Per-channel batch statistics over (N, H, W). Updates running stats when
/// the pointers are non-null.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       BatchNormCache& cache, Tensor* running_mean, Tensor* running_var);
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& running_mean, const Tensor& running_var);

struct BatchNormGrads {
    Tensor dx;
    Tensor dgamma;
    Tensor dbeta;
};
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& dy);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

/// [N, C*s*s, H, W] -> [N, C, H*s, W*s].
Tensor subpixel(const Tensor& x, std::size_t scale);
Tensor subpixel_backward(const Tensor& dy, std::size_t scale);

/// Row-wise softmax over the last dimension of [N, K].
Tensor softmax(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean softmax cross-entropy over the batch; grad is w.r.t. the logits.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels);

/// Mean squared error over all elements.
LossResult mse_loss(const Tensor& prediction, const Tensor& target);

}  // namespace bt::nn

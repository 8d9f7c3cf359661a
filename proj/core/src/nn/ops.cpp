#include "bt/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "bt/error.hpp"
#include "im2col.hpp"

namespace bt::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Nchw {
    std::size_t n, c, h, w;
};

Nchw as_nchw(const Tensor& x, const char* op) {
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1, 1};
    throw InvalidInput(std::string(op) + ": expected rank 2 or 4, got " +
                       shape_to_string(x.shape()));
}

std::size_t row_length(const Tensor& x) { return x.rank() ? x.numel() / x.dim(0) : 0; }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
              std::size_t padding) {
    if (w.rank() != 4 || x.rank() != 4 || x.dim(1) != w.dim(1))
        throw InvalidInput("conv2d: shape mismatch " + shape_to_string(x.shape()) + " * " +
                           shape_to_string(w.shape()));
    const auto g = detail::conv_geometry(x.shape(), w.dim(2), w.dim(3), stride, padding);
    const std::size_t f = w.dim(0);
    const std::size_t k = g.patch_size();
    const std::size_t l = g.locations();
    if (bias && bias->numel() != f) throw InvalidInput("conv2d: bias length mismatch");

    Tensor y({g.batch, f, g.out_h, g.out_w});
    std::vector<float> col(k * l);
    CMapR wm(w.data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < g.batch; ++n) {
        detail::im2col(x.data() + n * g.channels * g.in_h * g.in_w, g, col.data());
        CMapR cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
        MapR ym(y.data() + n * f * l, static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(l));
        ym.noalias() = wm * cm;
        if (bias)
            for (std::size_t o = 0; o < f; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
    }
    return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, std::size_t stride,
                          std::size_t padding, bool need_dx) {
    const auto g = detail::conv_geometry(x.shape(), w.dim(2), w.dim(3), stride, padding);
    const std::size_t f = w.dim(0);
    const std::size_t k = g.patch_size();
    const std::size_t l = g.locations();
    if (dy.shape() != Shape{g.batch, f, g.out_h, g.out_w})
        throw InvalidInput("conv2d_backward: gradient shape mismatch");

    ConvGrads grads{need_dx ? Tensor(x.shape()) : Tensor(), Tensor(w.shape()), Tensor({f})};
    std::vector<float> col(k * l);
    MapR dw(grads.dw.data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k));
    CMapR wm(w.data(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < g.batch; ++n) {
        detail::im2col(x.data() + n * g.channels * g.in_h * g.in_w, g, col.data());
        CMapR cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
        CMapR dym(dy.data() + n * f * l, static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(l));
        dw.noalias() += dym * cm.transpose();
        for (std::size_t o = 0; o < f; ++o) grads.db[o] += dym.row(static_cast<Eigen::Index>(o)).sum();
        if (need_dx) {
            MapR dcol(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
            dcol.noalias() = wm.transpose() * dym;
            detail::col2im(col.data(), g, grads.dx.data() + n * g.channels * g.in_h * g.in_w);
        }
    }
    return grads;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    if (w.rank() != 2 || x.rank() < 2 || row_length(x) != w.dim(1))
        throw InvalidInput("linear: shape mismatch " + shape_to_string(x.shape()) + " * " +
                           shape_to_string(w.shape()) + "^T");
    const std::size_t n = x.dim(0);
    const std::size_t in = w.dim(1);
    const std::size_t out = w.dim(0);
    if (bias && bias->numel() != out) throw InvalidInput("linear: bias length mismatch");
    Tensor y({n, out});
    CMapR xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    CMapR wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    MapR ym(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
    ym.noalias() = xm * wm.transpose();
    if (bias) {
        Eigen::Map<const Eigen::RowVectorXf> b(bias->data(), static_cast<Eigen::Index>(out));
        ym.rowwise() += b;
    }
    return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
    const std::size_t n = x.dim(0);
    const std::size_t in = w.dim(1);
    const std::size_t out = w.dim(0);
    if (dy.shape() != Shape{n, out}) throw InvalidInput("linear_backward: gradient shape mismatch");
    LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({out})};
    CMapR xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    CMapR wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    CMapR dym(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
    MapR(g.dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in)).noalias() = dym * wm;
    MapR(g.dw.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)).noalias() =
        dym.transpose() * xm;
    Eigen::Map<Eigen::RowVectorXf>(g.db.data(), static_cast<Eigen::Index>(out)) = dym.colwise().sum();
    return g;
}

Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax) {
    if (x.rank() != 4) throw InvalidInput("maxpool2: expected [N, C, H, W]");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) throw InvalidInput("maxpool2: input smaller than 2x2");
    Tensor y({n, c, oh, ow});
    if (argmax) argmax->assign(y.numel(), 0);
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
        const float* plane = x.data() + p * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = (2 * oy) * w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if (plane[idx] > plane[best]) best = idx;
                    }
                y[o] = plane[best];
                if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(p * h * w + best);
            }
    }
    return y;
}

Tensor maxpool2_backward(const Shape& x_shape, const std::vector<std::uint32_t>& argmax,
                         const Tensor& dy) {
    if (argmax.size() != dy.numel()) throw InvalidInput("maxpool2_backward: stale cache");
    Tensor dx(x_shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[argmax[i]] += dy[i];
    return dx;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       BatchNormCache& cache, Tensor* running_mean, Tensor* running_var) {
    const auto [n, c, h, w] = as_nchw(x, "batchnorm");
    if (gamma.numel() != c || beta.numel() != c) throw InvalidInput("batchnorm: parameter length mismatch");
    const std::size_t hw = h * w;
    const std::size_t m = n * hw;
    Tensor y(x.shape());
    cache.x_hat = Tensor(x.shape());
    cache.inv_std.assign(c, 0.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const float* src = x.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) sum += src[i];
        }
        const double mean = sum / static_cast<double>(m);
        double sq = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const float* src = x.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = src[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(m);
        const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
        cache.inv_std[ch] = static_cast<float>(inv_std);
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const float xh = static_cast<float>((x[off + i] - mean) * inv_std);
                cache.x_hat[off + i] = xh;
                y[off + i] = gamma[ch] * xh + beta[ch];
            }
        }
        if (running_mean && running_var) {
            const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
            (*running_mean)[ch] = static_cast<float>((1.0 - kBatchNormMomentum) * (*running_mean)[ch] +
                                                     kBatchNormMomentum * mean);
            (*running_var)[ch] = static_cast<float>((1.0 - kBatchNormMomentum) * (*running_var)[ch] +
                                                    kBatchNormMomentum * unbiased);
        }
    }
    return y;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Tensor& running_mean, const Tensor& running_var) {
    const auto [n, c, h, w] = as_nchw(x, "batchnorm");
    if (gamma.numel() != c || running_mean.numel() != c)
        throw InvalidInput("batchnorm: parameter length mismatch");
    const std::size_t hw = h * w;
    Tensor y(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float scale = gamma[ch] / std::sqrt(running_var[ch] + kBatchNormEps);
        const float shift = beta[ch] - running_mean[ch] * scale;
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) y[off + i] = x[off + i] * scale + shift;
        }
    }
    return y;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& dy) {
    const auto [n, c, h, w] = as_nchw(dy, "batchnorm_backward");
    if (cache.x_hat.shape() != dy.shape()) throw InvalidInput("batchnorm_backward: stale cache");
    const std::size_t hw = h * w;
    const double m = static_cast<double>(n * hw);
    BatchNormGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_dy += dy[off + i];
                sum_dy_xh += static_cast<double>(dy[off + i]) * cache.x_hat[off + i];
            }
        }
        g.dbeta[ch] = static_cast<float>(sum_dy);
        g.dgamma[ch] = static_cast<float>(sum_dy_xh);
        const double k = gamma[ch] * cache.inv_std[ch] / m;
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                g.dx[off + i] = static_cast<float>(
                    k * (m * dy[off + i] - sum_dy - cache.x_hat[off + i] * sum_dy_xh));
        }
    }
    return g;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.numel(); ++i)
        if (!(y[i] > 0.0f)) dx[i] = 0.0f;
    return dx;
}

Tensor subpixel(const Tensor& x, std::size_t s) {
    if (x.rank() != 4 || s == 0 || x.dim(1) % (s * s) != 0)
        throw InvalidInput("subpixel: channels " + shape_to_string(x.shape()) +
                           " not divisible by scale^2");
    const std::size_t n = x.dim(0), c = x.dim(1) / (s * s), h = x.dim(2), w = x.dim(3);
    Tensor y({n, c, h * s, w * s});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j) {
                    const float* src = x.data() + ((b * c * s * s) + ch * s * s + i * s + j) * h * w;
                    float* dst = y.data() + (b * c + ch) * h * s * w * s;
                    for (std::size_t yy = 0; yy < h; ++yy)
                        for (std::size_t xx = 0; xx < w; ++xx)
                            dst[(yy * s + i) * w * s + xx * s + j] = src[yy * w + xx];
                }
    return y;
}

Tensor subpixel_backward(const Tensor& dy, std::size_t s) {
    const std::size_t n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / s, w = dy.dim(3) / s;
    Tensor dx({n, c * s * s, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j) {
                    float* dst = dx.data() + ((b * c * s * s) + ch * s * s + i * s + j) * h * w;
                    const float* src = dy.data() + (b * c + ch) * h * s * w * s;
                    for (std::size_t yy = 0; yy < h; ++yy)
                        for (std::size_t xx = 0; xx < w; ++xx)
                            dst[yy * w + xx] = src[(yy * s + i) * w * s + xx * s + j];
                }
    return dx;
}

Tensor softmax(const Tensor& x) {
    if (x.rank() != 2) throw InvalidInput("softmax: expected [N, K]");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor y(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
        const float* row = x.data() + b * k;
        const float mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        for (std::size_t j = 0; j < k; ++j)
            y[b * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / sum);
    }
    return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
    const std::size_t n = y.dim(0), k = y.dim(1);
    Tensor dx(y.shape());
    for (std::size_t b = 0; b < n; ++b) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dy[b * k + j]) * y[b * k + j];
        for (std::size_t j = 0; j < k; ++j)
            dx[b * k + j] = static_cast<float>(y[b * k + j] * (dy[b * k + j] - dot));
    }
    return dx;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2 || labels.size() != logits.dim(0))
        throw InvalidInput("softmax_cross_entropy: batch size mismatch");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    LossResult r{0.0, Tensor(logits.shape())};
    for (std::size_t b = 0; b < n; ++b) {
        const auto label = labels[b];
        if (label < 0 || static_cast<std::size_t>(label) >= k)
            throw InvalidInput("softmax_cross_entropy: label out of range");
        const float* row = logits.data() + b * k;
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const double log_z = mx + std::log(sum);
        r.loss += log_z - row[label];
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - log_z);
            r.grad[b * k + j] = static_cast<float>((p - (static_cast<std::int32_t>(j) == label)) /
                                                   static_cast<double>(n));
        }
    }
    r.loss /= static_cast<double>(n);
    return r;
}

LossResult mse_loss(const Tensor& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) throw InvalidInput("mse_loss: shape mismatch");
    const double n = static_cast<double>(prediction.numel());
    LossResult r{0.0, Tensor(prediction.shape())};
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        const double d = static_cast<double>(prediction[i]) - target[i];
        r.loss += d * d;
        r.grad[i] = static_cast<float>(2.0 * d / n);
    }
    r.loss /= n;
    return r;
}

}  // namespace bt::nn

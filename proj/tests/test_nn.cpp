#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "bt/error.hpp"
#include "bt/nn/network.hpp"
#include "bt/nn/ops.hpp"
#include "support.hpp"

using namespace bt;
using namespace bt::nn;
using bt::testing::random_normal;
using bt::testing::rel_error;

namespace {

QuantScheme scheme_of(SchemeKind k) {
    QuantScheme s;
    s.kind = k;
    return s;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * r[i];
    return s;
}

struct GradCheck {
    double diff2 = 0.0;  // ||fd - analytic||^2
    double norm2 = 0.0;  // max(||fd||^2, ||analytic||^2)
};

GradCheck grad_terms(Tensor& x, const std::function<double()>& loss, const Tensor& analytic, float eps) {
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const float saved = x[i];
        x[i] = saved + eps;
        const double up = loss();
        x[i] = saved - eps;
        const double down = loss();
        x[i] = saved;
        const double fd = (up - down) / (2.0 * eps);
        diff += (fd - analytic[i]) * (fd - analytic[i]);
        na += static_cast<double>(analytic[i]) * analytic[i];
        nf += fd * fd;
    }
    return {diff, std::max(na, nf)};
}

// ||fd - analytic|| / max(||fd||, ||analytic||) over every element of `x`.
double grad_check(Tensor& x, const std::function<double()>& loss, const Tensor& analytic, float eps = 1e-2f) {
    const GradCheck g = grad_terms(x, loss, analytic, eps);
    return std::sqrt(g.diff2) / std::max(std::sqrt(g.norm2), 1e-12);
}

// Entries spread so that +-eps never crosses a kink or reorders a pool window.
Tensor spread(Shape shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::vector<std::size_t> perm(t.numel());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
    const double n = static_cast<double>(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(-1.0 + (2.0 * static_cast<double>(perm[i]) + 1.0) / n + 0.013);
    return t;
}

NetSpec single_fc(std::size_t in, std::size_t out, bool quantized) {
    NetSpec s;
    s.task = Task::SuperResolution;
    s.input_shape = {in, 1, 1};
    s.layers = {{LayerKind::FullyConnected, out, quantized}};
    return s;
}

NetSpec small_conv_net() {
    NetSpec s;
    s.task = Task::SuperResolution;
    s.input_shape = {2, 6, 6};
    s.layers = {{LayerKind::Conv3x3, 4, true}, {LayerKind::ReLU, 0, false}, {LayerKind::MaxPool2, 0, false},
                {LayerKind::Conv3x3, 3, true}, {LayerKind::ReLU, 0, false}, {LayerKind::FullyConnected, 5, true}};
    return s;
}

}  // namespace

TEST_CASE("conv2d matches the naive oracle") {
    for (std::size_t stride : {1u, 2u}) {
        const Tensor x = random_normal({2, 3, 7, 6}, 1);
        const Tensor w = random_normal({4, 3, 3, 3}, 2);
        const Tensor b = random_normal({4}, 3);
        Tensor oracle = bt::testing::naive_conv(x, w, stride, 1);
        const std::size_t plane = oracle.dim(2) * oracle.dim(3);
        for (std::size_t i = 0; i < oracle.numel(); ++i) oracle[i] += b[(i / plane) % 4];
        CHECK(rel_error(conv2d(x, w, &b, stride, 1), oracle) <= 1e-5);
    }
}

TEST_CASE("conv2d gradients") {
    for (std::size_t stride : {1u, 2u}) {
        Tensor x = random_normal({2, 2, 5, 5}, 4);
        Tensor w = random_normal({3, 2, 3, 3}, 5);
        Tensor b = random_normal({3}, 6);
        const Tensor y0 = conv2d(x, w, &b, stride, 1);
        const Tensor r = random_normal(y0.shape(), 7);
        const auto g = conv2d_backward(x, w, r, stride, 1);
        auto loss = [&] { return weighted_sum(conv2d(x, w, &b, stride, 1), r); };
        CHECK(grad_check(x, loss, g.dx) <= 1e-3);
        CHECK(grad_check(w, loss, g.dw) <= 1e-3);
        CHECK(grad_check(b, loss, g.db) <= 1e-3);
    }
}

TEST_CASE("linear gradients") {
    Tensor x = random_normal({3, 7}, 1);
    Tensor w = random_normal({4, 7}, 2);
    Tensor b = random_normal({4}, 3);
    const Tensor r = random_normal({3, 4}, 4);
    const auto g = linear_backward(x, w, r);
    auto loss = [&] { return weighted_sum(linear(x, w, &b), r); };
    CHECK(grad_check(x, loss, g.dx) <= 1e-3);
    CHECK(grad_check(w, loss, g.dw) <= 1e-3);
    CHECK(grad_check(b, loss, g.db) <= 1e-3);
}

TEST_CASE("maxpool gradients") {
    Tensor x = spread({2, 2, 4, 6}, 1);
    std::vector<std::uint32_t> argmax;
    const Tensor y = maxpool2(x, &argmax);
    CHECK(y.shape() == Shape{2, 2, 2, 3});
    const Tensor r = random_normal(y.shape(), 2);
    const Tensor dx = maxpool2_backward(x.shape(), argmax, r);
    auto loss = [&] { return weighted_sum(maxpool2(x, nullptr), r); };
    CHECK(grad_check(x, loss, dx, 1e-3f) <= 1e-3);
}

TEST_CASE("relu gradients") {
    Tensor x = spread({3, 17}, 3);
    const Tensor r = random_normal({3, 17}, 4);
    const Tensor dx = relu_backward(relu(x), r);
    auto loss = [&] { return weighted_sum(relu(x), r); };
    CHECK(grad_check(x, loss, dx, 1e-3f) <= 1e-3);
}

TEST_CASE("batchnorm gradients") {
    for (Shape shape : {Shape{4, 3, 3, 2}, Shape{6, 5}}) {
        Tensor x = random_normal(shape, 5);
        Tensor gamma = random_normal({shape[1]}, 6);
        Tensor beta = random_normal({shape[1]}, 7);
        BatchNormCache cache;
        const Tensor y = batchnorm_train(x, gamma, beta, cache, nullptr, nullptr);
        const Tensor r = random_normal(y.shape(), 8);
        const auto g = batchnorm_backward(cache, gamma, r);
        auto loss = [&] {
            BatchNormCache c;
            return weighted_sum(batchnorm_train(x, gamma, beta, c, nullptr, nullptr), r);
        };
        CHECK(grad_check(x, loss, g.dx, 1e-2f) <= 1e-3);
        CHECK(grad_check(gamma, loss, g.dgamma) <= 1e-3);
        CHECK(grad_check(beta, loss, g.dbeta) <= 1e-3);
    }
}

TEST_CASE("batchnorm batch statistics and running averages") {
    const Tensor x = random_normal({8, 3, 4, 4}, 9, 3.0f);
    Tensor gamma({3}, 1.0f), beta({3}, 0.0f), rm({3}, 0.0f), rv({3}, 1.0f);
    BatchNormCache cache;
    const Tensor y = batchnorm_train(x, gamma, beta, cache, &rm, &rv);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0, s2 = 0.0, xs = 0.0, xs2 = 0.0;
        for (std::size_t n = 0; n < 8; ++n)
            for (std::size_t i = 0; i < 16; ++i) {
                const std::size_t k = (n * 3 + c) * 16 + i;
                s += y[k];
                s2 += static_cast<double>(y[k]) * y[k];
                xs += x[k];
                xs2 += static_cast<double>(x[k]) * x[k];
            }
        const double mean = s / 128.0;
        CHECK(std::fabs(mean) <= 1e-5);
        CHECK(s2 / 128.0 - mean * mean == doctest::Approx(1.0).epsilon(1e-4));
        const double xm = xs / 128.0, xv = (xs2 / 128.0 - xm * xm) * 128.0 / 127.0;
        CHECK(rm[c] == doctest::Approx(0.1 * xm).epsilon(1e-4));
        CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * xv).epsilon(1e-4));
    }
}

TEST_CASE("subpixel layout and gradients") {
    Tensor x({1, 4, 1, 1});
    for (std::size_t i = 0; i < 4; ++i) x[i] = static_cast<float>(i);
    const Tensor y = subpixel(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == static_cast<float>(i));

    Tensor z = random_normal({2, 18, 2, 3}, 1);
    const Tensor r = random_normal({2, 2, 6, 9}, 2);
    auto loss = [&] { return weighted_sum(subpixel(z, 3), r); };
    CHECK(grad_check(z, loss, subpixel_backward(r, 3)) <= 1e-3);
}

TEST_CASE("softmax and cross-entropy") {
    Tensor x = random_normal({4, 6}, 3, 3.0f);
    const Tensor p = softmax(x);
    for (std::size_t n = 0; n < 4; ++n) {
        double s = 0.0;
        for (std::size_t k = 0; k < 6; ++k) s += p[n * 6 + k];
        CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
    const Tensor r = random_normal({4, 6}, 4);
    auto loss = [&] { return weighted_sum(softmax(x), r); };
    CHECK(grad_check(x, loss, softmax_backward(softmax(x), r)) <= 1e-3);

    const std::int32_t labels[] = {0, 5, 2, 2};
    const auto ce = softmax_cross_entropy(x, labels);
    CHECK(ce.loss >= 0.0);
    auto ce_loss = [&] { return softmax_cross_entropy(x, labels).loss; };
    CHECK(grad_check(x, ce_loss, ce.grad) <= 1e-3);
    const std::int32_t bad[] = {0, 6, 2, 2};
    CHECK_THROWS_AS(softmax_cross_entropy(x, bad), InvalidInput);
}

TEST_CASE("mse loss gradient") {
    Tensor a = random_normal({2, 3, 4}, 5);
    const Tensor b = random_normal({2, 3, 4}, 6);
    const auto m = mse_loss(a, b);
    auto loss = [&] { return mse_loss(a, b).loss; };
    CHECK(grad_check(a, loss, m.grad) <= 1e-3);
}

TEST_CASE("builders") {
    const NetSpec v = build_vgg6(16);
    std::vector<std::size_t> conv_widths;
    std::size_t pools = 0;
    for (const auto& l : v.layers) {
        if (l.kind == LayerKind::Conv3x3) {
            conv_widths.push_back(l.width);
            CHECK(l.quantized);
        }
        if (l.kind == LayerKind::MaxPool2) ++pools;
        if (l.kind == LayerKind::FullyConnected) CHECK_FALSE(l.quantized);
    }
    CHECK(conv_widths == std::vector<std::size_t>{16, 16, 32, 32, 64, 64});
    CHECK(pools == 3);
    CHECK(v.layers[v.layers.size() - 4].kind == LayerKind::FullyConnected);
    CHECK(v.layers[v.layers.size() - 4].width == 128);
    CHECK(v.layers.back().kind == LayerKind::Softmax);
    CHECK(build_vgg6(16, {3, 32, 32}).activation_shapes().back() == Shape{10});

    const NetSpec e = build_espcn(2, Task::SuperResolution);
    std::vector<std::size_t> trunk;
    std::size_t i = 0;
    for (; e.layers[i].kind != LayerKind::SubPixel; ++i)
        if (e.layers[i].kind == LayerKind::Conv3x3) trunk.push_back(e.layers[i].width);
    CHECK(trunk == std::vector<std::size_t>{64, 64, 64, 64, 64});
    CHECK(e.layers[i].width == 2);
    CHECK(e.layers.back().kind == LayerKind::Conv3x3);
    CHECK(e.layers.back().width == 1);
    CHECK_FALSE(e.layers.front().quantized);
    CHECK_FALSE(e.layers.back().quantized);
    CHECK(e.activation_shapes().back() == Shape{1, 64, 64});
    REQUIRE(e.skips.size() == 1);
    CHECK(e.skips[0].from == 0);
    CHECK(e.skips[0].to == e.layers.size());

    const NetSpec d = build_espcn(1, Task::Denoise);
    for (const auto& l : d.layers) CHECK(l.kind != LayerKind::SubPixel);
    CHECK(d.activation_shapes().back() == d.input_shape);
    CHECK(build_espcn(3, Task::SuperResolution).activation_shapes().back() == Shape{1, 96, 96});

    CHECK_THROWS_AS(build_vgg6(0), InvalidInput);
    CHECK_THROWS_AS(build_espcn(5, Task::SuperResolution), InvalidInput);
    CHECK_THROWS_AS(build_espcn(1, Task::SuperResolution), InvalidInput);
}

TEST_CASE("netspec json round trip and validation") {
    for (const NetSpec& s : {build_vgg6(4), build_espcn(3, Task::SuperResolution), small_conv_net()})
        CHECK(netspec_from_json(netspec_to_json(s)) == s);
    CHECK_THROWS_AS(netspec_from_json("{not json"), FormatError);
    NetSpec bad = small_conv_net();
    bad.layers[1].quantized = true;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = small_conv_net();
    bad.layers.push_back({LayerKind::SubPixel, 5, false});
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("single BT fully connected layer") {
    Network net(single_fc(4, 1, true), 1);
    auto& w = net.params()[static_cast<std::size_t>(net.slots()[0].weight)].value;
    const float vals[] = {0.8f, -0.4f, 0.1f, -0.9f};
    for (std::size_t i = 0; i < 4; ++i) w[i] = vals[i];
    net.params()[static_cast<std::size_t>(net.slots()[0].bias)].value.fill(0.0f);
    const Tensor x({1, 4, 1, 1}, 1.0f);
    CHECK(forward(net, x, scheme_of(SchemeKind::BT), Mode::Train)[0] == doctest::Approx(-0.3375));
    CHECK(forward(net, x, scheme_of(SchemeKind::BT), Mode::Eval)[0] == doctest::Approx(-0.3375));
}

TEST_CASE("full precision weight paths agree") {
    Network net(small_conv_net(), 3);
    const Tensor x = random_normal({2, 2, 6, 6}, 4);
    const auto scheme = scheme_of(SchemeKind::Full);
    CHECK(forward(net, x, scheme, Mode::Train) == forward(net, x, scheme, Mode::Eval));
    CHECK(InferenceModel::from_network(net, scheme, true).forward(x) ==
          InferenceModel::from_network(net, scheme, false).forward(x));
}

TEST_CASE("packed eval path matches dequantized train path") {
    for (auto kind : {SchemeKind::Binary, SchemeKind::Ternary, SchemeKind::BT, SchemeKind::BinaryPair})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Network net(small_conv_net(), seed);
            const Tensor x = random_normal({3, 2, 6, 6}, seed + 100);
            const auto scheme = scheme_of(kind);
            const Tensor train = forward(net, x, scheme, Mode::Train);
            const Tensor eval = forward(net, x, scheme, Mode::Eval);
            CHECK(rel_error(eval, train) <= 1e-4);
        }
    Network vgg(build_vgg6(2, {1, 8, 8}), 1);
    const Tensor x = random_normal({2, 1, 8, 8}, 5);
    const auto scheme = scheme_of(SchemeKind::BT);
    const Tensor packed = InferenceModel::from_network(vgg, scheme, true).forward(x);
    const Tensor dense = InferenceModel::from_network(vgg, scheme, false).forward(x);
    CHECK(rel_error(packed, dense) <= 1e-4);
}

TEST_CASE("two-layer network gradient check") {
    NetSpec s;
    s.task = Task::SuperResolution;
    s.input_shape = {20, 1, 1};
    s.layers = {{LayerKind::FullyConnected, 40, false}, {LayerKind::ReLU, 0, false}, {LayerKind::FullyConnected, 4, false}};
    Network net(s, 7);
    CHECK(net.parameter_count() >= 1000);
    const Tensor x = random_normal({5, 20, 1, 1}, 8);
    const Tensor r = random_normal({5, 4}, 9);
    const auto scheme = scheme_of(SchemeKind::Full);
    ForwardCache cache;
    forward(net, x, scheme, Mode::Train, &cache);
    const auto grads = backward_ste(net, cache, r);
    auto loss = [&] { return weighted_sum(forward(net, x, scheme, Mode::Train), r); };
    for (std::size_t i = 0; i < net.params().size(); ++i)
        CHECK(grad_check(net.params()[i].value, loss, grads[i], 1e-3f) <= 1e-3);
}

TEST_CASE("vgg gradient check in full precision") {
    Network net(build_vgg6(1, {1, 8, 8}, 3), 2);
    const Tensor x = random_normal({4, 1, 8, 8}, 3);
    const std::int32_t labels[] = {0, 1, 2, 1};
    const auto scheme = scheme_of(SchemeKind::Full);
    ForwardOptions opt;
    opt.logits_only = true;
    opt.update_running_stats = false;
    ForwardCache cache;
    const Tensor logits = forward(net, x, scheme, Mode::Train, &cache, opt);
    const auto grads = backward_ste(net, cache, softmax_cross_entropy(logits, labels).grad);
    auto loss = [&] { return softmax_cross_entropy(forward(net, x, scheme, Mode::Train, nullptr, opt), labels).loss; };
    // Biases ahead of BatchNorm have an exactly zero gradient, so the error is
    // measured against the norm of the whole gradient.
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const GradCheck g = grad_terms(net.params()[i].value, loss, grads[i], 5e-4f);
        diff += g.diff2;
        norm += g.norm2;
    }
    CHECK(std::sqrt(diff / norm) <= 1e-3);
}

TEST_CASE("STE blocks gradients outside the clip window") {
    Network net(small_conv_net(), 11);
    const Tensor x = random_normal({2, 2, 6, 6}, 12);
    const auto scheme = scheme_of(SchemeKind::BT);
    ForwardCache cache;
    const Tensor y = forward(net, x, scheme, Mode::Train, &cache);
    const auto grads = backward_ste(net, cache, random_normal(y.shape(), 13));
    std::size_t outside = 0;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const auto& p = net.params()[i];
        if (!p.quantized) continue;
        const float a1 = cache.quantized[i].alpha1[0];
        for (std::size_t j = 0; j < p.value.numel(); ++j)
            if (std::fabs(p.value[j]) > a1) {
                CHECK(grads[i][j] == 0.0f);
                ++outside;
            }
    }
    CHECK(outside > 0);
    CHECK_THROWS_AS(backward_ste(net, ForwardCache{}, y), InvalidInput);
}

TEST_CASE("quantized loss is piecewise constant in the latent weights") {
    Network net(single_fc(4, 1, true), 1);
    auto& w = net.params()[0].value;
    const float vals[] = {0.5f, 0.25f, -0.75f, 0.125f};
    for (std::size_t i = 0; i < 4; ++i) w[i] = vals[i];
    const Tensor x = Tensor({1, 4, 1, 1}, std::vector<float>{0.3f, -0.7f, 0.2f, 0.9f});
    const auto scheme = scheme_of(SchemeKind::Binary);
    const float before = forward(net, x, scheme, Mode::Train)[0];
    // shift mass between two positive weights: same codes, same mean |W|
    w[0] = 0.375f;
    w[1] = 0.375f;
    CHECK(forward(net, x, scheme, Mode::Train)[0] == before);
    // push one across zero while keeping mean |W|
    w[3] = -0.125f;
    CHECK(forward(net, x, scheme, Mode::Train)[0] != before);
}

TEST_CASE("loss with regularization") {
    Network net(single_fc(1, 1, true), 1);
    net.params()[0].value[0] = 1e-7f;
    const auto scheme = scheme_of(SchemeKind::Binary);
    TransitionRegConfig reg;
    reg.enabled = true;
    reg.lambda = 0.0f;
    Rng rng(1);
    CHECK(loss_with_regularization(1.2345, net, scheme, reg, rng).loss == 1.2345);

    reg.lambda = 0.1f;
    reg.noise_gain = 1e4f;
    bool seen = false;
    for (std::uint64_t seed = 0; seed < 50 && !seen; ++seed) {
        Rng r(seed);
        const auto out = loss_with_regularization(1.0, net, scheme, reg, r);
        if (out.penalty == 2.0) {
            CHECK(out.loss == doctest::Approx(1.0 - 0.2));
            CHECK(out.grads[0][0] == doctest::Approx(0.1f));  // descent moves W toward 0
            seen = true;
        }
    }
    CHECK(seen);

    TransitionRegConfig off;
    CHECK(loss_with_regularization(0.5, net, scheme, off, rng).loss == 0.5);
    CHECK_THROWS_AS(loss_with_regularization(0.5, net, scheme_of(SchemeKind::Full), reg, rng), InvalidInput);
}

TEST_CASE("descending the regularizer pulls weights onto transitions") {
    NetSpec s = single_fc(64, 64, true);
    for (auto kind : {SchemeKind::Binary, SchemeKind::Ternary, SchemeKind::BT}) {
        Network net(s, 1);
        const auto scheme = scheme_of(kind);
        TransitionRegConfig reg;
        reg.enabled = true;
        Rng rng(3);
        auto& w = net.params()[0].value;
        const double before = mean_distance_to_transition(w, scheme);
        const float lr = 1e-3f * static_cast<float>(w.numel());
        for (int step = 0; step < 500; ++step) {
            const auto r = loss_with_regularization(0.0, net, scheme, reg, rng);
            for (std::size_t j = 0; j < w.numel(); ++j) w[j] -= lr * r.grads[0][j];
        }
        CHECK(mean_distance_to_transition(w, scheme) < before);
    }
}

TEST_CASE("inference model serialization") {
    Network net(build_espcn(2, Task::SuperResolution, {1, 8, 8}), 3);
    const Tensor x = random_normal({1, 1, 8, 8}, 4, 0.2f);
    for (auto kind : {SchemeKind::Full, SchemeKind::BT}) {
        const auto m = InferenceModel::from_network(net, scheme_of(kind), true);
        std::stringstream ss;
        m.save(ss);
        CHECK(ss.str().substr(0, 4) == "BTPM");
        const auto back = InferenceModel::load(ss);
        CHECK(back.forward(x) == m.forward(x));
        CHECK(back.packed_weight_bytes() == m.packed_weight_bytes());
    }
    std::stringstream junk("BTCKxxxx");
    CHECK_THROWS_AS(InferenceModel::load(junk), FormatError);
}

TEST_CASE("forward rejects mismatched inputs") {
    Network net(small_conv_net(), 1);
    CHECK_THROWS_AS(forward(net, Tensor({1, 3, 6, 6}), scheme_of(SchemeKind::Full), Mode::Train), InvalidInput);
    Tensor nan_in({1, 2, 6, 6}, NAN);
    CHECK_THROWS_AS(forward(net, nan_in, scheme_of(SchemeKind::Full), Mode::Train), InvalidInput);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fetalseg/grad_check.hpp"
#include "fetalseg/ops.hpp"
#include "oracles.hpp"

using namespace fetalseg;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, bool requires_grad = false, T lo = T(-1), T hi = T(1)) {
    std::vector<T> v(static_cast<size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
ConvParams<T> random_conv(int ci, int co, int k, int stride, int pad, Rng& rng) {
    ConvParams<T> p;
    p.weight = random_tensor<T>({co, ci, k, k}, rng, true);
    p.bias = random_tensor<T>({co}, rng, true);
    p.stride = stride;
    p.padding = pad;
    return p;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
    auto t = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(numel(t.shape()) == 6);
    CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);

    t.set_requires_grad(true);
    CHECK(t.grad().size() == t.values().size());
}

TEST_CASE("conv2d: identity 1x1 kernel") {
    Rng rng(1);
    auto x = random_tensor<float>({2, 1, 5, 7}, rng);
    ConvParams<float> p;
    p.weight = Tensor<float>::filled({1, 1, 1, 1}, 1.0f);
    p.bias = Tensor<float>::zeros({1});
    auto y = conv2d(x, p);
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: 3x3 all-ones kernel on all-ones 3x3 image") {
    auto x = Tensor<float>::filled({1, 1, 3, 3}, 1.0f);
    ConvParams<float> p;
    p.weight = Tensor<float>::filled({1, 1, 3, 3}, 1.0f);
    p.bias = Tensor<float>::zeros({1});
    p.padding = 1;
    auto y = conv2d(x, p);
    // center sums the full window, corners only the 4 in-bounds taps
    CHECK(y.data()[4] == doctest::Approx(9.0f));
    CHECK(y.data()[0] == doctest::Approx(4.0f));
    CHECK(y.data()[2] == doctest::Approx(4.0f));
    CHECK(y.data()[6] == doctest::Approx(4.0f));
    CHECK(y.data()[8] == doctest::Approx(4.0f));
    CHECK(y.data()[1] == doctest::Approx(6.0f));
}

TEST_CASE("conv2d: output shape arithmetic") {
    Rng rng(2);
    auto x = random_tensor<float>({1, 3, 160, 288}, rng);
    auto p = random_conv<float>(3, 64, 3, 1, 1, rng);
    auto y = conv2d(x, p);
    CHECK(y.shape() == Shape{1, 64, 160, 288});

    auto xs = random_tensor<float>({1, 2, 9, 11}, rng);
    auto ps = random_conv<float>(2, 5, 3, 2, 1, rng);
    auto ys = conv2d(xs, ps);
    CHECK(ys.shape() == Shape{1, 5, 5, 6});  // floor((9+2-3)/2)+1, floor((11+2-3)/2)+1
}

TEST_CASE("conv2d: matches direct-loop oracle on random inputs") {
    Rng rng(3);
    for (int trial = 0; trial < 6; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int ci = 1 + static_cast<int>(rng.below(4));
        const int co = 1 + static_cast<int>(rng.below(6));
        const int k = rng.chance(0.5) ? 1 : 3;
        const int stride = rng.chance(0.7) ? 1 : 2;
        const int pad = (k == 3 && rng.chance(0.7)) ? 1 : 0;
        const int h = k + static_cast<int>(rng.below(8));
        const int w = k + static_cast<int>(rng.below(10));
        auto x = random_tensor<float>({n, ci, h, w}, rng);
        auto p = random_conv<float>(ci, co, k, stride, pad, rng);
        auto y = conv2d(x, p);
        int ho = 0, wo = 0;
        auto ref = oracle::conv2d(x.values(), n, ci, h, w, p.weight.values(), p.bias.values(), co, k, k, stride, pad,
                                  &ho, &wo);
        REQUIRE(y.shape() == Shape{n, co, ho, wo});
        for (size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
}

TEST_CASE("conv2d: shape mismatch and invalid params") {
    Rng rng(4);
    auto x = random_tensor<float>({1, 3, 4, 4}, rng);
    auto p = random_conv<float>(2, 4, 3, 1, 1, rng);  // expects 2 input channels
    CHECK_THROWS_AS(conv2d(x, p), std::invalid_argument);

    ConvParams<float> even;
    even.weight = Tensor<float>::zeros({1, 3, 2, 2});
    even.bias = Tensor<float>::zeros({1});
    CHECK_THROWS_AS(conv2d(x, even), std::invalid_argument);
}

TEST_CASE("conv2d: non-finite output raises a numeric error") {
    auto x = Tensor<float>::filled({1, 1, 2, 2}, 3e38f);
    ConvParams<float> p;
    p.weight = Tensor<float>::filled({1, 1, 1, 1}, 10.0f);
    p.bias = Tensor<float>::zeros({1});
    CHECK_THROWS_AS(conv2d(x, p), NumericError);
}

TEST_CASE("maxpool2: examples and oracle") {
    auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = maxpool2(x);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == 4.0f);

    auto c = Tensor<float>::filled({2, 3, 6, 8}, 0.75f);
    auto yc = maxpool2(c);
    CHECK(yc.shape() == Shape{2, 3, 3, 4});
    for (std::int64_t i = 0; i < yc.size(); ++i) CHECK(yc.data()[i] == 0.75f);

    std::vector<float> seq(16);
    for (int i = 0; i < 16; ++i) seq[static_cast<size_t>(i)] = static_cast<float>(i);
    auto x4 = Tensor<float>::from_data({1, 1, 4, 4}, seq);
    auto y4 = maxpool2(x4);
    auto ref = oracle::maxpool2(seq, 1, 4, 4);
    CHECK(y4.data()[0] == ref[0]);
    CHECK(ref == std::vector<float>{5, 7, 13, 15});
    for (int i = 0; i < 4; ++i) CHECK(y4.data()[i] == ref[static_cast<size_t>(i)]);

    auto odd = Tensor<float>::zeros({1, 1, 3, 4});
    CHECK_THROWS_AS(maxpool2(odd), std::invalid_argument);
}

TEST_CASE("maxpool2: tie gradient routes to first element in row-major order") {
    auto x = Tensor<float>::from_data({1, 1, 2, 2}, {0.5f, 0.5f, 0.5f, 0.5f}, true);
    auto y = maxpool2(x);
    y.backward();
    CHECK(x.grad()[0] == 1.0f);
    CHECK(x.grad()[1] == 0.0f);
    CHECK(x.grad()[2] == 0.0f);
    CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("upsample_bilinear2x: half-pixel convention") {
    auto x = Tensor<float>::from_data({1, 1, 1, 2}, {0.0f, 1.0f});
    auto y = upsample_bilinear2x(x);
    REQUIRE(y.shape() == Shape{1, 1, 2, 4});
    // rows identical; evaluated from source = (dst+0.5)/2 - 0.5
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[1] == doctest::Approx(0.25));
    CHECK(y.data()[2] == doctest::Approx(0.75));
    CHECK(y.data()[3] == doctest::Approx(1.0));

    auto c = Tensor<float>::filled({1, 2, 3, 5}, 0.4f);
    auto yc = upsample_bilinear2x(c);
    for (std::int64_t i = 0; i < yc.size(); ++i) CHECK(yc.data()[i] == doctest::Approx(0.4f));

    Rng rng(5);
    auto big = random_tensor<float>({1, 64, 20, 36}, rng);
    CHECK(upsample_bilinear2x(big).shape() == Shape{1, 64, 40, 72});
}

TEST_CASE("maxpool2 then upsample reproduces a constant exactly") {
    auto c = Tensor<float>::filled({1, 3, 8, 12}, 0.3125f);
    auto y = upsample_bilinear2x(maxpool2(c));
    REQUIRE(y.shape() == c.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == 0.3125f);
}

TEST_CASE("avgpool3_s1: in-bounds averaging") {
    std::vector<float> v(9);
    for (int i = 0; i < 9; ++i) v[static_cast<size_t>(i)] = static_cast<float>(i + 1);
    auto x = Tensor<float>::from_data({1, 1, 3, 3}, v);
    auto y = avgpool3_s1(x);
    CHECK(y.data()[4] == doctest::Approx(5.0));                       // mean of 1..9
    CHECK(y.data()[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));     // corner, 4 in-bounds pixels
    auto ref = oracle::avgpool3(v, 1, 3, 3);
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(ref[static_cast<size_t>(i)]));

    auto c = Tensor<float>::filled({2, 2, 5, 6}, 0.6f);
    auto yc = avgpool3_s1(c);
    for (std::int64_t i = 0; i < yc.size(); ++i) CHECK(yc.data()[i] == doctest::Approx(0.6f));

    Rng rng(6);
    auto r = random_tensor<float>({2, 3, 6, 7}, rng);
    auto yr = avgpool3_s1(r);
    auto rr = oracle::avgpool3(r.values(), 6, 6, 7);
    for (size_t i = 0; i < rr.size(); ++i) CHECK(yr.data()[i] == doctest::Approx(rr[i]));
}

TEST_CASE("batchnorm: train-mode statistics and eval formula") {
    Rng rng(7);
    auto x = random_tensor<float>({2, 3, 4, 5}, rng);
    auto bn = BatchNormState<float>::make(3);
    auto y = batchnorm(x, bn, Mode::kTrain);

    // with unit scale / zero shift, per-channel output stats are (0, 1)
    const std::int64_t m = 2 * 4 * 5;
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0, var = 0;
        for (int img = 0; img < 2; ++img)
            for (int i = 0; i < 20; ++i) mean += y.data()[(img * 3 + ch) * 20 + i];
        mean /= static_cast<double>(m);
        for (int img = 0; img < 2; ++img)
            for (int i = 0; i < 20; ++i) {
                const double d = y.data()[(img * 3 + ch) * 20 + i] - mean;
                var += d * d;
            }
        var /= static_cast<double>(m);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    // input already normalized passes through (approximately)
    std::vector<float> norm(static_cast<size_t>(numel({2, 1, 3, 4})));
    {
        Rng r2(8);
        double mu = 0;
        for (auto& v : norm) {
            v = static_cast<float>(r2.uniform(-1, 1));
            mu += v;
        }
        mu /= static_cast<double>(norm.size());
        double var = 0;
        for (auto& v : norm) {
            v -= static_cast<float>(mu);
            var += static_cast<double>(v) * v;
        }
        var /= static_cast<double>(norm.size());
        const float s = static_cast<float>(1.0 / std::sqrt(var));
        for (auto& v : norm) v *= s;
    }
    auto xn = Tensor<float>::from_data({2, 1, 3, 4}, norm);
    auto bn1 = BatchNormState<float>::make(1);
    auto yn = batchnorm(xn, bn1, Mode::kTrain);
    for (std::int64_t i = 0; i < yn.size(); ++i) CHECK(std::abs(yn.data()[i] - xn.data()[i]) < 1e-4);

    // eval: running mean 2 var 4 on constant 4 -> (4-2)/sqrt(4+1e-5)
    auto bn2 = BatchNormState<float>::make(1);
    bn2.running_mean[0] = 2.0f;
    bn2.running_var[0] = 4.0f;
    auto xc = Tensor<float>::filled({1, 1, 2, 2}, 4.0f);
    auto ye = batchnorm(xc, bn2, Mode::kEval);
    const double expect = (4.0 - 2.0) / std::sqrt(4.0 + 1e-5);
    for (std::int64_t i = 0; i < ye.size(); ++i) CHECK(ye.data()[i] == doctest::Approx(expect).epsilon(1e-6));

    // single spatial-batch element in train mode is rejected
    auto x1 = Tensor<float>::filled({1, 2, 1, 1}, 1.0f);
    auto bn3 = BatchNormState<float>::make(2);
    CHECK_THROWS_AS(batchnorm(x1, bn3, Mode::kTrain), std::invalid_argument);
}

TEST_CASE("relu, concat, softmax examples") {
    auto x = Tensor<float>::from_data({1, 1, 1, 2}, {-1.0f, 2.0f});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 2.0f);

    Rng rng(9);
    auto a = random_tensor<float>({1, 64, 6, 8}, rng);
    auto b = random_tensor<float>({1, 64, 6, 8}, rng);
    auto cat = concat_channels<float>({a, b});
    CHECK(cat.shape() == Shape{1, 128, 6, 8});
    CHECK(cat.data()[0] == a.data()[0]);
    CHECK(cat.data()[64 * 48] == b.data()[0]);
    auto bad = random_tensor<float>({1, 64, 5, 8}, rng);
    CHECK_THROWS_AS(concat_channels<float>({a, bad}), std::invalid_argument);

    auto logits = Tensor<float>::filled({1, 11, 2, 2}, 0.37f);
    auto p = softmax_channels(logits);
    for (std::int64_t i = 0; i < p.size(); ++i) CHECK(p.data()[i] == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("softmax: sums to one and stays in [0,1] on random logits") {
    Rng rng(10);
    auto x = random_tensor<float>({2, 11, 5, 6}, rng, false, -8.0f, 8.0f);
    auto p = softmax_channels(x);
    const std::int64_t hw = 30;
    for (int img = 0; img < 2; ++img)
        for (std::int64_t px = 0; px < hw; ++px) {
            double sum = 0;
            for (int ch = 0; ch < 11; ++ch) {
                const double v = p.data()[(img * 11 + ch) * hw + px];
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
}

TEST_CASE("ops are deterministic given identical inputs") {
    Rng rng(11);
    auto x = random_tensor<float>({1, 3, 8, 10}, rng);
    auto p = random_conv<float>(3, 8, 3, 1, 1, rng);
    auto y1 = conv2d(x, p);
    auto y2 = conv2d(x, p);
    CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * static_cast<size_t>(y1.size())) == 0);

    auto s1 = softmax_channels(avgpool3_s1(upsample_bilinear2x(x)));
    auto s2 = softmax_channels(avgpool3_s1(upsample_bilinear2x(x)));
    CHECK(std::memcmp(s1.data(), s2.data(), sizeof(float) * static_cast<size_t>(s1.size())) == 0);
}

TEST_CASE("same-padding stride-1 conv preserves spatial shape for odd kernels") {
    Rng rng(12);
    for (int k : {1, 3, 5}) {
        auto x = random_tensor<float>({1, 2, 9, 13}, rng);
        auto p = random_conv<float>(2, 3, k, 1, (k - 1) / 2, rng);
        auto y = conv2d(x, p);
        CHECK(y.dim(2) == 9);
        CHECK(y.dim(3) == 13);
    }
}

// --- gradient verification -------------------------------------------------

TEST_CASE("grad_check: 1x1 conv is exact for linear maps") {
    Rng rng(20);
    auto x = random_tensor<double>({1, 2, 4, 5}, rng, true);
    auto p = random_conv<double>(2, 3, 1, 1, 0, rng);
    auto rep = grad_check([&] { return conv2d(x, p); }, {{"x", x}, {"w", p.weight}, {"b", p.bias}}, 1e-3);
    CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("grad_check: every substrate op within 1e-4") {
    Rng rng(21);

    auto x = random_tensor<double>({2, 3, 6, 8}, rng, true);
    auto p = random_conv<double>(3, 4, 3, 1, 1, rng);
    CHECK(grad_check([&] { return conv2d(x, p); }, {{"x", x}, {"w", p.weight}, {"b", p.bias}}).max_rel_error < 1e-4);

    auto ps = random_conv<double>(3, 2, 3, 2, 0, rng);
    CHECK(grad_check([&] { return conv2d(x, ps); }, {{"x", x}, {"w", ps.weight}}).max_rel_error < 1e-4);

    // keep pool inputs away from ties so the objective stays smooth
    auto xp = random_tensor<double>({1, 2, 4, 6}, rng, true);
    {
        std::int64_t i = 0;
        for (auto& v : xp.values()) v += 0.01 * static_cast<double>(i++);
    }
    CHECK(grad_check([&] { return maxpool2(xp); }, {{"x", xp}}).max_rel_error < 1e-4);

    auto xu = random_tensor<double>({1, 2, 3, 4}, rng, true);
    CHECK(grad_check([&] { return upsample_bilinear2x(xu); }, {{"x", xu}}).max_rel_error < 1e-4);
    CHECK(grad_check([&] { return avgpool3_s1(xu); }, {{"x", xu}}).max_rel_error < 1e-4);

    auto xb = random_tensor<double>({2, 2, 3, 4}, rng, true);
    auto bn = BatchNormState<double>::make(2);
    bn.gamma.values() = {1.3, 0.8};
    bn.beta.values() = {0.1, -0.2};
    CHECK(grad_check([&] { return batchnorm(xb, bn, Mode::kTrain); },
                     {{"x", xb}, {"gamma", bn.gamma}, {"beta", bn.beta}})
              .max_rel_error < 1e-4);
    bn.running_mean = {0.2, -0.1};
    bn.running_var = {1.5, 0.7};
    CHECK(grad_check([&] { return batchnorm(xb, bn, Mode::kEval); },
                     {{"x", xb}, {"gamma", bn.gamma}, {"beta", bn.beta}})
              .max_rel_error < 1e-4);

    // relu: keep inputs away from the kink
    auto xr = random_tensor<double>({1, 2, 3, 5}, rng, true);
    for (auto& v : xr.values())
        if (std::abs(v) < 0.05) v = 0.1;
    CHECK(grad_check([&] { return relu(xr); }, {{"x", xr}}).max_rel_error < 1e-4);

    auto xc1 = random_tensor<double>({1, 2, 3, 4}, rng, true);
    auto xc2 = random_tensor<double>({1, 3, 3, 4}, rng, true);
    CHECK(grad_check([&] { return concat_channels<double>({xc1, xc2}); }, {{"a", xc1}, {"b", xc2}}).max_rel_error <
          1e-4);

    auto xsm = random_tensor<double>({1, 4, 3, 4}, rng, true);
    CHECK(grad_check([&] { return softmax_channels(xsm); }, {{"x", xsm}}).max_rel_error < 1e-4);
}

TEST_CASE("grad_check: conv-bn-relu stack composes within 1e-4") {
    Rng rng(22);
    auto x = random_tensor<double>({1, 2, 4, 8}, rng, true);
    auto p1 = random_conv<double>(2, 4, 3, 1, 1, rng);
    auto p2 = random_conv<double>(4, 4, 3, 1, 1, rng);
    auto p3 = random_conv<double>(4, 3, 1, 1, 0, rng);
    auto bn1 = BatchNormState<double>::make(4);
    auto bn2 = BatchNormState<double>::make(4);
    auto fwd = [&] {
        auto h1 = relu(batchnorm(conv2d(x, p1), bn1, Mode::kTrain));
        auto h2 = relu(batchnorm(conv2d(h1, p2), bn2, Mode::kTrain));
        return conv2d(h2, p3);
    };
    auto rep = grad_check(fwd,
                          {{"x", x},
                           {"w1", p1.weight},
                           {"b1", p1.bias},
                           {"g1", bn1.gamma},
                           {"w2", p2.weight},
                           {"g2", bn2.gamma},
                           {"beta2", bn2.beta},
                           {"w3", p3.weight},
                           {"b3", p3.bias}});
    CHECK(rep.max_rel_error < 1e-4);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "fetalseg/grad_check.hpp"
#include "fetalseg/model.hpp"
#include "oracles.hpp"

using namespace fetalseg;

namespace {

ModelConfig desk_config(double scale, int h = 160, int w = 288) {
    ModelConfig c;
    c.scale = scale;
    c.height = h;
    c.width = w;
    return c;
}

std::int64_t kernel_weight_count(SegNet<float>& net) {
    std::int64_t n = 0;
    for (auto& p : net.parameters())
        if (p.shape().size() == 4) n += p.size();
    return n;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig bad = desk_config(1.0 / 3.0);  // 64/3 is not an integer
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    ModelConfig odd = desk_config(1.0, 150, 288);  // 150 not divisible by 16
    CHECK_THROWS_AS(odd.validate(), std::invalid_argument);

    CHECK_NOTHROW(desk_config(0.125).validate());
    CHECK_NOTHROW(desk_config(1.0).validate());
}

TEST_CASE("parameter count: single conv and hand-counted inception block") {
    // 1x1 conv 3 -> 5 with bias: 3*5 + 5
    Rng rng(1);
    auto conv = detail::make_conv<float>(3, 5, 1, 0, rng);
    CHECK(conv.weight.size() + conv.bias.size() == 20);

    // Inception block 64 -> 64, counted conv by conv (q = 16):
    //   3 x 1x1 reduce/proj (64*16 w + 16 b + 32 bn)
    //   1 x 1x1 direct      (64*16 w + 16 b + 32 bn)
    //   3 x 3x3             (16*16*9 w + 16 b + 32 bn)
    const std::int64_t one_by_one = 64 * 16 + 16 + 32;
    const std::int64_t three_by_three = 16 * 16 * 9 + 16 + 32;
    const std::int64_t expected = 4 * one_by_one + 3 * three_by_three;
    auto block = InceptionABlock<float>::make(64, 64, rng);
    std::int64_t total = 0;
    block.visit([&total](Tensor<float>& t) { total += t.size(); });
    CHECK(total == expected);
}

TEST_CASE("parameter count: full-scale model lands in the 38M band") {
    auto net = build_model<float>(desk_config(1.0), 7);
    const std::int64_t n = count_parameters(net);
    CHECK(n >= 32000000);
    CHECK(n <= 44000000);
    // regression anchor, from per-block arithmetic
    CHECK(n == 37507707);
}

TEST_CASE("parameter count: doubling scale multiplies kernel weights by ~4") {
    auto a = build_model<float>(desk_config(0.125), 3);
    auto b = build_model<float>(desk_config(0.25), 3);
    const double ratio = static_cast<double>(kernel_weight_count(b)) / static_cast<double>(kernel_weight_count(a));
    CHECK(ratio > 4.0 * 0.95);
    CHECK(ratio < 4.0 * 1.05);
}

TEST_CASE("forward: shape contract and probability simplex") {
    auto net = build_model<float>(desk_config(0.0625, 32, 64), 11);
    auto x = Tensor<float>::filled({2, 1, 32, 64}, 0.5f);
    auto probs = net.forward(x, Mode::kTrain);
    REQUIRE(probs.shape() == Shape{2, 11, 32, 64});
    const std::int64_t hw = 32 * 64;
    for (int img = 0; img < 2; ++img)
        for (std::int64_t p = 0; p < hw; ++p) {
            double sum = 0;
            for (int ch = 0; ch < 11; ++ch) sum += probs.data()[(img * 11 + ch) * hw + p];
            CHECK(std::abs(sum - 1.0) < 1e-5);
        }

    auto wrong = Tensor<float>::filled({1, 1, 64, 64}, 0.5f);
    CHECK_THROWS_AS(net.forward(wrong, Mode::kEval), std::invalid_argument);
}

TEST_CASE("forward: scale 1/8 on the full input size") {
    auto net = build_model<float>(desk_config(0.125), 5);
    Rng rng(2);
    std::vector<float> img(160 * 288);
    for (auto& v : img) v = static_cast<float>(rng.uniform01());
    auto x = Tensor<float>::from_data({1, 1, 160, 288}, img);
    auto probs = net.forward(x, Mode::kEval);
    CHECK(probs.shape() == Shape{1, 11, 160, 288});
}

TEST_CASE("encoder level output shapes halve per level") {
    auto net = build_model<float>(desk_config(0.125), 9);
    auto x = Tensor<float>::filled({1, 1, 160, 288}, 0.3f);
    Tensor<float> cur = x;
    int h = 160, w = 288;
    for (int lvl = 0; lvl < 4; ++lvl) {
        cur = net.encoder[static_cast<size_t>(lvl)].forward(cur, Mode::kEval);
        CHECK(cur.dim(2) == h);
        CHECK(cur.dim(3) == w);
        cur = maxpool2(cur);
        h /= 2;
        w /= 2;
        CHECK(cur.dim(2) == h);
        CHECK(cur.dim(3) == w);
    }
}

TEST_CASE("determinism: same seed gives bit-identical weights, eval forward repeatable") {
    auto a = build_model<float>(desk_config(0.0625, 32, 32), 42);
    auto b = build_model<float>(desk_config(0.0625, 32, 32), 42);
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].size() == pb[i].size());
        CHECK(std::memcmp(pa[i].data(), pb[i].data(), sizeof(float) * static_cast<size_t>(pa[i].size())) == 0);
    }
    auto c = build_model<float>(desk_config(0.0625, 32, 32), 43);
    CHECK(std::memcmp(a.parameters()[0].data(), c.parameters()[0].data(),
                      sizeof(float) * static_cast<size_t>(pa[0].size())) != 0);

    auto x = Tensor<float>::filled({1, 1, 32, 32}, 0.25f);
    auto y1 = a.forward(x, Mode::kEval);
    auto y2 = a.forward(x, Mode::kEval);
    CHECK(std::memcmp(y1.data(), y2.data(), sizeof(float) * static_cast<size_t>(y1.size())) == 0);
}

TEST_CASE("predict_mask: one-hot, uniform ties, and random oracle") {
    // one-hot probabilities reproduce the class map
    const int h = 3, w = 4, c = 11;
    std::vector<float> onehot(static_cast<size_t>(c) * h * w, 0.0f);
    std::vector<std::uint8_t> classes(static_cast<size_t>(h) * w);
    Rng rng(3);
    for (int p = 0; p < h * w; ++p) {
        classes[static_cast<size_t>(p)] = static_cast<std::uint8_t>(rng.below(c));
        onehot[static_cast<size_t>(classes[static_cast<size_t>(p)]) * h * w + p] = 1.0f;
    }
    auto probs = Tensor<float>::from_data({1, c, h, w}, onehot);
    auto mask = predict_mask(probs);
    for (int p = 0; p < h * w; ++p) CHECK(mask.data[static_cast<size_t>(p)] == classes[static_cast<size_t>(p)]);

    // uniform probabilities tie-break to class 0
    auto uni = Tensor<float>::filled({1, c, h, w}, 1.0f / c);
    auto zmask = predict_mask(uni);
    for (auto v : zmask.data) CHECK(v == 0);

    // random tensor against the exhaustive per-pixel scan
    std::vector<float> rnd(static_cast<size_t>(2) * c * h * w);
    for (auto& v : rnd) v = static_cast<float>(rng.uniform01());
    auto rt = Tensor<float>::from_data({2, c, h, w}, rnd);
    auto rmask = predict_mask(rt);
    auto ref = oracle::argmax_channels(rnd, 2, c, h, w);
    CHECK(rmask.data == ref);
}

TEST_CASE("predict_mask is invariant to monotone logit rescaling") {
    auto net = build_model<float>(desk_config(0.0625, 32, 32), 17);
    Rng rng(4);
    std::vector<float> img(32 * 32);
    for (auto& v : img) v = static_cast<float>(rng.uniform01());
    auto x = Tensor<float>::from_data({1, 1, 32, 32}, img);
    auto logits = net.forward_logits(x, Mode::kEval);
    auto mask1 = predict_mask(softmax_channels(logits));

    std::vector<float> scaled(logits.values());
    for (auto& v : scaled) v = 1.9f * v + 0.7f;  // strictly monotone
    auto mask2 = predict_mask(softmax_channels(Tensor<float>::from_data(logits.shape(), scaled)));
    CHECK(mask1.data == mask2.data);
}

TEST_CASE("checkpoint: round trip preserves everything") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "fetalseg_ckpt_test.bin").string();

    auto net = build_model<float>(desk_config(0.0625, 32, 32), 99);
    // make running stats non-trivial
    auto x = Tensor<float>::filled({2, 1, 32, 32}, 0.4f);
    (void)net.forward(x, Mode::kTrain);

    CheckpointMeta meta;
    meta.seed = 99;
    meta.step = 1234;
    meta.val_loss = 0.271828;
    save_checkpoint(net, meta, path);

    CheckpointMeta got;
    auto loaded = load_checkpoint(path, &got);
    CHECK(got.seed == 99);
    CHECK(got.step == 1234);
    CHECK(got.val_loss == doctest::Approx(0.271828));
    CHECK(loaded.config.scale == doctest::Approx(0.0625));

    auto pa = net.parameters(), pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(std::memcmp(pa[i].data(), pb[i].data(), sizeof(float) * static_cast<size_t>(pa[i].size())) == 0);
    auto ba = net.batchnorms(), bb = loaded.batchnorms();
    for (size_t i = 0; i < ba.size(); ++i) {
        CHECK(ba[i]->running_mean == bb[i]->running_mean);
        CHECK(ba[i]->running_var == bb[i]->running_var);
    }
    fs::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), LoadError);
}

TEST_CASE("composite gradient check at tiny scale") {
    // 32x32 input through the full net; coordinate-sampled finite differences
    auto net = build_model<double>(desk_config(0.0625, 32, 32), 5);
    Rng rng(6);
    std::vector<double> img(2 * 32 * 32);
    for (auto& v : img) v = rng.uniform01();
    auto x = Tensor<double>::from_data({2, 1, 32, 32}, img, true);

    std::vector<std::pair<std::string, Tensor<double>>> inputs = {{"input", x}};
    auto params = net.parameters();
    inputs.emplace_back("enc0.w", params[0]);
    inputs.emplace_back("latent.w", params[4 * 28]);
    inputs.emplace_back("dec0.w", params[5 * 28]);
    inputs.emplace_back("head.w", params[params.size() - 2]);
    inputs.emplace_back("head.b", params[params.size() - 1]);
    // step below the default: the composition holds ~1e5 relu/maxpool kinks
    // and a 1e-5 step already crosses some of them
    auto rep = grad_check([&] { return net.forward(x, Mode::kTrain); }, inputs, 3e-6, 6);
    CHECK(rep.max_rel_error < 1e-3);
}

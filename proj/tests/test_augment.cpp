#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "fetalseg/augment.hpp"
#include "fetalseg/data.hpp"

using namespace fetalseg;

namespace {

ImageF random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    ImageF img(h, w);
    for (auto& v : img.px) v = static_cast<float>(rng.uniform01());
    return img;
}

// disk of the given class on a background mask
MaskU8 disk_mask(int h, int w, int cr, int cc, int radius, std::uint8_t cls) {
    MaskU8 m(h, w, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius) m.at(r, c) = cls;
    return m;
}

Sample phantom_sample(std::uint64_t seed = 3) {
    auto v = phantom_generate(1, Plane::TV, "deviceA", DeviceProfile{}, seed);
    return v.front();
}

AugmentationConfig probs_zero() {
    AugmentationConfig c;
    c.prob = {0, 0, 0, 0, 0, 0, 0};
    return c;
}

}  // namespace

TEST_CASE("config validation") {
    AugmentationConfig ok;
    CHECK_NOTHROW(ok.validate());
    AugmentationConfig bad;
    bad.brightness[0] = 1.3;  // low > high
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    AugmentationConfig badp;
    badp.prob.shadow = 1.5;
    CHECK_THROWS_AS(badp.validate(), std::invalid_argument);
}

TEST_CASE("color_jitter: identity, constant pivot, clamping") {
    auto img = random_image(20, 30, 1);
    auto same = color_jitter(img, 1.0, 1.0);
    for (size_t i = 0; i < img.px.size(); ++i) CHECK(same.px[i] == doctest::Approx(img.px[i]).epsilon(1e-6));

    ImageF half(20, 30, 0.5f);
    auto contrasted = color_jitter(half, 1.0, 1.17);
    for (auto v : contrasted.px) CHECK(v == doctest::Approx(0.5));  // constant image is its own mean
    auto bright = color_jitter(half, 1.2, 0.93);
    for (auto v : bright.px) CHECK(v == doctest::Approx(0.6));

    auto extreme = color_jitter(random_image(16, 16, 2), 1.2, 1.2);
    for (auto v : extreme.px) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("quality_reduction: bypass, intermediate size, impulse decay") {
    auto img = random_image(kTargetHeight, kTargetWidth, 3);
    auto zero = quality_reduction(img, 0.0);
    CHECK(std::memcmp(zero.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);

    auto half = quality_reduction(img, 0.5);
    CHECK(half.h == kTargetHeight);
    CHECK(half.w == kTargetWidth);
    auto expect = resize_bilinear(resize_bilinear(img, 80, 144), kTargetHeight, kTargetWidth);
    for (size_t i = 0; i < expect.px.size(); ++i) CHECK(half.px[i] == doctest::Approx(expect.px[i]).epsilon(1e-6));

    CHECK_THROWS_AS(quality_reduction(img, 0.6), std::invalid_argument);
    CHECK_THROWS_AS(quality_reduction(img, -0.01), std::invalid_argument);

    ImageF impulse(kTargetHeight, kTargetWidth, 0.0f);
    impulse.at(80, 144) = 1.0f;
    double prev = 2.0;
    for (double s : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
        auto out = quality_reduction(impulse, s);
        double peak = 0.0;
        for (auto v : out.px) peak = std::max<double>(peak, v);
        CHECK(peak <= prev + 1e-6);
        prev = peak;
    }
}

TEST_CASE("speckle_noise: multiplicative moments and bounds") {
    ImageF zero(20, 20, 0.0f);
    Rng r1(4);
    auto z = speckle_noise(zero, 0.1, r1);
    for (auto v : z.px) CHECK(v == 0.0f);

    ImageF half(1000, 1000, 0.5f);
    Rng r2(5);
    auto noised = speckle_noise(half, 0.1, r2);
    double mean = 0.0;
    for (auto v : noised.px) mean += v / 0.5 - 1.0;
    mean /= static_cast<double>(noised.px.size());
    double var = 0.0;
    for (auto v : noised.px) {
        const double d = v / 0.5 - 1.0 - mean;
        var += d * d;
    }
    var /= static_cast<double>(noised.px.size());
    CHECK(std::abs(mean) < 0.001);
    CHECK(std::abs(std::sqrt(var) - 0.1) < 0.002);

    auto bounded = speckle_noise(random_image(50, 50, 6), 0.5, r2);
    for (auto v : bounded.px) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("cranium_extremities: ellipse, degenerate, empty") {
    MaskU8 ellipse(kTargetHeight, kTargetWidth, 0);
    for (int r = 0; r < ellipse.h; ++r)
        for (int c = 0; c < ellipse.w; ++c) {
            const double dy = (r - 80.0) / 50.0, dx = (c - 144.0) / 100.0;
            if (dy * dy + dx * dx <= 1.0) ellipse.at(r, c) = ClassMap::kCranium;
        }
    auto ext = cranium_extremities(ellipse);
    REQUIRE(ext.has_value());
    CHECK(std::abs(ext->first.c - 44) <= 1);
    CHECK(std::abs(ext->first.r - 80) <= 1);
    CHECK(std::abs(ext->second.c - 244) <= 1);
    CHECK(std::abs(ext->second.r - 80) <= 1);

    MaskU8 single(10, 10, 0);
    single.at(4, 7) = ClassMap::kCranium;
    auto se = cranium_extremities(single);
    REQUIRE(se.has_value());
    CHECK(se->first.r == 4);
    CHECK(se->first.c == 7);
    CHECK(se->second.r == 4);
    CHECK(se->second.c == 7);

    MaskU8 empty(10, 10, 0);
    CHECK(!cranium_extremities(empty).has_value());
}

TEST_CASE("acoustic_shadow: darkens its footprint, leaves the far field") {
    ImageF img(kTargetHeight, kTargetWidth, 0.6f);
    ShadowParams p;
    p.left_anchor = {80, 44};
    p.right_anchor = {80, 244};
    p.left_width = 85;
    p.right_width = 92;
    p.left_angle_deg = 16;
    p.right_angle_deg = 19;
    auto out = acoustic_shadow(img, p, 0.8, 8.0);

    // independent band-membership oracle
    auto in_band = [](const PixelRC& anchor, double width, double angle_deg, double side, int r, int c) {
        const double a = angle_deg * 3.14159265358979323846 / 180.0;
        const double uy = std::cos(a), ux = side * std::sin(a);
        const double vy = r - anchor.r, vx = c - anchor.c;
        if (vy * uy + vx * ux < 0.0) return false;
        return std::abs(vy * -ux + vx * uy) <= width / 2.0;
    };
    double in_pre = 0, in_post = 0;
    int n_in = 0;
    const int margin = 25;  // 3 sigma, rounded up
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            const bool left = in_band(p.left_anchor, p.left_width, p.left_angle_deg, -1, r, c);
            const bool right = in_band(p.right_anchor, p.right_width, p.right_angle_deg, +1, r, c);
            if (left || right) {
                in_pre += img.at(r, c);
                in_post += out.at(r, c);
                ++n_in;
            } else {
                bool near = false;
                for (int dr = -margin; dr <= margin && !near; dr += 5)
                    for (int dc = -margin; dc <= margin && !near; dc += 5)
                        if (r + dr >= 0 && r + dr < img.h && c + dc >= 0 && c + dc < img.w &&
                            (in_band(p.left_anchor, p.left_width, p.left_angle_deg, -1, r + dr, c + dc) ||
                             in_band(p.right_anchor, p.right_width, p.right_angle_deg, +1, r + dr, c + dc)))
                            near = true;
                if (!near) CHECK(std::abs(out.at(r, c) - img.at(r, c)) < 1e-6);
            }
        }
    REQUIRE(n_in > 0);
    CHECK(in_post / n_in < in_pre / n_in);
    CHECK(in_post / n_in < 0.9 * in_pre / n_in);
}

TEST_CASE("acoustic_shadow via pipeline: no cranium means identity") {
    Sample s;
    s.id = "no-cranium";
    s.image = random_image(kTargetHeight, kTargetWidth, 7);
    s.mask = MaskU8(kTargetHeight, kTargetWidth, 0);
    s.plane = Plane::TV;
    AugmentationConfig cfg = probs_zero();
    cfg.prob.shadow = 1.0;
    SampleAudit audit;
    auto out = apply_pipeline(s, cfg, 11, 0, &audit);
    CHECK(std::memcmp(out.image.px.data(), s.image.px.data(), s.image.px.size() * sizeof(float)) == 0);
    bool found = false;
    for (const auto& op : audit.ops)
        if (op.op == "shadow") {
            found = true;
            CHECK(!op.applied);
            CHECK(op.note == "no-cranium");
        }
    CHECK(found);
}

TEST_CASE("affine_transform: identity, translation consistency, round trip") {
    auto img = random_image(kTargetHeight, kTargetWidth, 8);
    auto mask = disk_mask(kTargetHeight, kTargetWidth, 80, 144, 30, 2);

    auto [ii, im] = affine_transform(img, mask, AffineParams{});
    CHECK(std::memcmp(ii.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);
    CHECK(im.px == mask.px);

    // pure translation moves image and mask by the same integer offset
    AffineParams tp;
    tp.translate_axis = 0;
    tp.translate_px = 42;
    auto [ti, tm] = affine_transform(img, mask, tp);
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            if (r - 42 >= 0) {
                CHECK(ti.at(r, c) == img.at(r - 42, c));
                CHECK(tm.at(r, c) == mask.at(r - 42, c));
            } else {
                CHECK(ti.at(r, c) == 0.0f);
                CHECK(tm.at(r, c) == 0);
            }
        }

    // +20 then -20 degrees keeps an interior disk almost intact
    AffineParams rot;
    rot.rotate_deg = 20;
    auto [ri, rm] = affine_transform(img, mask, rot);
    rot.rotate_deg = -20;
    auto [ri2, rm2] = affine_transform(ri, rm, rot);
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < mask.px.size(); ++i) {
        const bool a = mask.px[i] == 2, b = rm2.px[i] == 2;
        inter += a && b;
        uni += a || b;
    }
    CHECK(static_cast<double>(inter) / static_cast<double>(uni) > 0.98);
}

TEST_CASE("affine_transform: mask never invents classes; config range enforcement") {
    Rng rng(9);
    auto img = random_image(kTargetHeight, kTargetWidth, 10);
    MaskU8 mask(kTargetHeight, kTargetWidth, 0);
    for (auto& v : mask.px) v = static_cast<std::uint8_t>(rng.below(4) == 0 ? rng.below(11) : 0);
    std::set<std::uint8_t> input_classes(mask.px.begin(), mask.px.end());
    input_classes.insert(0);  // fill value

    AffineParams p;
    p.zoom = 0.8;
    p.rotate_deg = 13.0;
    p.shear = 0.15;
    p.translate_axis = 1;
    p.translate_px = -47;
    auto [oi, om] = affine_transform(img, mask, p);
    for (auto v : om.px) CHECK(input_classes.count(v) == 1);

    AugmentationConfig cfg;
    AffineParams bad;
    bad.zoom = 1.5;  // outside [0.6, 1.2]
    CHECK_THROWS_AS(affine_transform(img, mask, bad, &cfg), std::invalid_argument);
    AffineParams small;
    small.translate_px = 10;  // magnitude below [40, 60]
    CHECK_THROWS_AS(affine_transform(img, mask, small, &cfg), std::invalid_argument);
}

TEST_CASE("elastic_deform: identity hook and displacement bound") {
    auto img = random_image(kTargetHeight, kTargetWidth, 11);
    auto mask = disk_mask(kTargetHeight, kTargetWidth, 80, 144, 40, 5);
    Rng rng(12);
    auto [zi, zm] = elastic_deform(img, mask, 50.0, 0.0, rng);
    CHECK(std::memcmp(zi.px.data(), img.px.data(), img.px.size() * sizeof(float)) == 0);
    CHECK(zm.px == mask.px);

    // ramps encode source coordinates: bilinear warp of a linear ramp reads
    // back the (clamped) source position exactly
    ImageF ramp_c(kTargetHeight, kTargetWidth), ramp_r(kTargetHeight, kTargetWidth);
    for (int r = 0; r < ramp_c.h; ++r)
        for (int c = 0; c < ramp_c.w; ++c) {
            ramp_c.at(r, c) = static_cast<float>(c) / (kTargetWidth - 1);
            ramp_r.at(r, c) = static_cast<float>(r) / (kTargetHeight - 1);
        }
    for (std::uint64_t seed : {21, 22, 23}) {
        Rng r1(seed), r2(seed);
        auto [wc, unused1] = elastic_deform(ramp_c, mask, 50.0, 50.0, r1);
        auto [wr, unused2] = elastic_deform(ramp_r, mask, 50.0, 50.0, r2);
        for (int r = 0; r < wc.h; ++r)
            for (int c = 0; c < wc.w; ++c) {
                CHECK(std::abs(wc.at(r, c) * (kTargetWidth - 1) - c) <= 50.0 + 1e-2);
                CHECK(std::abs(wr.at(r, c) * (kTargetHeight - 1) - r) <= 50.0 + 1e-2);
            }
    }
}

TEST_CASE("elastic_deform: disk area roughly preserved over seeded trials") {
    auto img = random_image(kTargetHeight, kTargetWidth, 13);
    auto mask = disk_mask(kTargetHeight, kTargetWidth, 80, 144, 40, 5);
    std::int64_t before = 0;
    for (auto v : mask.px) before += (v == 5);
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + static_cast<std::uint64_t>(trial));
        auto [unused, m] = elastic_deform(img, mask, 50.0, 50.0, rng);
        std::int64_t after = 0;
        for (auto v : m.px) after += (v == 5);
        CHECK(std::abs(static_cast<double>(after - before)) / static_cast<double>(before) < 0.15);
    }
}

TEST_CASE("motion_blur: constant, plateau, mean preservation") {
    ImageF flat(60, 80, 0.37f);
    auto fb = motion_blur(flat, 1.1, 50);
    for (auto v : fb.px) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));

    ImageF line(kTargetHeight, kTargetWidth, 0.0f);
    for (int r = 0; r < line.h; ++r) line.at(r, 144) = 1.0f;
    auto lb = motion_blur(line, 0.0, 50);  // horizontal blur
    const int r_probe = 80;
    int plateau = 0;
    for (int c = 0; c < line.w; ++c) {
        const float v = lb.at(r_probe, c);
        if (v > 1e-6f) {
            ++plateau;
            CHECK(v == doctest::Approx(1.0 / 50.0).epsilon(1e-4));
        }
    }
    CHECK(plateau == 50);

    auto img = random_image(120, 200, 14);
    double mean_in = 0, mean_out = 0;
    auto mb = motion_blur(img, 0.73, 50);
    for (auto v : img.px) mean_in += v;
    for (auto v : mb.px) mean_out += v;
    mean_in /= static_cast<double>(img.px.size());
    mean_out /= static_cast<double>(mb.px.size());
    CHECK(std::abs(mean_in - mean_out) < 1e-3);
}

TEST_CASE("apply_pipeline: identity at zero probability, determinism, validity") {
    Sample s = phantom_sample();
    auto zero = apply_pipeline(s, probs_zero(), 5, 0);
    CHECK(std::memcmp(zero.image.px.data(), s.image.px.data(), s.image.px.size() * sizeof(float)) == 0);
    CHECK(zero.mask.px == s.mask.px);

    AugmentationConfig cfg;  // default 0.5 probabilities
    auto a = apply_pipeline(s, cfg, 42, 3);
    auto b = apply_pipeline(s, cfg, 42, 3);
    CHECK(std::memcmp(a.image.px.data(), b.image.px.data(), a.image.px.size() * sizeof(float)) == 0);
    CHECK(a.mask.px == b.mask.px);
    auto c = apply_pipeline(s, cfg, 42, 4);
    CHECK(std::memcmp(a.image.px.data(), c.image.px.data(), a.image.px.size() * sizeof(float)) != 0);

    for (int epoch = 0; epoch < 8; ++epoch) {
        auto out = apply_pipeline(s, cfg, 7, epoch);
        CHECK(out.image.h == kTargetHeight);
        CHECK(out.image.w == kTargetWidth);
        for (auto v : out.image.px) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (auto v : out.mask.px) CHECK(ClassMap::allowed(out.plane, v));
    }
}

TEST_CASE("apply_pipeline: photometric ops never touch the mask") {
    Sample s = phantom_sample(17);
    AugmentationConfig cfg = probs_zero();
    cfg.prob.shadow = 1.0;
    cfg.prob.motion_blur = 1.0;
    cfg.prob.quality = 1.0;
    cfg.prob.color_jitter = 1.0;
    cfg.prob.speckle = 1.0;
    for (int epoch = 0; epoch < 20; ++epoch) {
        auto out = apply_pipeline(s, cfg, 23, epoch);
        CHECK(out.mask.px == s.mask.px);
    }
}

TEST_CASE("apply_pipeline: drawn parameters stay inside configured ranges") {
    Sample s = phantom_sample(19);
    AugmentationConfig cfg;
    cfg.prob = {1, 1, 1, 1, 1, 1, 1};
    auto in_range = [](double v, const double r[2]) { return v >= r[0] && v <= r[1]; };
    for (int draw = 0; draw < 200; ++draw) {
        SampleAudit audit;
        (void)apply_pipeline(s, cfg, 99, draw, &audit);
        for (const auto& op : audit.ops) {
            REQUIRE(op.applied);
            std::map<std::string, double> p(op.params.begin(), op.params.end());
            if (op.op == "affine") {
                CHECK(in_range(p.at("zoom"), cfg.zoom));
                CHECK(in_range(p.at("rotate_deg"), cfg.rotate_deg));
                CHECK(in_range(p.at("translate_px"), cfg.translate_px));
                CHECK(in_range(p.at("shear"), cfg.shear));
            } else if (op.op == "shadow") {
                CHECK(in_range(p.at("left_width"), cfg.shadow_width));
                CHECK(in_range(p.at("right_width"), cfg.shadow_width));
                CHECK(in_range(p.at("left_angle_deg"), cfg.shadow_angle_deg));
                CHECK(in_range(p.at("right_angle_deg"), cfg.shadow_angle_deg));
            } else if (op.op == "quality") {
                CHECK(in_range(p.at("severity"), cfg.quality));
            } else if (op.op == "color_jitter") {
                CHECK(in_range(p.at("brightness"), cfg.brightness));
                CHECK(in_range(p.at("contrast"), cfg.contrast));
            }
        }
    }
}

TEST_CASE("audit serializes to JSON") {
    Sample s = phantom_sample(20);
    AugmentationConfig cfg;
    SampleAudit audit;
    (void)apply_pipeline(s, cfg, 1, 2, &audit);
    const std::string j = audit_to_json(audit);
    CHECK(j.find("\"sample_id\"") != std::string::npos);
    CHECK(j.find("\"ops\"") != std::string::npos);
    CHECK(audit.ops.size() == 7);
}

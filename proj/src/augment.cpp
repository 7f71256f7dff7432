#include "fetalseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

namespace fetalseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_range(const double range[2], const char* what) {
    if (!(range[0] <= range[1]))
        throw std::invalid_argument(std::string("augmentation config: ") + what + " range low > high");
}

void check_prob(double p, const char* what) {
    if (p < 0.0 || p > 1.0)
        throw std::invalid_argument(std::string("augmentation config: ") + what + " probability outside [0,1]");
}

int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace

void AugmentationConfig::validate() const {
    check_range(brightness, "brightness");
    check_range(contrast, "contrast");
    check_range(quality, "quality");
    check_range(shadow_width, "shadow width");
    check_range(shadow_angle_deg, "shadow angle");
    check_range(zoom, "zoom");
    check_range(rotate_deg, "rotation");
    check_range(translate_px, "translation");
    check_range(shear, "shear");
    if (speckle_std < 0.0) throw std::invalid_argument("augmentation config: negative speckle std");
    if (quality[0] < 0.0 || quality[1] > 0.5)
        throw std::invalid_argument("augmentation config: quality range outside [0,0.5]");
    if (motion_blur_len < 1) throw std::invalid_argument("augmentation config: motion blur length < 1");
    check_prob(prob.affine, "affine");
    check_prob(prob.elastic, "elastic");
    check_prob(prob.shadow, "shadow");
    check_prob(prob.motion_blur, "motion blur");
    check_prob(prob.quality, "quality");
    check_prob(prob.color_jitter, "color jitter");
    check_prob(prob.speckle, "speckle");
}

std::string audit_to_json(const SampleAudit& audit) {
    nlohmann::json ops = nlohmann::json::array();
    for (const auto& op : audit.ops) {
        nlohmann::json o{{"op", op.op}, {"applied", op.applied}};
        if (!op.note.empty()) o["note"] = op.note;
        for (const auto& [k, v] : op.params) o[k] = v;
        ops.push_back(std::move(o));
    }
    return nlohmann::json{{"sample_id", audit.sample_id}, {"epoch", audit.epoch}, {"seed", audit.seed}, {"ops", ops}}
        .dump();
}

ImageF color_jitter(const ImageF& image, double brightness, double contrast) {
    double mean = 0.0;
    for (float v : image.px) mean += v;
    mean /= static_cast<double>(image.px.size());
    ImageF out(image.h, image.w);
    const float m = static_cast<float>(mean);
    const float k = static_cast<float>(contrast);
    const float b = static_cast<float>(brightness);
    for (size_t i = 0; i < image.px.size(); ++i) out.px[i] = clamp01(clamp01(k * (image.px[i] - m) + m) * b);
    return out;
}

ImageF quality_reduction(const ImageF& image, double severity) {
    if (severity < 0.0 || severity > 0.5)
        throw std::invalid_argument("quality_reduction: severity " + std::to_string(severity) + " outside [0,0.5]");
    if (severity == 0.0) return image;
    const int ih = std::max(1, static_cast<int>(std::llround(image.h * (1.0 - severity))));
    const int iw = std::max(1, static_cast<int>(std::llround(image.w * (1.0 - severity))));
    return resize_bilinear(resize_bilinear(image, ih, iw), image.h, image.w);
}

ImageF speckle_noise(const ImageF& image, double sigma, Rng& rng) {
    ImageF out(image.h, image.w);
    for (size_t i = 0; i < image.px.size(); ++i)
        out.px[i] = clamp01(image.px[i] * static_cast<float>(1.0 + rng.normal(0.0, sigma)));
    return out;
}

ImageF motion_blur(const ImageF& image, double angle_rad, int length) {
    // integer-rounded taps along the line; duplicates merge their weight
    const double cx = std::cos(angle_rad), sy = std::sin(angle_rad);
    const int half = (length - 1) / 2;
    std::map<std::pair<int, int>, double> taps;
    for (int i = 0; i < length; ++i) {
        const double t = static_cast<double>(i - half);
        const int dr = static_cast<int>(std::llround(t * sy));
        const int dc = static_cast<int>(std::llround(t * cx));
        taps[{dr, dc}] += 1.0;
    }
    double total = 0.0;
    for (const auto& [k, v] : taps) total += v;
    ImageF out(image.h, image.w);
    for (int r = 0; r < image.h; ++r)
        for (int c = 0; c < image.w; ++c) {
            double acc = 0.0;
            for (const auto& [off, wgt] : taps)
                acc += wgt * image.at(reflect(r + off.first, image.h), reflect(c + off.second, image.w));
            out.at(r, c) = static_cast<float>(acc / total);
        }
    return out;
}

std::optional<std::pair<PixelRC, PixelRC>> cranium_extremities(const MaskU8& mask) {
    int min_c = mask.w, max_c = -1;
    for (int r = 0; r < mask.h; ++r)
        for (int c = 0; c < mask.w; ++c)
            if (mask.at(r, c) == ClassMap::kCranium) {
                min_c = std::min(min_c, c);
                max_c = std::max(max_c, c);
            }
    if (max_c < 0) return std::nullopt;
    auto median_row = [&mask](int col) {
        std::vector<int> rows;
        for (int r = 0; r < mask.h; ++r)
            if (mask.at(r, col) == ClassMap::kCranium) rows.push_back(r);
        return rows[(rows.size() - 1) / 2];
    };
    return std::make_pair(PixelRC{median_row(min_c), min_c}, PixelRC{median_row(max_c), max_c});
}

ImageF acoustic_shadow(const ImageF& image, const ShadowParams& p, double strength, double blur_sigma) {
    std::vector<float> occ(image.px.size(), 0.0f);
    // band axis points down and away from the cranium, at `angle` off vertical
    auto rasterize = [&](PixelRC anchor, double width, double angle_deg, double side) {
        const double a = angle_deg * kPi / 180.0;
        const double uy = std::cos(a);            // down
        const double ux = side * std::sin(a);     // outward
        const double ny = -ux, nx = uy;           // perpendicular
        size_t i = 0;
        for (int r = 0; r < image.h; ++r)
            for (int c = 0; c < image.w; ++c, ++i) {
                const double vy = r - anchor.r, vx = c - anchor.c;
                const double along = vy * uy + vx * ux;
                if (along < 0.0) continue;
                const double across = std::abs(vy * ny + vx * nx);
                if (across <= width / 2.0) occ[i] = 1.0f;
            }
    };
    rasterize(p.left_anchor, p.left_width, p.left_angle_deg, -1.0);
    rasterize(p.right_anchor, p.right_width, p.right_angle_deg, +1.0);
    occ = gaussian_blur_field(occ, image.h, image.w, blur_sigma, Border::kZero);
    ImageF out(image.h, image.w);
    for (size_t i = 0; i < occ.size(); ++i)
        out.px[i] = image.px[i] * (1.0f - static_cast<float>(strength) * occ[i]);
    return out;
}

std::pair<ImageF, MaskU8> affine_transform(const ImageF& image, const MaskU8& mask, const AffineParams& p,
                                           const AugmentationConfig* config) {
    if (config != nullptr) {
        auto in_range = [](double v, const double r[2]) { return v >= r[0] && v <= r[1]; };
        if (!in_range(p.zoom, config->zoom) || !in_range(p.rotate_deg, config->rotate_deg) ||
            !in_range(p.shear, config->shear) || !in_range(std::abs(p.translate_px), config->translate_px))
            throw std::invalid_argument("affine_transform: parameters outside configured ranges");
        if (p.translate_axis != 0 && p.translate_axis != 1)
            throw std::invalid_argument("affine_transform: bad translation axis");
    }
    const double cx = (image.w - 1) / 2.0, cy = (image.h - 1) / 2.0;
    const double tx = p.translate_axis == 1 ? p.translate_px : 0.0;
    const double ty = p.translate_axis == 0 ? p.translate_px : 0.0;
    Affine2D fwd = Affine2D::translation(-cx, -cy)
                       .then(Affine2D::scaling(p.zoom))
                       .then(Affine2D::shear_x(p.shear))
                       .then(Affine2D::rotation(p.rotate_deg * kPi / 180.0))
                       .then(Affine2D::translation(cx + tx, cy + ty));
    const Affine2D inv = fwd.inverse();
    return {warp_affine_bilinear(image, inv, 0.0f), warp_affine_nearest(mask, inv, ClassMap::kBackground)};
}

std::pair<ImageF, MaskU8> elastic_deform(const ImageF& image, const MaskU8& mask, double sigma, double alpha,
                                         Rng& rng) {
    const size_t n = image.px.size();
    std::vector<float> dy(n), dx(n);
    for (size_t i = 0; i < n; ++i) dy[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (size_t i = 0; i < n; ++i) dx[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    dy = gaussian_blur_field(dy, image.h, image.w, sigma, Border::kZero);
    dx = gaussian_blur_field(dx, image.h, image.w, sigma, Border::kZero);
    double max_mag = 0.0;
    for (size_t i = 0; i < n; ++i)
        max_mag = std::max(max_mag, std::sqrt(static_cast<double>(dy[i]) * dy[i] + static_cast<double>(dx[i]) * dx[i]));
    const float scale = max_mag > 0.0 ? static_cast<float>(alpha / max_mag) : 0.0f;
    for (size_t i = 0; i < n; ++i) {
        dy[i] *= scale;
        dx[i] *= scale;
    }
    return {warp_displace_bilinear(image, dy, dx), warp_displace_nearest(mask, dy, dx)};
}

Sample apply_pipeline(const Sample& sample, const AugmentationConfig& config, std::uint64_t seed, int epoch,
                      SampleAudit* audit) {
    config.validate();
    Rng rng(mix64(seed, fnv1a64(sample.id), static_cast<std::uint64_t>(epoch)));
    Sample out = sample;
    SampleAudit local;
    local.sample_id = sample.id;
    local.epoch = epoch;
    local.seed = seed;
    auto record = [&local](OpAudit op) { local.ops.push_back(std::move(op)); };

    // affine
    {
        OpAudit op{"affine"};
        if (rng.chance(config.prob.affine)) {
            AffineParams p;
            p.zoom = rng.uniform(config.zoom[0], config.zoom[1]);
            p.rotate_deg = rng.uniform(config.rotate_deg[0], config.rotate_deg[1]);
            const double mag = rng.uniform(config.translate_px[0], config.translate_px[1]);
            p.translate_axis = rng.chance(0.5) ? 0 : 1;
            p.translate_px = rng.chance(0.5) ? mag : -mag;
            p.shear = rng.uniform(config.shear[0], config.shear[1]);
            auto [img, msk] = affine_transform(out.image, out.mask, p, &config);
            out.image = std::move(img);
            out.mask = std::move(msk);
            op.applied = true;
            op.params = {{"zoom", p.zoom},
                         {"rotate_deg", p.rotate_deg},
                         {"translate_px", mag},
                         {"translate_axis", static_cast<double>(p.translate_axis)},
                         {"translate_sign", p.translate_px < 0 ? -1.0 : 1.0},
                         {"shear", p.shear}};
        }
        record(std::move(op));
    }
    // elastic
    {
        OpAudit op{"elastic"};
        if (rng.chance(config.prob.elastic)) {
            auto [img, msk] = elastic_deform(out.image, out.mask, config.elastic_sigma, config.elastic_alpha, rng);
            out.image = std::move(img);
            out.mask = std::move(msk);
            op.applied = true;
            op.params = {{"sigma", config.elastic_sigma}, {"alpha", config.elastic_alpha}};
        }
        record(std::move(op));
    }
    // acoustic shadow (anchored on the post-warp cranium)
    {
        OpAudit op{"shadow"};
        if (rng.chance(config.prob.shadow)) {
            auto ext = cranium_extremities(out.mask);
            if (!ext) {
                op.note = "no-cranium";
            } else {
                ShadowParams p;
                p.left_anchor = ext->first;
                p.right_anchor = ext->second;
                p.left_width = rng.uniform(config.shadow_width[0], config.shadow_width[1]);
                p.right_width = rng.uniform(config.shadow_width[0], config.shadow_width[1]);
                p.left_angle_deg = rng.uniform(config.shadow_angle_deg[0], config.shadow_angle_deg[1]);
                p.right_angle_deg = rng.uniform(config.shadow_angle_deg[0], config.shadow_angle_deg[1]);
                out.image = acoustic_shadow(out.image, p, config.shadow_strength, config.shadow_blur_sigma);
                op.applied = true;
                op.params = {{"left_width", p.left_width},
                             {"right_width", p.right_width},
                             {"left_angle_deg", p.left_angle_deg},
                             {"right_angle_deg", p.right_angle_deg},
                             {"left_anchor_r", static_cast<double>(p.left_anchor.r)},
                             {"left_anchor_c", static_cast<double>(p.left_anchor.c)},
                             {"right_anchor_r", static_cast<double>(p.right_anchor.r)},
                             {"right_anchor_c", static_cast<double>(p.right_anchor.c)}};
            }
        }
        record(std::move(op));
    }
    // motion blur
    {
        OpAudit op{"motion_blur"};
        if (rng.chance(config.prob.motion_blur)) {
            const double angle = rng.uniform(0.0, kPi);
            out.image = motion_blur(out.image, angle, config.motion_blur_len);
            op.applied = true;
            op.params = {{"angle_rad", angle}, {"length", static_cast<double>(config.motion_blur_len)}};
        }
        record(std::move(op));
    }
    // quality reduction
    {
        OpAudit op{"quality"};
        if (rng.chance(config.prob.quality)) {
            const double severity = rng.uniform(config.quality[0], config.quality[1]);
            out.image = quality_reduction(out.image, severity);
            op.applied = true;
            op.params = {{"severity", severity}};
        }
        record(std::move(op));
    }
    // color jitter
    {
        OpAudit op{"color_jitter"};
        if (rng.chance(config.prob.color_jitter)) {
            const double brightness = rng.uniform(config.brightness[0], config.brightness[1]);
            const double contrast = rng.uniform(config.contrast[0], config.contrast[1]);
            out.image = color_jitter(out.image, brightness, contrast);
            op.applied = true;
            op.params = {{"brightness", brightness}, {"contrast", contrast}};
        }
        record(std::move(op));
    }
    // speckle
    {
        OpAudit op{"speckle"};
        if (rng.chance(config.prob.speckle)) {
            out.image = speckle_noise(out.image, config.speckle_std, rng);
            op.applied = true;
            op.params = {{"std", config.speckle_std}};
        }
        record(std::move(op));
    }

    if (audit) *audit = std::move(local);
    return out;
}

}  // namespace fetalseg

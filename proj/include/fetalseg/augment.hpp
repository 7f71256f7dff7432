#ifndef FETALSEG_AUGMENT_HPP
#define FETALSEG_AUGMENT_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fetalseg/common.hpp"
#include "fetalseg/data.hpp"
#include "fetalseg/image.hpp"

// Online augmentation for ultrasound training images. Geometric ops warp
// image and mask with one shared map; photometric ops leave the mask alone.
// Every random draw comes from a generator seeded by (seed, sample id, epoch)
// and is recorded in an audit trail.

namespace fetalseg {

struct AugmentationConfig {
    double brightness[2] = {0.8, 1.2};
    double contrast[2] = {0.8, 1.2};
    double quality[2] = {0.0, 0.5};
    double speckle_std = 0.1;
    double shadow_width[2] = {75.0, 100.0};
    double shadow_angle_deg[2] = {15.0, 20.0};
    double shadow_strength = 0.8;
    double shadow_blur_sigma = 8.0;
    double zoom[2] = {0.6, 1.2};
    double rotate_deg[2] = {-20.0, 20.0};
    double translate_px[2] = {40.0, 60.0};
    double shear[2] = {0.0, 0.2};
    int motion_blur_len = 50;
    double elastic_sigma = 50.0;
    double elastic_alpha = 50.0;

    struct Probabilities {
        double affine = 0.5;
        double elastic = 0.5;
        double shadow = 0.5;
        double motion_blur = 0.5;
        double quality = 0.5;
        double color_jitter = 0.5;
        double speckle = 0.5;
    } prob;

    void validate() const;
};

// One drawn-op record; params hold every drawn number by name.
struct OpAudit {
    std::string op;
    bool applied = false;
    std::string note;  // e.g. "no-cranium"
    std::vector<std::pair<std::string, double>> params;
};

struct SampleAudit {
    std::string sample_id;
    int epoch = 0;
    std::uint64_t seed = 0;
    std::vector<OpAudit> ops;
};

std::string audit_to_json(const SampleAudit& audit);

// --- photometric ops (mask untouched) ---------------------------------------

// contrast pivots about the image mean, then brightness scales; both stages
// clamp to [0,1]
ImageF color_jitter(const ImageF& image, double brightness, double contrast);

// bilinear downsample by (1 - severity) then back; severity 0 bypasses
ImageF quality_reduction(const ImageF& image, double severity);

// multiplicative Gaussian noise: x * (1 + n), n ~ N(0, sigma)
ImageF speckle_noise(const ImageF& image, double sigma, Rng& rng);

// normalized 1-px line kernel of the given length at a random orientation,
// reflective borders
ImageF motion_blur(const ImageF& image, double angle_rad, int length);

struct PixelRC {
    int r = 0, c = 0;
};

// Horizontal extremes of the cranium class; empty when the mask has none.
std::optional<std::pair<PixelRC, PixelRC>> cranium_extremities(const MaskU8& mask);

struct ShadowParams {
    PixelRC left_anchor, right_anchor;
    double left_width = 0, right_width = 0;          // px, perpendicular to the band axis
    double left_angle_deg = 0, right_angle_deg = 0;  // off the vertical axis
};

// Rasterizes two darkening bands anchored at the cranium extremities,
// blurs the occlusion field and applies image *= (1 - strength*occlusion).
ImageF acoustic_shadow(const ImageF& image, const ShadowParams& params, double strength, double blur_sigma);

// --- geometric ops (image + mask move together) ------------------------------

struct AffineParams {
    double zoom = 1.0;
    double rotate_deg = 0.0;
    double shear = 0.0;
    int translate_axis = 0;     // 0 = rows (height), 1 = cols (width)
    double translate_px = 0.0;  // signed
};

// One matrix about the image center; bilinear/zero-fill for the image,
// nearest/background-fill for the mask. When config is given the parameters
// are validated against its ranges.
std::pair<ImageF, MaskU8> affine_transform(const ImageF& image, const MaskU8& mask, const AffineParams& params,
                                           const AugmentationConfig* config = nullptr);

// Smooth random displacement: unit noise blurred at sigma then rescaled so the
// max displacement magnitude equals alpha (alpha 0 is the identity hook).
std::pair<ImageF, MaskU8> elastic_deform(const ImageF& image, const MaskU8& mask, double sigma, double alpha,
                                         Rng& rng);

// --- pipeline ----------------------------------------------------------------

// Fixed order: affine, elastic, shadow, motion blur, quality reduction,
// color jitter, speckle. Draws activations and parameters from
// mix(seed, sample id, epoch); pure function of its arguments.
Sample apply_pipeline(const Sample& sample, const AugmentationConfig& config, std::uint64_t seed, int epoch,
                      SampleAudit* audit = nullptr);

}  // namespace fetalseg

#endif

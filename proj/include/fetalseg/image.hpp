#ifndef FETALSEG_IMAGE_HPP
#define FETALSEG_IMAGE_HPP

#include <cstdint>
#include <vector>

namespace fetalseg {

// Plain grayscale raster, values in [0,1], row-major.
struct ImageF {
    int h = 0, w = 0;
    std::vector<float> px;

    ImageF() = default;
    ImageF(int height, int width, float fill = 0.0f)
        : h(height), w(width), px(static_cast<size_t>(height) * width, fill) {}

    float& at(int r, int c) { return px[static_cast<size_t>(r) * w + c]; }
    float at(int r, int c) const { return px[static_cast<size_t>(r) * w + c]; }
};

// Class-index raster, one byte per pixel.
struct MaskU8 {
    int h = 0, w = 0;
    std::vector<std::uint8_t> px;

    MaskU8() = default;
    MaskU8(int height, int width, std::uint8_t fill = 0)
        : h(height), w(width), px(static_cast<size_t>(height) * width, fill) {}

    std::uint8_t& at(int r, int c) { return px[static_cast<size_t>(r) * w + c]; }
    std::uint8_t at(int r, int c) const { return px[static_cast<size_t>(r) * w + c]; }
};

enum class Border { kClamp, kZero };

// Half-pixel-center bilinear resize (indices clamped at the edges).
ImageF resize_bilinear(const ImageF& src, int oh, int ow);

// Half-pixel-center nearest-neighbour resize; never invents class values.
MaskU8 resize_nearest(const MaskU8& src, int oh, int ow);

// Separable Gaussian blur, kernel truncated at radius ceil(3*sigma) and
// renormalized. Pixels farther than the radius from any support are exactly
// unchanged (kZero) respectively exactly zero-influenced.
ImageF gaussian_blur(const ImageF& src, double sigma, Border border = Border::kClamp);
std::vector<float> gaussian_blur_field(const std::vector<float>& field, int h, int w, double sigma, Border border);

// Row-major 2x3 affine on (x, y) = (col, row): x' = m0 x + m1 y + m2, y' = m3 x + m4 y + m5.
struct Affine2D {
    double m[6] = {1, 0, 0, 0, 1, 0};

    static Affine2D identity() { return {}; }
    static Affine2D translation(double tx, double ty);
    static Affine2D rotation(double radians);
    static Affine2D scaling(double s);
    static Affine2D shear_x(double k);

    Affine2D then(const Affine2D& outer) const;  // outer ∘ this
    Affine2D inverse() const;
    void apply(double x, double y, double* ox, double* oy) const;
};

// Samplers take the dst->src map; out-of-bounds reads use `fill`.
ImageF warp_affine_bilinear(const ImageF& src, const Affine2D& dst_to_src, float fill);
MaskU8 warp_affine_nearest(const MaskU8& src, const Affine2D& dst_to_src, std::uint8_t fill);

// Displacement warp: out(r,c) = in(r + dy(r,c), c + dx(r,c)), coordinates
// clamped to the image.
ImageF warp_displace_bilinear(const ImageF& src, const std::vector<float>& dy, const std::vector<float>& dx);
MaskU8 warp_displace_nearest(const MaskU8& src, const std::vector<float>& dy, const std::vector<float>& dx);

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace fetalseg

#endif

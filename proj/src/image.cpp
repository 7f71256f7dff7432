#include "fetalseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fetalseg {

namespace {

struct Tap {
    int i0, i1;
    float w1;
};

std::vector<Tap> resize_taps(int src, int dst) {
    std::vector<Tap> taps(static_cast<size_t>(dst));
    const double ratio = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        const double s = (d + 0.5) * ratio - 0.5;
        const double fl = std::floor(s);
        int i0 = static_cast<int>(fl);
        const float frac = static_cast<float>(s - fl);
        int i1 = i0 + 1;
        i0 = std::clamp(i0, 0, src - 1);
        i1 = std::clamp(i1, 0, src - 1);
        taps[static_cast<size_t>(d)] = {i0, i1, frac};
    }
    return taps;
}

}  // namespace

ImageF resize_bilinear(const ImageF& src, int oh, int ow) {
    if (oh < 1 || ow < 1 || src.h < 1 || src.w < 1) throw std::invalid_argument("resize_bilinear: empty image");
    if (oh == src.h && ow == src.w) return src;
    const auto rt = resize_taps(src.h, oh);
    const auto ct = resize_taps(src.w, ow);
    ImageF out(oh, ow);
    for (int r = 0; r < oh; ++r) {
        const Tap& a = rt[static_cast<size_t>(r)];
        const float* row0 = src.px.data() + static_cast<size_t>(a.i0) * src.w;
        const float* row1 = src.px.data() + static_cast<size_t>(a.i1) * src.w;
        float* dst = out.px.data() + static_cast<size_t>(r) * ow;
        for (int c = 0; c < ow; ++c) {
            const Tap& b = ct[static_cast<size_t>(c)];
            const float top = row0[b.i0] * (1.0f - b.w1) + row0[b.i1] * b.w1;
            const float bot = row1[b.i0] * (1.0f - b.w1) + row1[b.i1] * b.w1;
            dst[c] = top * (1.0f - a.w1) + bot * a.w1;
        }
    }
    return out;
}

MaskU8 resize_nearest(const MaskU8& src, int oh, int ow) {
    if (oh < 1 || ow < 1 || src.h < 1 || src.w < 1) throw std::invalid_argument("resize_nearest: empty mask");
    if (oh == src.h && ow == src.w) return src;
    MaskU8 out(oh, ow);
    const double rr = static_cast<double>(src.h) / oh;
    const double cr = static_cast<double>(src.w) / ow;
    for (int r = 0; r < oh; ++r) {
        const int sr = std::clamp(static_cast<int>(std::llround((r + 0.5) * rr - 0.5)), 0, src.h - 1);
        for (int c = 0; c < ow; ++c) {
            const int sc = std::clamp(static_cast<int>(std::llround((c + 0.5) * cr - 0.5)), 0, src.w - 1);
            out.at(r, c) = src.at(sr, sc);
        }
    }
    return out;
}

std::vector<float> gaussian_blur_field(const std::vector<float>& field, int h, int w, double sigma, Border border) {
    if (sigma <= 0.0) return field;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i / sigma) * (i / sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        ksum += v;
    }
    for (auto& v : kernel) v /= ksum;

    std::vector<float> tmp(field.size()), out(field.size());
    // horizontal
    for (int r = 0; r < h; ++r) {
        const float* src = field.data() + static_cast<size_t>(r) * w;
        float* dst = tmp.data() + static_cast<size_t>(r) * w;
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const int cc = c + k;
                if (cc < 0 || cc >= w) {
                    if (border == Border::kClamp) acc += kernel[static_cast<size_t>(k + radius)] * src[std::clamp(cc, 0, w - 1)];
                } else {
                    acc += kernel[static_cast<size_t>(k + radius)] * src[cc];
                }
            }
            dst[c] = static_cast<float>(acc);
        }
    }
    // vertical
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const int rr = r + k;
                if (rr < 0 || rr >= h) {
                    if (border == Border::kClamp)
                        acc += kernel[static_cast<size_t>(k + radius)] * tmp[static_cast<size_t>(std::clamp(rr, 0, h - 1)) * w + c];
                } else {
                    acc += kernel[static_cast<size_t>(k + radius)] * tmp[static_cast<size_t>(rr) * w + c];
                }
            }
            out[static_cast<size_t>(r) * w + c] = static_cast<float>(acc);
        }
    }
    return out;
}

ImageF gaussian_blur(const ImageF& src, double sigma, Border border) {
    ImageF out = src;
    out.px = gaussian_blur_field(src.px, src.h, src.w, sigma, border);
    return out;
}

Affine2D Affine2D::translation(double tx, double ty) {
    Affine2D a;
    a.m[2] = tx;
    a.m[5] = ty;
    return a;
}

Affine2D Affine2D::rotation(double radians) {
    Affine2D a;
    const double c = std::cos(radians), s = std::sin(radians);
    a.m[0] = c;
    a.m[1] = -s;
    a.m[3] = s;
    a.m[4] = c;
    return a;
}

Affine2D Affine2D::scaling(double s) {
    Affine2D a;
    a.m[0] = s;
    a.m[4] = s;
    return a;
}

Affine2D Affine2D::shear_x(double k) {
    Affine2D a;
    a.m[1] = k;
    return a;
}

Affine2D Affine2D::then(const Affine2D& o) const {
    Affine2D r;
    r.m[0] = o.m[0] * m[0] + o.m[1] * m[3];
    r.m[1] = o.m[0] * m[1] + o.m[1] * m[4];
    r.m[2] = o.m[0] * m[2] + o.m[1] * m[5] + o.m[2];
    r.m[3] = o.m[3] * m[0] + o.m[4] * m[3];
    r.m[4] = o.m[3] * m[1] + o.m[4] * m[4];
    r.m[5] = o.m[3] * m[2] + o.m[4] * m[5] + o.m[5];
    return r;
}

Affine2D Affine2D::inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-12) throw std::invalid_argument("affine: singular matrix");
    Affine2D r;
    r.m[0] = m[4] / det;
    r.m[1] = -m[1] / det;
    r.m[3] = -m[3] / det;
    r.m[4] = m[0] / det;
    r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
    r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
    return r;
}

void Affine2D::apply(double x, double y, double* ox, double* oy) const {
    *ox = m[0] * x + m[1] * y + m[2];
    *oy = m[3] * x + m[4] * y + m[5];
}

ImageF warp_affine_bilinear(const ImageF& src, const Affine2D& dst_to_src, float fill) {
    ImageF out(src.h, src.w, fill);
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double sx, sy;
            dst_to_src.apply(c, r, &sx, &sy);
            if (sx < -1.0 || sx > src.w || sy < -1.0 || sy > src.h) continue;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const float wx = static_cast<float>(sx - fx), wy = static_cast<float>(sy - fy);
            auto sample = [&](int yy, int xx) -> float {
                if (yy < 0 || yy >= src.h || xx < 0 || xx >= src.w) return fill;
                return src.at(yy, xx);
            };
            out.at(r, c) = (1.0f - wy) * ((1.0f - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                           wy * ((1.0f - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
        }
    return out;
}

MaskU8 warp_affine_nearest(const MaskU8& src, const Affine2D& dst_to_src, std::uint8_t fill) {
    MaskU8 out(src.h, src.w, fill);
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double sx, sy;
            dst_to_src.apply(c, r, &sx, &sy);
            const int xx = static_cast<int>(std::llround(sx));
            const int yy = static_cast<int>(std::llround(sy));
            if (xx < 0 || xx >= src.w || yy < 0 || yy >= src.h) continue;
            out.at(r, c) = src.at(yy, xx);
        }
    return out;
}

ImageF warp_displace_bilinear(const ImageF& src, const std::vector<float>& dy, const std::vector<float>& dx) {
    ImageF out(src.h, src.w);
    size_t i = 0;
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c, ++i) {
            const double sy = std::clamp(static_cast<double>(r) + dy[i], 0.0, static_cast<double>(src.h - 1));
            const double sx = std::clamp(static_cast<double>(c) + dx[i], 0.0, static_cast<double>(src.w - 1));
            const double fy = std::floor(sy), fx = std::floor(sx);
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
            const float wy = static_cast<float>(sy - fy), wx = static_cast<float>(sx - fx);
            out.px[i] = (1.0f - wy) * ((1.0f - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                        wy * ((1.0f - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
        }
    return out;
}

MaskU8 warp_displace_nearest(const MaskU8& src, const std::vector<float>& dy, const std::vector<float>& dx) {
    MaskU8 out(src.h, src.w);
    size_t i = 0;
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c, ++i) {
            const int sy = std::clamp(static_cast<int>(std::llround(r + dy[i])), 0, src.h - 1);
            const int sx = std::clamp(static_cast<int>(std::llround(c + dx[i])), 0, src.w - 1);
            out.px[i] = src.at(sy, sx);
        }
    return out;
}

}  // namespace fetalseg

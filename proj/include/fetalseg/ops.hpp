#ifndef FETALSEG_OPS_HPP
#define FETALSEG_OPS_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <limits>
#include <vector>

#include "fetalseg/tensor.hpp"

// Differentiable operations on NCHW tensors. Forward results are validated
// finite; backward closures accumulate into parent gradients in a fixed
// sequential order so results are bit-identical run to run.

namespace fetalseg {

enum class Mode { kTrain, kEval };

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using StridedMap = Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>>;

// Unpacks the input rows feeding output rows [r0, r1) into a
// [ci*kh*kw, (r1-r0)*wout] patch matrix. stride==1 rows copy contiguously.
template <typename T>
void im2col_strip(const T* x, int ci, int h, int w, int kh, int kw, int stride, int pad, int wout, int r0, int r1,
                  T* col) {
    const int strip = (r1 - r0) * wout;
    int krow = 0;
    for (int c = 0; c < ci; ++c) {
        const T* plane = x + static_cast<std::int64_t>(c) * h * w;
        for (int dr = 0; dr < kh; ++dr) {
            for (int dc = 0; dc < kw; ++dc, ++krow) {
                T* dst = col + static_cast<std::int64_t>(krow) * strip;
                for (int r = r0; r < r1; ++r, dst += wout) {
                    const int ir = r * stride - pad + dr;
                    if (ir < 0 || ir >= h) {
                        std::fill(dst, dst + wout, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::int64_t>(ir) * w;
                    if (stride == 1) {
                        const int c_lo = std::clamp(pad - dc, 0, wout);
                        const int c_hi = std::clamp(w + pad - dc, 0, wout);
                        if (c_lo > 0) std::fill(dst, dst + c_lo, T(0));
                        if (c_hi > c_lo) std::memcpy(dst + c_lo, src + c_lo + dc - pad, sizeof(T) * (c_hi - c_lo));
                        if (c_hi < wout) std::fill(dst + c_hi, dst + wout, T(0));
                    } else {
                        for (int oc = 0; oc < wout; ++oc) {
                            const int icol = oc * stride - pad + dc;
                            dst[oc] = (icol >= 0 && icol < w) ? src[icol] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col_strip: scatter-adds patch gradients back onto dx.
template <typename T>
void col2im_strip(const T* col, int ci, int h, int w, int kh, int kw, int stride, int pad, int wout, int r0, int r1,
                  T* dx) {
    const int strip = (r1 - r0) * wout;
    int krow = 0;
    for (int c = 0; c < ci; ++c) {
        T* plane = dx + static_cast<std::int64_t>(c) * h * w;
        for (int dr = 0; dr < kh; ++dr) {
            for (int dc = 0; dc < kw; ++dc, ++krow) {
                const T* src = col + static_cast<std::int64_t>(krow) * strip;
                for (int r = r0; r < r1; ++r, src += wout) {
                    const int ir = r * stride - pad + dr;
                    if (ir < 0 || ir >= h) continue;
                    T* dst = plane + static_cast<std::int64_t>(ir) * w;
                    if (stride == 1) {
                        const int c_lo = std::clamp(pad - dc, 0, wout);
                        const int c_hi = std::clamp(w + pad - dc, 0, wout);
                        for (int oc = c_lo; oc < c_hi; ++oc) dst[oc + dc - pad] += src[oc];
                    } else {
                        for (int oc = 0; oc < wout; ++oc) {
                            const int icol = oc * stride - pad + dc;
                            if (icol >= 0 && icol < w) dst[icol] += src[oc];
                        }
                    }
                }
            }
        }
    }
}

// Output-row strip sized to keep the patch matrix around 4 MB.
inline int conv_strip_rows(int k, int wout, int hout) {
    const std::int64_t target = 1 << 20;
    const std::int64_t rows = target / std::max<std::int64_t>(1, static_cast<std::int64_t>(k) * wout);
    return static_cast<int>(std::clamp<std::int64_t>(rows, 1, hout));
}

template <typename T>
std::vector<T>& conv_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

}  // namespace detail

// Convolution parameters: weight [out_ch, in_ch, kh, kw] plus per-channel bias.
template <typename T>
struct ConvParams {
    Tensor<T> weight;
    Tensor<T> bias;
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }

    void validate() const {
        if (weight.shape().size() != 4) throw std::invalid_argument("conv: weight must be 4-D");
        if (bias.shape().size() != 1 || bias.dim(0) != weight.dim(0))
            throw std::invalid_argument("conv: bias must be [out_ch]");
        if (weight.dim(0) < 1) throw std::invalid_argument("conv: out_ch must be >= 1");
        if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0)
            throw std::invalid_argument("conv: kernel sides must be odd");
        if (stride < 1 || padding < 0) throw std::invalid_argument("conv: bad stride/padding");
    }
};

// Cross-correlation plus bias; differentiable w.r.t. input, weight and bias.
// Output spatial size is floor((H + 2*pad - kh)/stride) + 1 (and likewise W).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& params) {
    params.validate();
    if (x.shape().size() != 4)
        throw std::invalid_argument("conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = params.weight.dim(0), kh = params.weight.dim(2), kw = params.weight.dim(3);
    const int stride = params.stride, pad = params.padding;
    if (ci != params.weight.dim(1))
        throw std::invalid_argument("conv2d: input channels " + std::to_string(ci) + " != weight in_ch " +
                                    std::to_string(params.weight.dim(1)));
    if (h + 2 * pad < kh || w + 2 * pad < kw) throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int hout = (h + 2 * pad - kh) / stride + 1;
    const int wout = (w + 2 * pad - kw) / stride + 1;
    const int k = ci * kh * kw;
    const std::int64_t opix = static_cast<std::int64_t>(hout) * wout;
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);

    std::vector<T> out(static_cast<size_t>(n) * co * opix);
    const T* wp = params.weight.data();
    for (int img = 0; img < n; ++img) {
        const T* xi = x.data() + static_cast<std::int64_t>(img) * ci * h * w;
        T* oi = out.data() + static_cast<std::int64_t>(img) * co * opix;
        if (pointwise) {
            detail::MapRM<T> mo(oi, co, opix);
            mo.noalias() = detail::CMapRM<T>(wp, co, ci) * detail::CMapRM<T>(xi, ci, opix);
        } else {
            auto& col = detail::conv_scratch<T>();
            const int strip = detail::conv_strip_rows(k, wout, hout);
            col.resize(static_cast<size_t>(k) * strip * wout);
            for (int r0 = 0; r0 < hout; r0 += strip) {
                const int r1 = std::min(hout, r0 + strip);
                detail::im2col_strip(xi, ci, h, w, kh, kw, stride, pad, wout, r0, r1, col.data());
                detail::StridedMap<T> mo(oi + static_cast<std::int64_t>(r0) * wout, co, (r1 - r0) * wout,
                                         Eigen::OuterStride<>(opix));
                mo.noalias() = detail::CMapRM<T>(wp, co, k) * detail::CMapRM<T>(col.data(), k, (r1 - r0) * wout);
            }
        }
        const T* bp = params.bias.data();
        for (int c = 0; c < co; ++c) {
            T* row = oi + static_cast<std::int64_t>(c) * opix;
            const T bv = bp[c];
            for (std::int64_t p = 0; p < opix; ++p) row[p] += bv;
        }
    }
    check_finite("conv2d", out);

    auto xn = x.node();
    auto wn = params.weight.node();
    auto bn = params.bias.node();
    auto backprop = [xn, wn, bn, n, ci, h, w, co, kh, kw, stride, pad, hout, wout, k, opix,
                     pointwise](typename Tensor<T>::Node& node) {
        const T* dy = node.grad.data();
        if (bn->requires_grad) {
            T* db = bn->grad.data();
            for (int img = 0; img < n; ++img)
                for (int c = 0; c < co; ++c) {
                    const T* row = dy + (static_cast<std::int64_t>(img) * co + c) * opix;
                    T acc = 0;
                    for (std::int64_t p = 0; p < opix; ++p) acc += row[p];
                    db[c] += acc;
                }
        }
        const T* wp = wn->value.data();
        for (int img = 0; img < n; ++img) {
            const T* xi = xn->value.data() + static_cast<std::int64_t>(img) * ci * h * w;
            const T* dyi = dy + static_cast<std::int64_t>(img) * co * opix;
            T* dxi = xn->requires_grad ? xn->grad.data() + static_cast<std::int64_t>(img) * ci * h * w : nullptr;
            if (pointwise) {
                if (wn->requires_grad) {
                    detail::MapRM<T> mdw(wn->grad.data(), co, ci);
                    mdw.noalias() += detail::CMapRM<T>(dyi, co, opix) * detail::CMapRM<T>(xi, ci, opix).transpose();
                }
                if (dxi) {
                    detail::MapRM<T> mdx(dxi, ci, opix);
                    mdx.noalias() += detail::CMapRM<T>(wp, co, ci).transpose() * detail::CMapRM<T>(dyi, co, opix);
                }
            } else {
                auto& scratch = detail::conv_scratch<T>();
                const int strip = detail::conv_strip_rows(k, wout, hout);
                const size_t colsz = static_cast<size_t>(k) * strip * wout;
                scratch.resize(colsz * 2);  // [col | dcol]
                T* col = scratch.data();
                T* dcol = scratch.data() + colsz;
                for (int r0 = 0; r0 < hout; r0 += strip) {
                    const int r1 = std::min(hout, r0 + strip);
                    const int npix = (r1 - r0) * wout;
                    detail::CStridedMap<T> mdy(dyi + static_cast<std::int64_t>(r0) * wout, co, npix,
                                               Eigen::OuterStride<>(opix));
                    if (wn->requires_grad) {
                        detail::im2col_strip(xi, ci, h, w, kh, kw, stride, pad, wout, r0, r1, col);
                        detail::MapRM<T> mdw(wn->grad.data(), co, k);
                        mdw.noalias() += mdy * detail::CMapRM<T>(col, k, npix).transpose();
                    }
                    if (dxi) {
                        detail::MapRM<T> mdcol(dcol, k, npix);
                        mdcol.noalias() = detail::CMapRM<T>(wp, co, k).transpose() * mdy;
                        detail::col2im_strip(dcol, ci, h, w, kh, kw, stride, pad, wout, r0, r1, dxi);
                    }
                }
            }
        }
    };
    return Tensor<T>::make_result({n, co, hout, wout}, std::move(out), {xn, wn, bn}, std::move(backprop));
}

// 2x2 max pooling, stride 2. Gradient routes to the first maximum in
// row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("maxpool2: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
    const int ho = h / 2, wo = w / 2;
    std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
    const T* xp = x.data();
    std::int64_t oi = 0;
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const T* plane = xp + (static_cast<std::int64_t>(img) * c + ch) * h * w;
            for (int r = 0; r < ho; ++r)
                for (int col = 0; col < wo; ++col, ++oi) {
                    const int base = 2 * r * w + 2 * col;
                    int best = base;
                    T bv = plane[base];
                    const int cand[3] = {base + 1, base + w, base + w + 1};
                    for (int idx : cand)
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    out[oi] = bv;
                    (*argmax)[oi] = static_cast<std::int32_t>(best);
                }
        }
    check_finite("maxpool2", out);

    auto xn = x.node();
    auto backprop = [xn, argmax, n, c, h, w, ho, wo](typename Tensor<T>::Node& node) {
        if (!xn->requires_grad) return;
        const T* dy = node.grad.data();
        std::int64_t oi = 0;
        for (int img = 0; img < n; ++img)
            for (int ch = 0; ch < c; ++ch) {
                T* plane = xn->grad.data() + (static_cast<std::int64_t>(img) * c + ch) * h * w;
                const std::int64_t cnt = static_cast<std::int64_t>(ho) * wo;
                for (std::int64_t p = 0; p < cnt; ++p, ++oi) plane[(*argmax)[oi]] += dy[oi];
            }
    };
    return Tensor<T>::make_result({n, c, ho, wo}, std::move(out), {xn}, std::move(backprop));
}

namespace detail {
// Half-pixel-center source coordinates for a 2x bilinear upsample of size d.
struct LerpTap {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1-w1
};
inline std::vector<LerpTap> upsample2x_taps(int src) {
    std::vector<LerpTap> taps(static_cast<size_t>(2 * src));
    for (int d = 0; d < 2 * src; ++d) {
        const double s = (d + 0.5) / 2.0 - 0.5;
        double fl = std::floor(s);
        int i0 = static_cast<int>(fl);
        double frac = s - fl;
        int i1 = i0 + 1;
        i0 = std::clamp(i0, 0, src - 1);
        i1 = std::clamp(i1, 0, src - 1);
        taps[static_cast<size_t>(d)] = {i0, i1, frac};
    }
    return taps;
}
}  // namespace detail

// Bilinear 2x upsampling with half-pixel center alignment.
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("upsample_bilinear2x: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = 2 * h, wo = 2 * w;
    const auto rtaps = detail::upsample2x_taps(h);
    const auto ctaps = detail::upsample2x_taps(w);
    std::vector<T> out(static_cast<size_t>(n) * c * ho * wo);
    const T* xp = x.data();
    std::int64_t oi = 0;
    for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
        const T* src = xp + plane * h * w;
        for (int r = 0; r < ho; ++r) {
            const auto& rt = rtaps[static_cast<size_t>(r)];
            const T* row0 = src + rt.i0 * w;
            const T* row1 = src + rt.i1 * w;
            const T wr1 = static_cast<T>(rt.w1), wr0 = T(1) - wr1;
            for (int col = 0; col < wo; ++col, ++oi) {
                const auto& ct = ctaps[static_cast<size_t>(col)];
                const T wc1 = static_cast<T>(ct.w1), wc0 = T(1) - wc1;
                out[oi] = wr0 * (wc0 * row0[ct.i0] + wc1 * row0[ct.i1]) + wr1 * (wc0 * row1[ct.i0] + wc1 * row1[ct.i1]);
            }
        }
    }
    check_finite("upsample_bilinear2x", out);

    auto xn = x.node();
    auto backprop = [xn, n, c, h, w, ho, wo, rtaps, ctaps](typename Tensor<T>::Node& node) {
        if (!xn->requires_grad) return;
        const T* dy = node.grad.data();
        std::int64_t oi = 0;
        for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
            T* dst = xn->grad.data() + plane * h * w;
            for (int r = 0; r < ho; ++r) {
                const auto& rt = rtaps[static_cast<size_t>(r)];
                const T wr1 = static_cast<T>(rt.w1), wr0 = T(1) - wr1;
                for (int col = 0; col < wo; ++col, ++oi) {
                    const auto& ct = ctaps[static_cast<size_t>(col)];
                    const T wc1 = static_cast<T>(ct.w1), wc0 = T(1) - wc1;
                    const T g = dy[oi];
                    dst[rt.i0 * w + ct.i0] += wr0 * wc0 * g;
                    dst[rt.i0 * w + ct.i1] += wr0 * wc1 * g;
                    dst[rt.i1 * w + ct.i0] += wr1 * wc0 * g;
                    dst[rt.i1 * w + ct.i1] += wr1 * wc1 * g;
                }
            }
        }
    };
    return Tensor<T>::make_result({n, c, ho, wo}, std::move(out), {xn}, std::move(backprop));
}

// 3x3 mean pooling, stride 1, padding 1; border windows average in-bounds
// pixels only.
template <typename T>
Tensor<T> avgpool3_s1(const Tensor<T>& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("avgpool3_s1: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<T> out(x.values().size());
    const T* xp = x.data();
    for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
        const T* src = xp + plane * h * w;
        T* dst = out.data() + plane * h * w;
        for (int r = 0; r < h; ++r) {
            const int r_lo = std::max(0, r - 1), r_hi = std::min(h - 1, r + 1);
            for (int col = 0; col < w; ++col) {
                const int c_lo = std::max(0, col - 1), c_hi = std::min(w - 1, col + 1);
                T acc = 0;
                for (int rr = r_lo; rr <= r_hi; ++rr)
                    for (int cc = c_lo; cc <= c_hi; ++cc) acc += src[rr * w + cc];
                dst[r * w + col] = acc / static_cast<T>((r_hi - r_lo + 1) * (c_hi - c_lo + 1));
            }
        }
    }
    check_finite("avgpool3_s1", out);

    auto xn = x.node();
    auto backprop = [xn, n, c, h, w](typename Tensor<T>::Node& node) {
        if (!xn->requires_grad) return;
        const T* dy = node.grad.data();
        for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
            const T* g = dy + plane * h * w;
            T* dst = xn->grad.data() + plane * h * w;
            for (int r = 0; r < h; ++r) {
                const int r_lo = std::max(0, r - 1), r_hi = std::min(h - 1, r + 1);
                for (int col = 0; col < w; ++col) {
                    const int c_lo = std::max(0, col - 1), c_hi = std::min(w - 1, col + 1);
                    const T share = g[r * w + col] / static_cast<T>((r_hi - r_lo + 1) * (c_hi - c_lo + 1));
                    for (int rr = r_lo; rr <= r_hi; ++rr)
                        for (int cc = c_lo; cc <= c_hi; ++cc) dst[rr * w + cc] += share;
                }
            }
        }
    };
    return Tensor<T>::make_result(x.shape(), std::move(out), {xn}, std::move(backprop));
}

// Per-channel scale/shift plus running statistics for inference.
template <typename T>
struct BatchNormState {
    Tensor<T> gamma;
    Tensor<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BatchNormState make(int channels) {
        BatchNormState s;
        s.gamma = Tensor<T>::filled({channels}, T(1), true);
        s.beta = Tensor<T>::zeros({channels}, true);
        s.running_mean.assign(static_cast<size_t>(channels), T(0));
        s.running_var.assign(static_cast<size_t>(channels), T(1));
        return s;
    }
};

// Train mode normalizes with batch statistics (population variance) and
// updates running stats; eval mode uses running stats.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode) {
    if (x.shape().size() != 4) throw std::invalid_argument("batchnorm: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != state.gamma.dim(0)) throw std::invalid_argument("batchnorm: channel mismatch");
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
    if (mode == Mode::kTrain && m < 2)
        throw std::invalid_argument("batchnorm: train mode needs at least 2 elements per channel");

    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
    const T* xp = x.data();
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    if (mode == Mode::kTrain) {
        for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (int img = 0; img < n; ++img) {
                const T* p = xp + (static_cast<std::int64_t>(img) * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
            }
            const T mu = acc / static_cast<T>(m);
            T var = 0;
            for (int img = 0; img < n; ++img) {
                const T* p = xp + (static_cast<std::int64_t>(img) * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T d = p[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            (*mean)[ch] = mu;
            (*invstd)[ch] = T(1) / std::sqrt(var + state.eps);
            state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mu;
            state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * var;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean)[ch] = state.running_mean[ch];
            (*invstd)[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
        }
    }

    std::vector<T> out(x.values().size());
    const T* gp = state.gamma.data();
    const T* bp = state.beta.data();
    for (int img = 0; img < n; ++img)
        for (int ch = 0; ch < c; ++ch) {
            const T* src = xp + (static_cast<std::int64_t>(img) * c + ch) * hw;
            T* dst = out.data() + (static_cast<std::int64_t>(img) * c + ch) * hw;
            const T mu = (*mean)[ch], is = (*invstd)[ch], g = gp[ch], b = bp[ch];
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = g * (src[i] - mu) * is + b;
        }
    check_finite("batchnorm", out);

    auto xn = x.node();
    auto gn = state.gamma.node();
    auto btn = state.beta.node();
    const bool train = (mode == Mode::kTrain);
    auto backprop = [xn, gn, btn, mean, invstd, n, c, hw, m, train](typename Tensor<T>::Node& node) {
        const T* dy = node.grad.data();
        const T* xp = xn->value.data();
        for (int ch = 0; ch < c; ++ch) {
            const T mu = (*mean)[ch], is = (*invstd)[ch];
            // per-channel reductions over ((g, g*xhat))
            T sum_g = 0, sum_gx = 0;
            for (int img = 0; img < n; ++img) {
                const std::int64_t base = (static_cast<std::int64_t>(img) * c + ch) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T g = dy[base + i];
                    sum_g += g;
                    sum_gx += g * (xp[base + i] - mu) * is;
                }
            }
            if (gn->requires_grad) gn->grad[ch] += sum_gx;
            if (btn->requires_grad) btn->grad[ch] += sum_g;
            if (xn->requires_grad) {
                const T gamma = gn->value[ch];
                if (train) {
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (int img = 0; img < n; ++img) {
                        const std::int64_t base = (static_cast<std::int64_t>(img) * c + ch) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const T xhat = (xp[base + i] - mu) * is;
                            xn->grad[base + i] += gamma * is * (dy[base + i] - inv_m * sum_g - xhat * inv_m * sum_gx);
                        }
                    }
                } else {
                    for (int img = 0; img < n; ++img) {
                        const std::int64_t base = (static_cast<std::int64_t>(img) * c + ch) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) xn->grad[base + i] += gamma * is * dy[base + i];
                    }
                }
            }
        }
    };
    return Tensor<T>::make_result(x.shape(), std::move(out), {xn, gn, btn}, std::move(backprop));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.values().size());
    const T* xp = x.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = xp[i] > T(0) ? xp[i] : T(0);
    check_finite("relu", out);
    auto xn = x.node();
    auto backprop = [xn](typename Tensor<T>::Node& node) {
        if (!xn->requires_grad) return;
        const T* dy = node.grad.data();
        const T* xp = xn->value.data();
        for (size_t i = 0; i < node.value.size(); ++i)
            if (xp[i] > T(0)) xn->grad[i] += dy[i];
    };
    return Tensor<T>::make_result(x.shape(), std::move(out), {xn}, std::move(backprop));
}

// Joins tensors along the channel axis; all other dims must match.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int ctotal = 0;
    for (const auto& t : xs) {
        if (t.shape().size() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            throw std::invalid_argument("concat_channels: non-channel axes must match, got " + shape_str(t.shape()) +
                                        " vs " + shape_str(xs[0].shape()));
        ctotal += t.dim(1);
    }
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::vector<T> out(static_cast<size_t>(n) * ctotal * hw);
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
    std::vector<int> widths;
    parents.reserve(xs.size());
    for (const auto& t : xs) {
        parents.push_back(t.node());
        widths.push_back(t.dim(1));
    }
    for (int img = 0; img < n; ++img) {
        std::int64_t coff = 0;
        for (size_t b = 0; b < xs.size(); ++b) {
            const std::int64_t len = static_cast<std::int64_t>(widths[b]) * hw;
            std::memcpy(out.data() + (static_cast<std::int64_t>(img) * ctotal) * hw + coff * hw,
                        xs[b].data() + static_cast<std::int64_t>(img) * len, sizeof(T) * static_cast<size_t>(len));
            coff += widths[b];
        }
    }
    auto pcopy = parents;
    auto backprop = [pcopy, widths, n, ctotal, hw](typename Tensor<T>::Node& node) {
        const T* dy = node.grad.data();
        for (int img = 0; img < n; ++img) {
            std::int64_t coff = 0;
            for (size_t b = 0; b < pcopy.size(); ++b) {
                const std::int64_t len = static_cast<std::int64_t>(widths[b]) * hw;
                if (pcopy[b]->requires_grad) {
                    T* dst = pcopy[b]->grad.data() + static_cast<std::int64_t>(img) * len;
                    const T* src = dy + (static_cast<std::int64_t>(img) * ctotal + coff) * hw;
                    for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
                }
                coff += widths[b];
            }
        }
    };
    return Tensor<T>::make_result({n, ctotal, h, w}, std::move(out), std::move(parents), std::move(backprop));
}

// Per-pixel softmax across the channel axis.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    if (x.shape().size() != 4) throw std::invalid_argument("softmax_channels: input must be [N,C,H,W]");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::vector<T> out(x.values().size());
    const T* xp = x.data();
    for (int img = 0; img < n; ++img) {
        const T* src = xp + static_cast<std::int64_t>(img) * c * hw;
        T* dst = out.data() + static_cast<std::int64_t>(img) * c * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
            T mx = src[p];
            for (int ch = 1; ch < c; ++ch) mx = std::max(mx, src[ch * hw + p]);
            T denom = 0;
            for (int ch = 0; ch < c; ++ch) {
                const T e = std::exp(src[ch * hw + p] - mx);
                dst[ch * hw + p] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int ch = 0; ch < c; ++ch) dst[ch * hw + p] *= inv;
        }
    }
    check_finite("softmax_channels", out);

    auto xn = x.node();
    auto backprop = [xn, n, c, hw](typename Tensor<T>::Node& node) {
        if (!xn->requires_grad) return;
        const T* dy = node.grad.data();
        const T* y = node.value.data();
        for (int img = 0; img < n; ++img) {
            const std::int64_t base = static_cast<std::int64_t>(img) * c * hw;
            for (std::int64_t p = 0; p < hw; ++p) {
                T dot = 0;
                for (int ch = 0; ch < c; ++ch) dot += y[base + ch * hw + p] * dy[base + ch * hw + p];
                for (int ch = 0; ch < c; ++ch)
                    xn->grad[base + ch * hw + p] += y[base + ch * hw + p] * (dy[base + ch * hw + p] - dot);
            }
        }
    };
    return Tensor<T>::make_result(x.shape(), std::move(out), {xn}, std::move(backprop));
}

}  // namespace fetalseg

#endif

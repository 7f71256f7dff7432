#ifndef FETALSEG_TESTS_ORACLES_HPP
#define FETALSEG_TESTS_ORACLES_HPP

// Independent brute-force reference implementations used to pin expected
// values. These deliberately share no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

// Direct cross-correlation, quadruple loop, no im2col.
template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, int n, int ci, int h, int w, const std::vector<T>& weight,
                      const std::vector<T>& bias, int co, int kh, int kw, int stride, int pad, int* hout_out,
                      int* wout_out) {
    const int hout = (h + 2 * pad - kh) / stride + 1;
    const int wout = (w + 2 * pad - kw) / stride + 1;
    *hout_out = hout;
    *wout_out = wout;
    std::vector<T> out(static_cast<size_t>(n) * co * hout * wout, T(0));
    for (int img = 0; img < n; ++img)
        for (int oc = 0; oc < co; ++oc)
            for (int r = 0; r < hout; ++r)
                for (int c = 0; c < wout; ++c) {
                    T acc = bias[oc];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int dr = 0; dr < kh; ++dr)
                            for (int dc = 0; dc < kw; ++dc) {
                                const int ir = r * stride - pad + dr;
                                const int icc = c * stride - pad + dc;
                                if (ir < 0 || ir >= h || icc < 0 || icc >= w) continue;
                                acc += x[((static_cast<size_t>(img) * ci + ic) * h + ir) * w + icc] *
                                       weight[((static_cast<size_t>(oc) * ci + ic) * kh + dr) * kw + dc];
                            }
                    out[((static_cast<size_t>(img) * co + oc) * hout + r) * wout + c] = acc;
                }
    return out;
}

// Max over explicit 2x2 windows.
template <typename T>
std::vector<T> maxpool2(const std::vector<T>& x, int planes, int h, int w) {
    std::vector<T> out(static_cast<size_t>(planes) * (h / 2) * (w / 2));
    size_t o = 0;
    for (int p = 0; p < planes; ++p)
        for (int r = 0; r < h / 2; ++r)
            for (int c = 0; c < w / 2; ++c, ++o) {
                T m = std::numeric_limits<T>::lowest();
                for (int dr = 0; dr < 2; ++dr)
                    for (int dc = 0; dc < 2; ++dc)
                        m = std::max(m, x[(static_cast<size_t>(p) * h + 2 * r + dr) * w + 2 * c + dc]);
                out[o] = m;
            }
    return out;
}

// 3x3 mean over in-bounds pixels only.
template <typename T>
std::vector<T> avgpool3(const std::vector<T>& x, int planes, int h, int w) {
    std::vector<T> out(x.size());
    for (int p = 0; p < planes; ++p)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                T acc = 0;
                int cnt = 0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                        acc += x[(static_cast<size_t>(p) * h + rr) * w + cc];
                        ++cnt;
                    }
                out[(static_cast<size_t>(p) * h + r) * w + c] = acc / static_cast<T>(cnt);
            }
    return out;
}

// Per-pixel argmax over channels, lowest index wins ties.
template <typename T>
std::vector<std::uint8_t> argmax_channels(const std::vector<T>& probs, int n, int c, int h, int w) {
    std::vector<std::uint8_t> out(static_cast<size_t>(n) * h * w);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int img = 0; img < n; ++img)
        for (std::int64_t p = 0; p < hw; ++p) {
            int best = 0;
            T bv = probs[static_cast<size_t>(img) * c * hw + p];
            for (int ch = 1; ch < c; ++ch) {
                const T v = probs[static_cast<size_t>(img) * c * hw + ch * hw + p];
                if (v > bv) {
                    bv = v;
                    best = ch;
                }
            }
            out[static_cast<size_t>(img) * hw + p] = static_cast<std::uint8_t>(best);
        }
    return out;
}

// 2 * |P ∩ T| / (|P| + |T|) by explicit pixel counting; returns NaN when both
// masks lack the class.
inline double dice_by_counting(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target,
                               int cls) {
    std::int64_t np = 0, nt = 0, ni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == cls, t = target[i] == cls;
        np += p;
        nt += t;
        ni += p && t;
    }
    if (np + nt == 0) return std::numeric_limits<double>::quiet_NaN();
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + nt);
}

// Exhaustive k-nearest-neighbour scan (squared Euclidean, ties by index).
inline std::vector<std::vector<int>> knn_scan(const std::vector<std::vector<float>>& pts, int k) {
    const int n = static_cast<int>(pts.size());
    std::vector<std::vector<int>> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> dist;
        dist.reserve(static_cast<size_t>(n) - 1);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = 0;
            for (size_t f = 0; f < pts[static_cast<size_t>(i)].size(); ++f) {
                const double diff = static_cast<double>(pts[static_cast<size_t>(i)][f]) - pts[static_cast<size_t>(j)][f];
                d += diff * diff;
            }
            dist.emplace_back(d, j);
        }
        std::sort(dist.begin(), dist.end());
        for (int m = 0; m < k; ++m) out[static_cast<size_t>(i)].push_back(dist[static_cast<size_t>(m)].second);
    }
    return out;
}

}  // namespace oracle

#endif

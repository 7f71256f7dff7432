#ifndef FETALSEG_GRAD_CHECK_HPP
#define FETALSEG_GRAD_CHECK_HPP

#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fetalseg/common.hpp"
#include "fetalseg/tensor.hpp"

namespace fetalseg {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_tensor;
    std::int64_t worst_index = -1;
    std::int64_t coords_checked = 0;

    bool within(double tol) const { return max_rel_error < tol; }
};

// Compares reverse-mode gradients of L(x) = sum(u * fn()) against central
// finite differences, where u is a fixed random probe direction. fn must
// rebuild its graph from the inputs' current values on every call. Double
// precision only. max_coords_per_tensor == 0 checks every coordinate;
// otherwise a seeded random subset per input tensor is used.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& fn,
                                  const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                                  double step = 1e-5, std::int64_t max_coords_per_tensor = 0,
                                  std::uint64_t seed = 0x9d5c0ffee1234567ULL) {
    Rng rng(seed);
    Tensor<double> y0 = fn();
    std::vector<double> probe(static_cast<size_t>(y0.size()));
    for (auto& v : probe) v = rng.uniform(0.25, 1.0) * (rng.chance(0.5) ? 1.0 : -1.0);

    auto weighted = [&probe](const Tensor<double>& y) {
        const double* p = y.data();
        double acc = 0.0;
        for (size_t i = 0; i < probe.size(); ++i) acc += probe[i] * p[i];
        return acc;
    };

    for (const auto& [name, t] : inputs) {
        (void)name;
        const_cast<Tensor<double>&>(t).zero_grad();
    }
    y0.backward(&probe);

    GradCheckReport rep;
    for (const auto& [name, input] : inputs) {
        auto& t = const_cast<Tensor<double>&>(input);
        const std::vector<double> analytic = t.grad();

        std::vector<std::int64_t> coords(static_cast<size_t>(t.size()));
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_tensor > 0 && max_coords_per_tensor < t.size()) {
            // Fisher-Yates prefix
            for (std::int64_t i = 0; i < max_coords_per_tensor; ++i) {
                const std::int64_t j = i + static_cast<std::int64_t>(rng.below(coords.size() - i));
                std::swap(coords[i], coords[j]);
            }
            coords.resize(static_cast<size_t>(max_coords_per_tensor));
        }

        for (std::int64_t idx : coords) {
            const double orig = t.data()[idx];
            t.data()[idx] = orig + step;
            const double lp = weighted(fn());
            t.data()[idx] = orig - step;
            const double lm = weighted(fn());
            t.data()[idx] = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double a = analytic[static_cast<size_t>(idx)];
            const double abs_err = std::abs(a - fd);
            const double rel = abs_err / std::max({std::abs(a), std::abs(fd), 1e-3});
            ++rep.coords_checked;
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_tensor = name;
                rep.worst_index = idx;
            }
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
        }
    }
    return rep;
}

}  // namespace fetalseg

#endif

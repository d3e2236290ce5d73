#pragma once

#include <functional>
#include <vector>

#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    double scale = 0.0;
    int64_t checked = 0;
};

// Central-difference comparison of an analytic gradient against a scalar
// objective. `objective` must recompute the loss from the tensor's current
// contents on every call.
//
// Two numerical details keep the comparison honest for float32 networks:
//  - the divisor is the actually realized perturbation (x+h and x-h round to
//    float32 before the objective sees them);
//  - each coordinate's error is normalized by the gradient's overall scale
//    (its largest entry) rather than the coordinate's own magnitude, so a
//    near-zero component measured against finite-difference noise does not
//    register as a huge relative error while a genuinely wrong component
//    still does.
inline GradCheckResult grad_check(const std::function<double()>& objective, Tensor& x,
                                  const Tensor& analytic, double h = 1e-2,
                                  int max_coords = 64, uint64_t seed = 17) {
    require(analytic.same_shape(x), "grad check: gradient shape mismatch");
    std::vector<int64_t> idx;
    const int64_t n = x.numel();
    if (n <= max_coords) {
        for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
        Rng rng(seed);
        for (int i = 0; i < max_coords; ++i)
            idx.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
    }

    GradCheckResult res;
    double scale = 1e-8;
    for (int64_t i = 0; i < n; ++i)
        scale = std::max(scale, static_cast<double>(std::abs(analytic.data[i])));
    res.scale = scale;

    for (int64_t i : idx) {
        const float orig = x.data[i];
        const float xp = static_cast<float>(static_cast<double>(orig) + h);
        const float xm = static_cast<float>(static_cast<double>(orig) - h);
        x.data[i] = xp;
        const double fp = objective();
        x.data[i] = xm;
        const double fm = objective();
        x.data[i] = orig;
        const double denom = static_cast<double>(xp) - static_cast<double>(xm);
        const double numeric = (fp - fm) / denom;
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / std::max(scale, std::abs(numeric));
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_index = i;
            res.worst_analytic = a;
            res.worst_numeric = numeric;
        }
        ++res.checked;
    }
    return res;
}

}  // namespace cdnas

#pragma once

#include <cmath>

#include "cdnas/tensor.hpp"

namespace cdnas {

// Heavy-ball SGD: v <- momentum*v + g;  p <- p - lr*v.
// No dampening, no Nesterov lookahead; velocity is allocated on first use.
inline void sgd_momentum_step(Param& p, const Tensor& grad, float lr, float momentum) {
    require(grad.same_shape(p.value), "sgd: gradient shape mismatch");
    if (p.velocity.empty()) p.velocity = Tensor(p.value.shape);
    for (int64_t i = 0; i < p.value.numel(); ++i) {
        p.velocity.data[i] = momentum * p.velocity.data[i] + grad.data[i];
        p.value.data[i] -= lr * p.velocity.data[i];
    }
}

// Adam with bias correction; step t is 1-based.
inline void adam_step(Param& p, const Tensor& grad, float lr, int64_t t, float beta1 = 0.9f,
                      float beta2 = 0.999f, float eps = 1e-8f) {
    require(grad.same_shape(p.value), "adam: gradient shape mismatch");
    require(t >= 1, "adam: step count must be 1-based");
    if (p.adam_m.empty()) {
        p.adam_m = Tensor(p.value.shape);
        p.adam_v = Tensor(p.value.shape);
    }
    const float c1 = 1.0f / (1.0f - std::pow(beta1, static_cast<float>(t)));
    const float c2 = 1.0f / (1.0f - std::pow(beta2, static_cast<float>(t)));
    for (int64_t i = 0; i < p.value.numel(); ++i) {
        const float g = grad.data[i];
        p.adam_m.data[i] = beta1 * p.adam_m.data[i] + (1.0f - beta1) * g;
        p.adam_v.data[i] = beta2 * p.adam_v.data[i] + (1.0f - beta2) * g * g;
        const float mhat = p.adam_m.data[i] * c1;
        const float vhat = p.adam_v.data[i] * c2;
        p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace cdnas

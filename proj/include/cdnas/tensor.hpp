#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdnas {

// Dense row-major float32 n-d array. The single carrier for all network
// computation; layout for images is NCHW.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    }

    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(numel_of(shape)))
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool empty() const { return data.empty(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& at(int i) { return data[static_cast<size_t>(i)]; }
    float at(int i) const { return data[static_cast<size_t>(i)]; }

    float& at(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }

    float& at(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    float at(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

// NaN/Inf anywhere is a hard error: every kernel output goes through this.
inline void ensure_finite(const Tensor& t, const char* op) {
    for (float v : t.data) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// One learnable tensor plus its optimizer state. Velocity / Adam moments are
// allocated on first use and always mirror the value's shape.
struct Param {
    Tensor value;
    Tensor velocity;
    Tensor adam_m;
    Tensor adam_v;

    Param() = default;
    explicit Param(Tensor v) : value(std::move(v)) {}

    int64_t numel() const { return value.numel(); }
};

// Parameter bundle for one layer. Which members are populated depends on the
// layer kind: convs always have weights, bias is optional, the bn_* members
// exist only when the layer is followed by batch normalization, and pointwise
// holds the 1x1 mixing weights of a depthwise-separable conv.
struct LayerParams {
    Param weights;
    Param pointwise;
    Param bias;
    Param bn_gamma;
    Param bn_beta;
    Tensor bn_running_mean;
    Tensor bn_running_var;

    bool has_bias() const { return !bias.value.empty(); }
    bool has_bn() const { return !bn_gamma.value.empty(); }
    bool has_pointwise() const { return !pointwise.value.empty(); }

    int64_t learnable_count() const {
        return weights.numel() + pointwise.numel() + bias.numel() + bn_gamma.numel() +
               bn_beta.numel();
    }
};

// Gradients produced by one backward pass; shapes mirror the corresponding
// parameters and input exactly. Members not relevant to a layer stay empty.
struct GradBundle {
    Tensor d_input;
    Tensor d_weights;
    Tensor d_pointwise;
    Tensor d_bias;
    Tensor d_gamma;
    Tensor d_beta;
};

}  // namespace cdnas

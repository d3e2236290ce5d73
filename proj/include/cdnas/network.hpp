#pragma once

#include <utility>
#include <vector>

#include "cdnas/arch.hpp"
#include "cdnas/conv.hpp"
#include "cdnas/layers.hpp"
#include "cdnas/optim.hpp"
#include "cdnas/rng.hpp"

namespace cdnas {

struct LayerGrads {
    Tensor d_weights;
    Tensor d_pointwise;
    Tensor d_bias;
    Tensor d_gamma;
    Tensor d_beta;
};

namespace net_detail {

inline Tensor reshaped(const Tensor& t, std::vector<int> shape) {
    Tensor r;
    r.shape = std::move(shape);
    r.data = t.data;
    require(r.numel() == t.numel(), "reshape: element count mismatch");
    return r;
}

}  // namespace net_detail

// A compiled, trainable instance of an architecture DAG at a fixed input
// resolution. Holds the parameters, runs forward/backward over the graph in
// topological (=list) order, and applies optimizer steps. Dropout, when
// requested, acts on the classifier's input (the penultimate activation).
class Network {
public:
    Network(ArchGraph graph, int in_h, int in_w, Rng& rng)
        : graph_(std::move(graph)), in_h_(in_h), in_w_(in_w),
          plan_(infer_shapes(graph_, in_h, in_w)) {
        const size_t n = graph_.layers.size();
        params_.resize(n);
        proj_params_.resize(n);
        grads_.resize(n);
        proj_grads_.resize(n);
        tape_.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const LayerSpec& l = graph_.layers[i];
            const LayerShape& in = plan_.merged_in[i];
            LayerParams& p = params_[i];
            switch (l.kind) {
                case LayerKind::conv:
                    p.weights = Param(Tensor({l.features, in.c, l.kernel, l.kernel}));
                    init::kaiming_normal(p.weights.value, in.c * l.kernel * l.kernel, rng);
                    break;
                case LayerKind::sepconv:
                    p.weights = Param(Tensor({in.c, l.kernel, l.kernel}));
                    init::kaiming_normal(p.weights.value, l.kernel * l.kernel, rng);
                    p.pointwise = Param(Tensor({l.features, in.c}));
                    init::kaiming_normal(p.pointwise.value, in.c, rng);
                    break;
                case LayerKind::fc:
                case LayerKind::classifier:
                    p.weights = Param(Tensor({l.features, in.flattened()}));
                    init::kaiming_normal(p.weights.value, in.flattened(), rng);
                    break;
                default:
                    break;
            }
            if (!p.weights.value.empty() && l.use_bias) p.bias = Param(Tensor({l.features}));
            if (!p.weights.value.empty() && l.use_bn) {
                p.bn_gamma = Param(Tensor::full({l.features}, 1.0f));
                p.bn_beta = Param(Tensor({l.features}));
                p.bn_running_mean = Tensor({l.features});
                p.bn_running_var = Tensor::full({l.features}, 1.0f);
            }
            for (const ProjSpec& pr : plan_.proj[i]) {
                LayerParams pp;
                pp.weights = Param(Tensor({pr.to_c, pr.from_c, 1, 1}));
                init::kaiming_normal(pp.weights.value, pr.from_c, rng);
                pp.bias = Param(Tensor({pr.to_c}));
                proj_params_[i].push_back(std::move(pp));
            }
        }
    }

    const ArchGraph& graph() const { return graph_; }
    const ShapeReport& plan() const { return plan_; }
    int input_h() const { return in_h_; }
    int input_w() const { return in_w_; }
    int num_classes() const { return graph_.layers.back().features; }

    // Visible parameters in a fixed, documented order (layer by layer:
    // weights, pointwise, bias, gamma, beta; then that layer's projections).
    std::vector<std::pair<Param*, Tensor*>> param_grad_pairs() {
        std::vector<std::pair<Param*, Tensor*>> out;
        auto push = [&](Param& p, Tensor& g) {
            if (!p.value.empty()) out.emplace_back(&p, &g);
        };
        for (size_t i = 0; i < params_.size(); ++i) {
            push(params_[i].weights, grads_[i].d_weights);
            push(params_[i].pointwise, grads_[i].d_pointwise);
            push(params_[i].bias, grads_[i].d_bias);
            push(params_[i].bn_gamma, grads_[i].d_gamma);
            push(params_[i].bn_beta, grads_[i].d_beta);
            for (size_t j = 0; j < proj_params_[i].size(); ++j) {
                push(proj_params_[i][j].weights, proj_grads_[i][j].d_weights);
                push(proj_params_[i][j].bias, proj_grads_[i][j].d_bias);
            }
        }
        return out;
    }

    std::vector<LayerParams>& layer_params() { return params_; }
    std::vector<std::vector<LayerParams>>& projection_params() { return proj_params_; }

    // Non-learnable state (batchnorm running statistics) in layer order. A
    // checkpoint must include these or inference won't reproduce.
    std::vector<Tensor*> state_tensors() {
        std::vector<Tensor*> out;
        for (LayerParams& p : params_)
            if (p.has_bn()) {
                out.push_back(&p.bn_running_mean);
                out.push_back(&p.bn_running_var);
            }
        return out;
    }

    int64_t param_count() const { return plan_.total_params; }

    // Gradient w.r.t. the input batch, valid after backward().
    const Tensor& input_gradient() const { return d_input_; }

    // Runs the graph. `train` selects batch statistics + running-stat updates
    // and enables dropout on the classifier input (rate > 0 needs an rng).
    Tensor forward(const Tensor& x, bool train, float dropout_rate = 0.0f,
                   Rng* dropout_rng = nullptr) {
        require(x.rank() == 4 && x.dim(1) == graph_.input_channels && x.dim(2) == in_h_ &&
                    x.dim(3) == in_w_,
                "network: input must be [N," + std::to_string(graph_.input_channels) + "," +
                    std::to_string(in_h_) + "," + std::to_string(in_w_) + "], got " +
                    x.shape_str());
        input_ = x;
        train_ = train;
        const int N = x.dim(0);
        const int n = static_cast<int>(graph_.layers.size());

        for (int i = 0; i < n; ++i) {
            const LayerSpec& l = graph_.layers[static_cast<size_t>(i)];
            Cache& c = tape_[static_cast<size_t>(i)];
            c = Cache{};
            c.merged = merge_inputs(i, N);

            LayerParams& p = params_[static_cast<size_t>(i)];
            Tensor y;
            switch (l.kind) {
                case LayerKind::conv:
                    y = conv2d_forward(c.merged, p.weights.value,
                                       l.use_bias ? p.bias.value : Tensor(), l.stride, l.pad);
                    break;
                case LayerKind::sepconv:
                    y = sepconv2d_forward(c.merged, p.weights.value, p.pointwise.value,
                                          l.use_bias ? p.bias.value : Tensor(), l.stride, l.pad,
                                          &c.mid);
                    break;
                case LayerKind::maxpool:
                    y = maxpool_forward(c.merged, l.kernel, l.stride, l.pad, c.argmax);
                    break;
                case LayerKind::avgpool:
                    y = avgpool_forward(c.merged, l.kernel, l.stride, l.pad);
                    break;
                case LayerKind::spp:
                    y = spp_forward(c.merged, l.scales, c.argmax);
                    break;
                case LayerKind::gap:
                    y = adaptive_avg_forward(c.merged, l.grid);
                    break;
                case LayerKind::fc:
                case LayerKind::classifier: {
                    Tensor flat = net_detail::reshaped(
                        c.merged, {N, plan_.merged_in[static_cast<size_t>(i)].flattened()});
                    if (l.kind == LayerKind::classifier && train && dropout_rate > 0.0f) {
                        require(dropout_rng != nullptr, "network: dropout needs an rng");
                        flat = dropout_forward(flat, dropout_rate, *dropout_rng, c.dropout_mask);
                    }
                    c.flat_in = flat;
                    y = dense_forward(flat, p.weights.value,
                                      l.use_bias ? p.bias.value : Tensor());
                    break;
                }
            }

            if (p.has_bn()) {
                Tensor y4 = y.rank() == 4 ? std::move(y)
                                          : net_detail::reshaped(y, {N, y.dim(1), 1, 1});
                if (train) {
                    y4 = batchnorm_forward_train(y4, p.bn_gamma.value, p.bn_beta.value,
                                                 p.bn_running_mean, p.bn_running_var, c.bn);
                } else {
                    y4 = batchnorm_forward_infer(y4, p.bn_gamma.value, p.bn_beta.value,
                                                 p.bn_running_mean, p.bn_running_var);
                }
                y = plan_.out[static_cast<size_t>(i)].flat
                        ? net_detail::reshaped(y4, {N, y4.dim(1)})
                        : std::move(y4);
            }
            if ((l.kind == LayerKind::conv || l.kind == LayerKind::sepconv ||
                 l.kind == LayerKind::fc || l.kind == LayerKind::classifier) &&
                l.use_relu) {
                c.pre_relu = y;
                y = relu_forward(y);
            }
            c.out = std::move(y);
        }
        return tape_.back().out;
    }

    // Backpropagates from d_logits; gradients are freshly written (not
    // accumulated across calls). Requires a preceding training forward pass.
    void backward(const Tensor& d_logits) {
        require(train_, "network: backward needs a training-mode forward pass");
        const int n = static_cast<int>(graph_.layers.size());
        const int N = input_.dim(0);
        for (int i = 0; i < n; ++i) {
            grads_[static_cast<size_t>(i)] = LayerGrads{};
            proj_grads_[static_cast<size_t>(i)].assign(proj_params_[static_cast<size_t>(i)].size(),
                                                       LayerGrads{});
        }
        d_input_ = Tensor(input_.shape);
        std::vector<Tensor> d_out(static_cast<size_t>(n));
        d_out[static_cast<size_t>(n - 1)] = d_logits;

        for (int i = n - 1; i >= 0; --i) {
            const LayerSpec& l = graph_.layers[static_cast<size_t>(i)];
            Cache& c = tape_[static_cast<size_t>(i)];
            LayerParams& p = params_[static_cast<size_t>(i)];
            LayerGrads& g = grads_[static_cast<size_t>(i)];
            Tensor d = std::move(d_out[static_cast<size_t>(i)]);
            if (d.empty()) continue;  // dead branch (no consumer)

            if ((l.kind == LayerKind::conv || l.kind == LayerKind::sepconv ||
                 l.kind == LayerKind::fc || l.kind == LayerKind::classifier) &&
                l.use_relu)
                d = relu_backward(c.pre_relu, d);

            if (p.has_bn()) {
                Tensor d4 = d.rank() == 4 ? std::move(d)
                                          : net_detail::reshaped(d, {N, d.dim(1), 1, 1});
                GradBundle bg = batchnorm_backward(p.bn_gamma.value, c.bn, d4);
                g.d_gamma = std::move(bg.d_gamma);
                g.d_beta = std::move(bg.d_beta);
                d = std::move(bg.d_input);
            }

            Tensor d_merged;
            switch (l.kind) {
                case LayerKind::conv: {
                    if (d.rank() != 4)
                        d = net_detail::reshaped(d, {N, l.features, 1, 1});
                    GradBundle b = conv2d_backward(c.merged, p.weights.value, l.use_bias,
                                                   l.stride, l.pad, d);
                    g.d_weights = std::move(b.d_weights);
                    g.d_bias = std::move(b.d_bias);
                    d_merged = std::move(b.d_input);
                    break;
                }
                case LayerKind::sepconv: {
                    GradBundle b = sepconv2d_backward(c.merged, p.weights.value,
                                                      p.pointwise.value, l.use_bias, l.stride,
                                                      l.pad, c.mid, d);
                    g.d_weights = std::move(b.d_weights);
                    g.d_pointwise = std::move(b.d_pointwise);
                    g.d_bias = std::move(b.d_bias);
                    d_merged = std::move(b.d_input);
                    break;
                }
                case LayerKind::maxpool:
                    d_merged = maxpool_backward(c.argmax, c.merged.shape, d);
                    break;
                case LayerKind::avgpool:
                    d_merged = avgpool_backward(c.merged.shape, l.kernel, l.stride, l.pad, d);
                    break;
                case LayerKind::spp:
                    d_merged = spp_backward(c.merged.shape, l.scales, c.argmax, d);
                    break;
                case LayerKind::gap:
                    d_merged = adaptive_avg_backward(c.merged.shape, l.grid, d);
                    break;
                case LayerKind::fc:
                case LayerKind::classifier: {
                    if (d.rank() != 2) d = net_detail::reshaped(d, {N, l.features});
                    GradBundle b = dense_backward(c.flat_in, p.weights.value, l.use_bias, d);
                    g.d_weights = std::move(b.d_weights);
                    g.d_bias = std::move(b.d_bias);
                    Tensor d_flat = std::move(b.d_input);
                    if (!c.dropout_mask.empty()) d_flat = dropout_backward(c.dropout_mask, d_flat);
                    d_merged = net_detail::reshaped(d_flat, c.merged.shape);
                    break;
                }
            }
            distribute_merge_grad(i, d_merged, d_out);
        }
    }

    void sgd_step(float lr, float momentum) {
        for (auto& [p, g] : param_grad_pairs()) sgd_momentum_step(*p, *g, lr, momentum);
    }

    void adam_step_all(float lr) {
        ++adam_t_;
        for (auto& [p, g] : param_grad_pairs()) adam_step(*p, *g, lr, adam_t_);
    }

private:
    struct Cache {
        Tensor merged;
        Tensor flat_in;  // fc/classifier input actually fed to the dense op
        Tensor pre_relu;
        Tensor mid;  // sepconv depthwise output
        Tensor dropout_mask;
        Tensor out;
        BnCache bn;
        std::vector<int> argmax;
    };

    const Tensor& value_of(int id) const {
        return id < 0 ? input_ : tape_[static_cast<size_t>(id)].out;
    }

    Tensor merge_inputs(int i, int N) {
        const std::vector<int> ins = resolved_inputs(graph_, i);
        const LayerSpec& l = graph_.layers[static_cast<size_t>(i)];
        if (ins.size() == 1) return value_of(ins[0]);

        if (l.concat_inputs) {
            const LayerShape& m = plan_.merged_in[static_cast<size_t>(i)];
            Tensor out({N, m.c, m.h, m.w});
            int off = 0;
            for (int id : ins) {
                const Tensor& v = value_of(id);
                const int ch = v.dim(1);
                for (int nn = 0; nn < N; ++nn)
                    std::copy(v.ptr() + (static_cast<size_t>(nn) * ch) * m.h * m.w,
                              v.ptr() + (static_cast<size_t>(nn) * ch + ch) * m.h * m.w,
                              out.ptr() + ((static_cast<size_t>(nn) * m.c) + off) * m.h * m.w);
                off += ch;
            }
            return out;
        }

        Tensor out = value_of(ins[0]);
        size_t proj_idx = 0;
        for (size_t j = 1; j < ins.size(); ++j) {
            const Tensor& v = value_of(ins[j]);
            Tensor branch;
            if (v.dim(1) != out.dim(1)) {
                LayerParams& pp = proj_params_[static_cast<size_t>(i)][proj_idx++];
                branch = conv2d_forward(v, pp.weights.value, pp.bias.value, 1, 0);
            } else {
                branch = v;
            }
            for (int64_t k = 0; k < out.numel(); ++k) out.data[k] += branch.data[k];
        }
        return out;
    }

    void distribute_merge_grad(int i, Tensor& d_merged, std::vector<Tensor>& d_out) {
        const std::vector<int> ins = resolved_inputs(graph_, i);
        const LayerSpec& l = graph_.layers[static_cast<size_t>(i)];
        auto add_into = [&](int id, const Tensor& d, int c_off, int c_len) {
            Tensor& slot = id < 0 ? d_input_ : d_out[static_cast<size_t>(id)];
            const Tensor& v = value_of(id);
            if (slot.empty()) slot = Tensor(v.shape);
            if (c_len < 0) {
                for (int64_t k = 0; k < slot.numel(); ++k) slot.data[k] += d.data[k];
            } else {
                const int N = d.dim(0), H = d.dim(2), W = d.dim(3), C = d.dim(1);
                for (int nn = 0; nn < N; ++nn)
                    for (int ch = 0; ch < c_len; ++ch) {
                        const float* src =
                            d.ptr() + ((static_cast<size_t>(nn) * C) + c_off + ch) * H * W;
                        float* dst =
                            slot.ptr() + ((static_cast<size_t>(nn) * c_len) + ch) * H * W;
                        for (int k = 0; k < H * W; ++k) dst[k] += src[k];
                    }
            }
        };

        if (ins.size() == 1) {
            add_into(ins[0], d_merged, 0, -1);
            return;
        }
        if (l.concat_inputs) {
            int off = 0;
            for (int id : ins) {
                const int ch = id < 0 ? graph_.input_channels : value_of(id).dim(1);
                add_into(id, d_merged, off, ch);
                off += ch;
            }
            return;
        }
        // Sum merge: every branch sees the same upstream gradient; projected
        // branches route it through the 1x1 backward pass first.
        add_into(ins[0], d_merged, 0, -1);
        size_t proj_idx = 0;
        for (size_t j = 1; j < ins.size(); ++j) {
            const int id = ins[j];
            const Tensor& v = value_of(id);
            if (v.dim(1) != d_merged.dim(1)) {
                LayerParams& pp = proj_params_[static_cast<size_t>(i)][proj_idx];
                GradBundle b =
                    conv2d_backward(v, pp.weights.value, true, 1, 0, d_merged);
                proj_grads_[static_cast<size_t>(i)][proj_idx] =
                    LayerGrads{std::move(b.d_weights), Tensor(), std::move(b.d_bias), Tensor(),
                               Tensor()};
                ++proj_idx;
                add_into(id, b.d_input, 0, -1);
            } else {
                add_into(id, d_merged, 0, -1);
            }
        }
    }

    ArchGraph graph_;
    int in_h_, in_w_;
    ShapeReport plan_;
    std::vector<LayerParams> params_;
    std::vector<std::vector<LayerParams>> proj_params_;
    std::vector<LayerGrads> grads_;
    std::vector<std::vector<LayerGrads>> proj_grads_;
    std::vector<Cache> tape_;
    Tensor input_;
    Tensor d_input_;
    bool train_ = false;
    int64_t adam_t_ = 0;
};

}  // namespace cdnas

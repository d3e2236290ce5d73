#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "cdnas/optim.hpp"
#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

// Autoregressive recurrent policy over layered-DAG architectures: for each
// node it emits one operation choice (softmax over 6 ops) and then one
// connection bit per earlier node (per-predecessor sigmoid heads). Decisions
// feed back in as learned embeddings. Trained by REINFORCE.

constexpr int kControllerOps = 6;

struct DecisionSequence {
    std::vector<int> ops;                     // per node, 0..5
    std::vector<std::vector<uint8_t>> skips;  // skips[i] has i bits (earlier nodes)

    bool operator==(const DecisionSequence&) const = default;
    bool operator<(const DecisionSequence& o) const {
        if (ops != o.ops) return ops < o.ops;
        return skips < o.skips;
    }
};

namespace ctrl_detail {

using Vec = std::vector<float>;

inline float sigmoidd(float z) { return 1.0f / (1.0f + std::exp(-z)); }

// One LSTM layer: z = W x + U h + b, gates packed [input, forget, cell, out].
struct LstmLayer {
    Param w, u, b;
    Tensor dw, du, db;
    int in = 0, hidden = 0;

    LstmLayer() = default;
    LstmLayer(int in_dim, int hidden_dim, Rng& rng) : in(in_dim), hidden(hidden_dim) {
        w = Param(Tensor({4 * hidden, in}));
        u = Param(Tensor({4 * hidden, hidden}));
        b = Param(Tensor({4 * hidden}));
        for (auto& v : w.value.data) v = rng.uniform_range(-0.1f, 0.1f);
        for (auto& v : u.value.data) v = rng.uniform_range(-0.1f, 0.1f);
        zero_grads();
    }

    void zero_grads() {
        dw = Tensor(w.value.shape);
        du = Tensor(u.value.shape);
        db = Tensor(b.value.shape);
    }

    struct Cache {
        Vec x, h_prev, c_prev;
        Vec ig, fg, gg, og;  // post-activation gates
        Vec c, tanh_c;
    };

    void forward(const Vec& x, Vec& h, Vec& c, Cache& cc) const {
        const int H = hidden;
        cc.x = x;
        cc.h_prev = h;
        cc.c_prev = c;
        cc.ig.assign(static_cast<size_t>(H), 0.0f);
        cc.fg = cc.ig;
        cc.gg = cc.ig;
        cc.og = cc.ig;
        cc.c = cc.ig;
        cc.tanh_c = cc.ig;
        for (int r = 0; r < 4 * H; ++r) {
            float z = b.value.data[static_cast<size_t>(r)];
            const float* wr = w.value.ptr() + static_cast<size_t>(r) * in;
            for (int j = 0; j < in; ++j) z += wr[j] * x[static_cast<size_t>(j)];
            const float* ur = u.value.ptr() + static_cast<size_t>(r) * H;
            for (int j = 0; j < H; ++j) z += ur[j] * h[static_cast<size_t>(j)];
            const int k = r % H;
            switch (r / H) {
                case 0: cc.ig[static_cast<size_t>(k)] = sigmoidd(z); break;
                case 1: cc.fg[static_cast<size_t>(k)] = sigmoidd(z); break;
                case 2: cc.gg[static_cast<size_t>(k)] = std::tanh(z); break;
                case 3: cc.og[static_cast<size_t>(k)] = sigmoidd(z); break;
            }
        }
        for (int k = 0; k < H; ++k) {
            cc.c[static_cast<size_t>(k)] = cc.fg[static_cast<size_t>(k)] * c[static_cast<size_t>(k)] +
                                           cc.ig[static_cast<size_t>(k)] * cc.gg[static_cast<size_t>(k)];
            cc.tanh_c[static_cast<size_t>(k)] = std::tanh(cc.c[static_cast<size_t>(k)]);
        }
        h.resize(static_cast<size_t>(H));
        c = cc.c;
        for (int k = 0; k < H; ++k)
            h[static_cast<size_t>(k)] = cc.og[static_cast<size_t>(k)] * cc.tanh_c[static_cast<size_t>(k)];
    }

    // dh/dc are gradients flowing into this step's outputs; dx, dh_prev and
    // dc_prev receive the upstream gradients. Parameter grads accumulate.
    void backward(const Cache& cc, const Vec& dh, const Vec& dc, Vec& dx, Vec& dh_prev,
                  Vec& dc_prev) {
        const int H = hidden;
        Vec dz(static_cast<size_t>(4 * H));
        dx.assign(static_cast<size_t>(in), 0.0f);
        dh_prev.assign(static_cast<size_t>(H), 0.0f);
        dc_prev.assign(static_cast<size_t>(H), 0.0f);
        for (int k = 0; k < H; ++k) {
            const float o = cc.og[static_cast<size_t>(k)], tc = cc.tanh_c[static_cast<size_t>(k)];
            const float i = cc.ig[static_cast<size_t>(k)], f = cc.fg[static_cast<size_t>(k)];
            const float g = cc.gg[static_cast<size_t>(k)];
            const float dct = dc[static_cast<size_t>(k)] + dh[static_cast<size_t>(k)] * o * (1.0f - tc * tc);
            const float d_o = dh[static_cast<size_t>(k)] * tc;
            const float d_i = dct * g;
            const float d_g = dct * i;
            const float d_f = dct * cc.c_prev[static_cast<size_t>(k)];
            dc_prev[static_cast<size_t>(k)] = dct * f;
            dz[static_cast<size_t>(k)] = d_i * i * (1.0f - i);
            dz[static_cast<size_t>(H + k)] = d_f * f * (1.0f - f);
            dz[static_cast<size_t>(2 * H + k)] = d_g * (1.0f - g * g);
            dz[static_cast<size_t>(3 * H + k)] = d_o * o * (1.0f - o);
        }
        for (int r = 0; r < 4 * H; ++r) {
            const float d = dz[static_cast<size_t>(r)];
            if (d == 0.0f) continue;
            float* dwr = dw.ptr() + static_cast<size_t>(r) * in;
            const float* wr = w.value.ptr() + static_cast<size_t>(r) * in;
            for (int j = 0; j < in; ++j) {
                dwr[j] += d * cc.x[static_cast<size_t>(j)];
                dx[static_cast<size_t>(j)] += d * wr[j];
            }
            float* dur = du.ptr() + static_cast<size_t>(r) * H;
            const float* ur = u.value.ptr() + static_cast<size_t>(r) * H;
            for (int j = 0; j < H; ++j) {
                dur[j] += d * cc.h_prev[static_cast<size_t>(j)];
                dh_prev[static_cast<size_t>(j)] += d * ur[j];
            }
            db.data[static_cast<size_t>(r)] += d;
        }
    }
};

}  // namespace ctrl_detail

class Controller {
public:
    // Embedding rows: 0 = start token, 1..6 = op taken, 7..8 = bit value.
    Controller(int nodes, int hidden, int embed, Rng& rng)
        : nodes_(nodes), hidden_(hidden), embed_(embed),
          lstm1_(embed, hidden, rng), lstm2_(hidden, hidden, rng) {
        embed_table_ = Param(Tensor({9, embed}));
        for (auto& v : embed_table_.value.data) v = rng.uniform_range(-0.1f, 0.1f);
        w_op_ = Param(Tensor({kControllerOps, hidden}));
        b_op_ = Param(Tensor({kControllerOps}));
        const int preds = std::max(1, nodes - 1);
        w_skip_ = Param(Tensor({preds, hidden}));
        b_skip_ = Param(Tensor({preds}));
        for (auto& v : w_op_.value.data) v = rng.uniform_range(-0.1f, 0.1f);
        for (auto& v : w_skip_.value.data) v = rng.uniform_range(-0.1f, 0.1f);
        zero_grads();
    }

    int nodes() const { return nodes_; }
    int hidden() const { return hidden_; }
    int embed() const { return embed_; }

    // Draws a sequence; log-prob and entropy of the sampled choices are
    // returned alongside (sums over all 7 + 21 decisions for 7 nodes).
    DecisionSequence sample(Rng& rng, double* logprob = nullptr,
                            double* entropy = nullptr) const {
        DecisionSequence d;
        const auto res = run(&d, &rng);
        if (logprob) *logprob = res.first;
        if (entropy) *entropy = res.second;
        return d;
    }

    // Teacher-forced pass over an existing sequence.
    std::pair<double, double> logprob_entropy(const DecisionSequence& d) const {
        DecisionSequence copy = d;
        return run(&copy, nullptr);
    }

    // Adds coef_lp * d(log-prob)/dθ + coef_ent * d(entropy)/dθ into the
    // gradient accumulators (REINFORCE uses coef_lp = -(r - baseline),
    // coef_ent = -β on the minimized loss).
    void accumulate_gradient(const DecisionSequence& d, double coef_lp, double coef_ent) {
        tape_.clear();
        DecisionSequence copy = d;
        run(&copy, nullptr, true);
        backward(coef_lp, coef_ent);
    }

    void zero_grads() {
        lstm1_.zero_grads();
        lstm2_.zero_grads();
        d_embed_ = Tensor(embed_table_.value.shape);
        d_w_op_ = Tensor(w_op_.value.shape);
        d_b_op_ = Tensor(b_op_.value.shape);
        d_w_skip_ = Tensor(w_skip_.value.shape);
        d_b_skip_ = Tensor(b_skip_.value.shape);
    }

    std::vector<std::pair<Param*, Tensor*>> param_grad_pairs() {
        return {{&embed_table_, &d_embed_}, {&lstm1_.w, &lstm1_.dw}, {&lstm1_.u, &lstm1_.du},
                {&lstm1_.b, &lstm1_.db},    {&lstm2_.w, &lstm2_.dw}, {&lstm2_.u, &lstm2_.du},
                {&lstm2_.b, &lstm2_.db},    {&w_op_, &d_w_op_},      {&b_op_, &d_b_op_},
                {&w_skip_, &d_w_skip_},     {&b_skip_, &d_b_skip_}};
    }

    void adam_update(float lr) {
        ++adam_t_;
        for (auto& [p, g] : param_grad_pairs()) adam_step(*p, *g, lr, adam_t_);
    }

    // Direct access for rigging heads in tests.
    Param& op_head_weights() { return w_op_; }
    Param& op_head_bias() { return b_op_; }
    Param& skip_head_weights() { return w_skip_; }
    Param& skip_head_bias() { return b_skip_; }

private:
    struct Step {
        int embed_row = 0;           // input token
        ctrl_detail::LstmLayer::Cache c1, c2;
        ctrl_detail::Vec h2;         // output of the stack at this step
        bool is_op = false;
        int pred = 0;                // skip-bit head row
        std::vector<float> probs;    // op head: softmax probs
        float q = 0.0f, z = 0.0f;    // bit head: probability and logit
        int choice = 0;
        double step_entropy = 0.0;
    };

    // Runs the whole episode. If rng != nullptr, choices are sampled into
    // *d; otherwise d supplies them (teacher forcing). Returns (logprob,
    // entropy); fills tape_ when keep_tape.
    std::pair<double, double> run(DecisionSequence* d, Rng* rng, bool keep_tape = false) const {
        ctrl_detail::Vec h1(static_cast<size_t>(hidden_), 0.0f), c1 = h1, h2 = h1, c2 = h1;
        double lp = 0.0, ent = 0.0;
        int prev_row = 0;
        if (rng) {
            d->ops.assign(static_cast<size_t>(nodes_), 0);
            d->skips.assign(static_cast<size_t>(nodes_), {});
        } else {
            require(static_cast<int>(d->ops.size()) == nodes_,
                    "controller: sequence node count mismatch");
        }

        for (int node = 0; node < nodes_; ++node) {
            // Operation decision.
            {
                Step st;
                st.embed_row = prev_row;
                st.is_op = true;
                step_lstm(prev_row, h1, c1, h2, c2, st);
                st.probs = op_probs(st.h2);
                int choice;
                if (rng) {
                    choice = sample_categorical(st.probs, *rng);
                    (*d).ops[static_cast<size_t>(node)] = choice;
                } else {
                    choice = d->ops[static_cast<size_t>(node)];
                    require(choice >= 0 && choice < kControllerOps, "controller: op out of range");
                }
                st.choice = choice;
                lp += std::log(std::max(1e-30f, st.probs[static_cast<size_t>(choice)]));
                for (float p : st.probs)
                    if (p > 0.0f) st.step_entropy -= p * std::log(p);
                ent += st.step_entropy;
                if (keep_tape) tape_.push_back(st);
                prev_row = 1 + choice;
            }
            // One connection bit per earlier node.
            if (rng) d->skips[static_cast<size_t>(node)].assign(static_cast<size_t>(node), 0);
            require(static_cast<int>(d->skips[static_cast<size_t>(node)].size()) == node,
                    "controller: skip arity mismatch");
            for (int pred = 0; pred < node; ++pred) {
                Step st;
                st.embed_row = prev_row;
                st.pred = pred;
                step_lstm(prev_row, h1, c1, h2, c2, st);
                st.z = bit_logit(st.h2, pred);
                st.q = ctrl_detail::sigmoidd(st.z);
                int bit;
                if (rng) {
                    bit = rng->uniform() < st.q ? 1 : 0;
                    d->skips[static_cast<size_t>(node)][static_cast<size_t>(pred)] =
                        static_cast<uint8_t>(bit);
                } else {
                    bit = d->skips[static_cast<size_t>(node)][static_cast<size_t>(pred)];
                }
                st.choice = bit;
                const float q = std::min(std::max(st.q, 1e-30f), 1.0f - 1e-7f);
                lp += std::log(bit ? q : 1.0f - q);
                st.step_entropy = -(q * std::log(q) + (1.0f - q) * std::log(1.0f - q));
                ent += st.step_entropy;
                if (keep_tape) tape_.push_back(st);
                prev_row = 7 + bit;
            }
        }
        return {lp, ent};
    }

    void step_lstm(int row, ctrl_detail::Vec& h1, ctrl_detail::Vec& c1, ctrl_detail::Vec& h2,
                   ctrl_detail::Vec& c2, Step& st) const {
        ctrl_detail::Vec x(static_cast<size_t>(embed_));
        const float* e = embed_table_.value.ptr() + static_cast<size_t>(row) * embed_;
        for (int j = 0; j < embed_; ++j) x[static_cast<size_t>(j)] = e[j];
        lstm1_.forward(x, h1, c1, st.c1);
        lstm2_.forward(h1, h2, c2, st.c2);
        st.h2 = h2;
    }

    std::vector<float> op_probs(const ctrl_detail::Vec& h) const {
        std::vector<float> logits(kControllerOps);
        for (int k = 0; k < kControllerOps; ++k) {
            float z = b_op_.value.data[static_cast<size_t>(k)];
            const float* wr = w_op_.value.ptr() + static_cast<size_t>(k) * hidden_;
            for (int j = 0; j < hidden_; ++j) z += wr[j] * h[static_cast<size_t>(j)];
            logits[static_cast<size_t>(k)] = z;
        }
        float mx = logits[0];
        for (float z : logits) mx = std::max(mx, z);
        float sum = 0.0f;
        for (float& z : logits) {
            z = std::exp(z - mx);
            sum += z;
        }
        for (float& z : logits) z /= sum;
        return logits;
    }

    float bit_logit(const ctrl_detail::Vec& h, int pred) const {
        float z = b_skip_.value.data[static_cast<size_t>(pred)];
        const float* wr = w_skip_.value.ptr() + static_cast<size_t>(pred) * hidden_;
        for (int j = 0; j < hidden_; ++j) z += wr[j] * h[static_cast<size_t>(j)];
        return z;
    }

    static int sample_categorical(const std::vector<float>& p, Rng& rng) {
        const double u = rng.uniform();
        double acc = 0.0;
        for (size_t k = 0; k < p.size(); ++k) {
            acc += p[k];
            if (u < acc) return static_cast<int>(k);
        }
        return static_cast<int>(p.size()) - 1;
    }

    // BPTT over the recorded tape.
    void backward(double coef_lp, double coef_ent) {
        const int T = static_cast<int>(tape_.size());
        ctrl_detail::Vec dh1(static_cast<size_t>(hidden_), 0.0f), dc1 = dh1, dh2 = dh1, dc2 = dh1;
        for (int t = T - 1; t >= 0; --t) {
            const Step& st = tape_[static_cast<size_t>(t)];
            // Head gradient lands in dh2 (on top of recurrent flow).
            if (st.is_op) {
                std::vector<float> dlog(kControllerOps);
                for (int k = 0; k < kControllerOps; ++k) {
                    const float p = st.probs[static_cast<size_t>(k)];
                    const float grad_lp = (k == st.choice ? 1.0f : 0.0f) - p;
                    const float grad_ent =
                        p > 0.0f ? -p * (std::log(p) + static_cast<float>(st.step_entropy)) : 0.0f;
                    dlog[static_cast<size_t>(k)] = static_cast<float>(coef_lp) * grad_lp +
                                                   static_cast<float>(coef_ent) * grad_ent;
                }
                for (int k = 0; k < kControllerOps; ++k) {
                    const float dk = dlog[static_cast<size_t>(k)];
                    d_b_op_.data[static_cast<size_t>(k)] += dk;
                    float* dwr = d_w_op_.ptr() + static_cast<size_t>(k) * hidden_;
                    const float* wr = w_op_.value.ptr() + static_cast<size_t>(k) * hidden_;
                    for (int j = 0; j < hidden_; ++j) {
                        dwr[j] += dk * st.h2[static_cast<size_t>(j)];
                        dh2[static_cast<size_t>(j)] += dk * wr[j];
                    }
                }
            } else {
                const float q = st.q;
                const float grad_lp = static_cast<float>(st.choice) - q;
                const float grad_ent = -st.z * q * (1.0f - q);
                const float dz = static_cast<float>(coef_lp) * grad_lp +
                                 static_cast<float>(coef_ent) * grad_ent;
                d_b_skip_.data[static_cast<size_t>(st.pred)] += dz;
                float* dwr = d_w_skip_.ptr() + static_cast<size_t>(st.pred) * hidden_;
                const float* wr = w_skip_.value.ptr() + static_cast<size_t>(st.pred) * hidden_;
                for (int j = 0; j < hidden_; ++j) {
                    dwr[j] += dz * st.h2[static_cast<size_t>(j)];
                    dh2[static_cast<size_t>(j)] += dz * wr[j];
                }
            }

            // Stack backward: layer-2 input gradient feeds layer-1's hidden.
            ctrl_detail::Vec dx2, dh2_prev, dc2_prev, dx1, dh1_prev, dc1_prev;
            lstm2_.backward(st.c2, dh2, dc2, dx2, dh2_prev, dc2_prev);
            for (int j = 0; j < hidden_; ++j) dh1[static_cast<size_t>(j)] += dx2[static_cast<size_t>(j)];
            lstm1_.backward(st.c1, dh1, dc1, dx1, dh1_prev, dc1_prev);
            float* de = d_embed_.ptr() + static_cast<size_t>(st.embed_row) * embed_;
            for (int j = 0; j < embed_; ++j) de[j] += dx1[static_cast<size_t>(j)];
            dh2 = dh2_prev;
            dc2 = dc2_prev;
            dh1 = dh1_prev;
            dc1 = dc1_prev;
        }
    }

    int nodes_, hidden_, embed_;
    ctrl_detail::LstmLayer lstm1_, lstm2_;
    Param embed_table_, w_op_, b_op_, w_skip_, b_skip_;
    Tensor d_embed_, d_w_op_, d_b_op_, d_w_skip_, d_b_skip_;
    int64_t adam_t_ = 0;
    mutable std::vector<Step> tape_;
};

// Exponential-moving-average reward baseline for variance reduction.
struct RewardBaseline {
    double value = 0.0;
    double decay = 0.95;

    void update(double r) { value = decay * value + (1.0 - decay) * r; }
};

// One policy-gradient step on a batch of (sequence, reward) pairs. The
// minimized loss is -(r - baseline) * logprob - beta * entropy; the baseline
// is updated after the advantages are taken.
inline void reinforce_step(Controller& ctrl, const std::vector<DecisionSequence>& seqs,
                           const std::vector<double>& rewards, RewardBaseline& baseline,
                           float lr, double entropy_beta) {
    require(seqs.size() == rewards.size() && !seqs.empty(), "reinforce: batch mismatch");
    ctrl.zero_grads();
    const double inv = 1.0 / static_cast<double>(seqs.size());
    for (size_t i = 0; i < seqs.size(); ++i) {
        const double adv = rewards[i] - baseline.value;
        ctrl.accumulate_gradient(seqs[i], -adv * inv, -entropy_beta * inv);
    }
    ctrl.adam_update(lr);
    for (double r : rewards) baseline.update(r);
}

}  // namespace cdnas

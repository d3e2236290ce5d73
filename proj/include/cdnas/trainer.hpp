#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cdnas/layers.hpp"
#include "cdnas/network.hpp"
#include "cdnas/rng.hpp"

namespace cdnas {

// ------------------------------------------------------------- lr schedule

// Cosine-annealed warm restarts: within a cycle of length T the rate decays
// from lr_max to lr_min along a half cosine; each new cycle doubles T.
// With t0 = 10: restarts at epochs 10, 30, 70, ...; 4 cycles span 150
// epochs, 5 cycles span 310.
struct SgdwrSchedule {
    double lr_max = 1e-2;
    double lr_min = 1e-5;
    int t0 = 10;
    int cycles = 4;
};

inline int total_epochs(const SgdwrSchedule& s) {
    int total = 0, len = s.t0;
    for (int c = 0; c < s.cycles; ++c) {
        total += len;
        len *= 2;
    }
    return total;
}

// `epoch` is continuous: schedules step per mini-batch, so epoch 3.5 means
// halfway through the fourth epoch's batches.
inline double lr_at(const SgdwrSchedule& s, double epoch) {
    require(epoch >= 0.0, "schedule: negative epoch");
    double start = 0.0;
    double len = s.t0;
    while (epoch >= start + len && len > 0) {
        start += len;
        len *= 2.0;
    }
    const double t_cur = epoch - start;
    return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(M_PI * t_cur / len));
}

// ------------------------------------------------------------- metrics

// Multi-target scoring: a sample counts as correct only when every one of
// its binarized class predictions (sigmoid >= 0.5, i.e. logit >= 0) matches
// the target vector exactly. Per-class accuracy is the usual marginal.
struct Metrics {
    double multi_target = 0.0;
    std::vector<double> per_class;
    double avg_per_class = 0.0;
    int64_t samples = 0;
};

inline Metrics compute_metrics(const Tensor& logits, const Tensor& targets) {
    require(logits.same_shape(targets) && logits.rank() == 2, "metrics: need [N,K] pairs");
    const int N = logits.dim(0), K = logits.dim(1);
    Metrics m;
    m.samples = N;
    m.per_class.assign(static_cast<size_t>(K), 0.0);
    int64_t exact = 0;
    for (int n = 0; n < N; ++n) {
        bool all = true;
        for (int k = 0; k < K; ++k) {
            const bool pred = logits.at(n, k) >= 0.0f;
            const bool want = targets.at(n, k) >= 0.5f;
            if (pred == want)
                m.per_class[static_cast<size_t>(k)] += 1.0;
            else
                all = false;
        }
        if (all) ++exact;
    }
    m.multi_target = static_cast<double>(exact) / N;
    for (double& v : m.per_class) {
        v /= N;
        m.avg_per_class += v;
    }
    m.avg_per_class /= K;
    return m;
}

// ------------------------------------------------------------- data carrier

// An in-memory dataset: x [N,C,H,W], y [N,K].
struct DataView {
    Tensor x;
    Tensor y;

    int size() const { return x.empty() ? 0 : x.dim(0); }
};

inline void slice_batch(const DataView& d, const std::vector<int>& order, int from, int to,
                        Tensor* bx, Tensor* by) {
    const int n = to - from;
    const int C = d.x.dim(1), H = d.x.dim(2), W = d.x.dim(3), K = d.y.dim(1);
    *bx = Tensor({n, C, H, W});
    *by = Tensor({n, K});
    const size_t plane = static_cast<size_t>(C) * H * W;
    for (int i = 0; i < n; ++i) {
        const int src = order[static_cast<size_t>(from + i)];
        std::copy(d.x.ptr() + src * plane, d.x.ptr() + (src + 1) * plane,
                  bx->ptr() + i * plane);
        for (int k = 0; k < K; ++k) by->at(i, k) = d.y.at(src, k);
    }
}

inline Metrics evaluate(Network& net, const DataView& data, int batch = 64) {
    require(data.size() > 0, "evaluate: empty dataset");
    std::vector<int> order(static_cast<size_t>(data.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Tensor all_logits({data.size(), data.y.dim(1)});
    for (int from = 0; from < data.size(); from += batch) {
        const int to = std::min(from + batch, data.size());
        Tensor bx, by;
        slice_batch(data, order, from, to, &bx, &by);
        const Tensor logits = net.forward(bx, /*train=*/false);
        for (int i = 0; i < to - from; ++i)
            for (int k = 0; k < logits.dim(1); ++k) all_logits.at(from + i, k) = logits.at(i, k);
    }
    return compute_metrics(all_logits, data.y);
}

// ------------------------------------------------------------- training

struct TrainConfig {
    int batch = 16;
    SgdwrSchedule schedule;
    float momentum = 0.9f;
    float dropout = 0.5f;
    uint64_t seed = 1;
    // Abandon the run if validation accuracy is below this at the end of the
    // first schedule cycle (0 disables).
    double early_stop_acc = 0.0;
    int eval_batch = 64;
};

struct EpochStat {
    int epoch = 0;
    double train_loss = 0.0;
    double val_multi_target = 0.0;
};

struct History {
    std::vector<EpochStat> epochs;
    double best_val = 0.0;
    int best_epoch = -1;
    double bv_test = 0.0;  // test accuracy measured at the best-validation epoch
    bool early_stopped = false;
    std::vector<Tensor> best_params;  // snapshot at the best-validation epoch
};

// Snapshots cover the learnable parameters plus batchnorm running
// statistics; both are needed to reproduce an evaluation result.
inline std::vector<Tensor> snapshot_params(Network& net) {
    std::vector<Tensor> out;
    for (auto& [p, g] : net.param_grad_pairs()) out.push_back(p->value);
    for (Tensor* t : net.state_tensors()) out.push_back(*t);
    return out;
}

inline void restore_params(Network& net, const std::vector<Tensor>& snap) {
    auto pairs = net.param_grad_pairs();
    auto state = net.state_tensors();
    require(pairs.size() + state.size() == snap.size(), "restore: tensor list mismatch");
    for (size_t i = 0; i < pairs.size(); ++i) {
        require(snap[i].same_shape(pairs[i].first->value), "restore: shape mismatch");
        pairs[i].first->value = snap[i];
    }
    for (size_t i = 0; i < state.size(); ++i) {
        require(snap[pairs.size() + i].same_shape(*state[i]), "restore: state shape mismatch");
        *state[i] = snap[pairs.size() + i];
    }
}

// One full child training run: heavy-ball SGD with warm restarts, dropout on
// the classifier input, per-epoch validation, best-validation snapshotting,
// and the optional abandon-early rule used during architecture search.
inline History train_child(Network& net, const DataView& train, const DataView& val,
                           const DataView* test, const TrainConfig& cfg) {
    require(train.size() >= cfg.batch, "train: fewer samples than one batch");
    History h;
    Rng shuffle_rng(derive_seed(cfg.seed, "trainer/shuffle"));
    Rng dropout_rng(derive_seed(cfg.seed, "trainer/dropout"));

    std::vector<int> order(static_cast<size_t>(train.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    const int batches = train.size() / cfg.batch;  // drop the ragged tail
    const int epochs = total_epochs(cfg.schedule);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (int i = train.size() - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[shuffle_rng.uniform_int(static_cast<uint64_t>(i + 1))]);

        double loss_sum = 0.0;
        for (int b = 0; b < batches; ++b) {
            Tensor bx, by;
            slice_batch(train, order, b * cfg.batch, (b + 1) * cfg.batch, &bx, &by);
            const double lr =
                lr_at(cfg.schedule, epoch + static_cast<double>(b) / batches);
            const Tensor logits = net.forward(bx, /*train=*/true, cfg.dropout, &dropout_rng);
            Tensor d_logits;
            loss_sum += sigmoid_bce_loss(logits, by, &d_logits);
            net.backward(d_logits);
            net.sgd_step(static_cast<float>(lr), cfg.momentum);
        }

        EpochStat st;
        st.epoch = epoch;
        st.train_loss = loss_sum / std::max(1, batches);
        st.val_multi_target = evaluate(net, val, cfg.eval_batch).multi_target;
        h.epochs.push_back(st);

        if (st.val_multi_target > h.best_val || h.best_epoch < 0) {
            h.best_val = st.val_multi_target;
            h.best_epoch = epoch;
            h.best_params = snapshot_params(net);
            if (test) h.bv_test = evaluate(net, *test, cfg.eval_batch).multi_target;
        }

        if (cfg.early_stop_acc > 0.0 && epoch + 1 == cfg.schedule.t0 &&
            st.val_multi_target < cfg.early_stop_acc) {
            h.early_stopped = true;
            return h;
        }
    }
    return h;
}

// ------------------------------------------------------------- summaries

// Trailing moving average with partial windows at the start.
inline std::vector<double> moving_average(const std::vector<double>& v, int window = 20) {
    require(window >= 1, "moving average: window must be positive");
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= static_cast<size_t>(window)) acc -= v[i - static_cast<size_t>(window)];
        out[i] = acc / std::min<double>(window, static_cast<double>(i + 1));
    }
    return out;
}

// ------------------------------------------------------------- grid search

struct GridCell {
    int batch = 0;
    double lr_max = 0.0, lr_min = 0.0;
    double best_val = 0.0;
    double bv_test = 0.0;
    double bv_train = 0.0;
};

struct GridResult {
    std::vector<GridCell> cells;
    int best_index = -1;
};

// The hyper-parameter sweep: four batch sizes crossed with three warm-restart
// learning-rate ranges.
inline std::vector<std::pair<double, double>> grid_lr_ranges() {
    return {{1e-1, 1e-5}, {5e-2, 5e-4}, {1e-2, 1e-5}};
}

inline std::vector<int> grid_batch_sizes() { return {128, 64, 32, 16}; }

inline GridResult run_grid_search(const ArchGraph& arch, int in_h, int in_w,
                                  const DataView& train, const DataView& val,
                                  const DataView* test, const SgdwrSchedule& base,
                                  uint64_t seed) {
    GridResult res;
    for (int batch : grid_batch_sizes()) {
        if (batch > train.size()) continue;
        for (const auto& [mx, mn] : grid_lr_ranges()) {
            TrainConfig cfg;
            cfg.batch = batch;
            cfg.schedule = base;
            cfg.schedule.lr_max = mx;
            cfg.schedule.lr_min = mn;
            cfg.seed = derive_seed(seed, "grid/" + std::to_string(batch) + "/" +
                                             std::to_string(mx));
            Rng init(derive_seed(cfg.seed, "grid/init"));
            Network net(arch, in_h, in_w, init);
            History h = train_child(net, train, val, test, cfg);
            GridCell cell;
            cell.batch = batch;
            cell.lr_max = mx;
            cell.lr_min = mn;
            cell.best_val = h.best_val;
            cell.bv_test = h.bv_test;
            if (!h.best_params.empty()) {
                restore_params(net, h.best_params);
                cell.bv_train = evaluate(net, train, cfg.eval_batch).multi_target;
            }
            res.cells.push_back(cell);
            if (res.best_index < 0 || cell.best_val > res.cells[res.best_index].best_val)
                res.best_index = static_cast<int>(res.cells.size()) - 1;
        }
    }
    return res;
}

}  // namespace cdnas

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdnas/arch.hpp"
#include "cdnas/controller.hpp"
#include "cdnas/network.hpp"
#include "cdnas/rng.hpp"
#include "cdnas/trainer.hpp"

namespace cdnas {

// Weight-sharing architecture search over a layered DAG of 7 nodes. Every
// node picks one of six operations and any subset of earlier nodes as extra
// inputs (summed with its immediate predecessor). During the search all nodes
// share one weight bank and run at a fixed width with stride 1, so any
// sampled path can reuse the same tensors; the derived architecture is then
// re-materialized with a widening feature ladder and trained from scratch.

enum class EnasOp { conv3 = 0, conv5, sepconv3, sepconv5, maxpool3, avgpool3 };

constexpr int kEnasNumOps = 6;

inline const char* enas_op_name(int op) {
    switch (static_cast<EnasOp>(op)) {
        case EnasOp::conv3: return "conv3";
        case EnasOp::conv5: return "conv5";
        case EnasOp::sepconv3: return "sepconv3";
        case EnasOp::sepconv5: return "sepconv5";
        case EnasOp::maxpool3: return "maxpool3";
        case EnasOp::avgpool3: return "avgpool3";
    }
    return "?";
}

struct EnasSpace {
    int nodes = 7;
    int search_features = 64;  // uniform width while sharing weights
    std::vector<int> final_features = {64, 64, 128, 128, 256, 256, 256};
    int num_classes = 6;
    int input_channels = 3;
};

enum class EnasMode { search, final };

inline std::string decisions_to_string(const DecisionSequence& d) {
    std::ostringstream os;
    for (size_t i = 0; i < d.ops.size(); ++i) {
        if (i) os << ' ';
        os << enas_op_name(d.ops[i]);
        if (!d.skips[i].empty()) {
            os << '[';
            for (size_t j = 0; j < d.skips[i].size(); ++j) os << (d.skips[i][j] ? '1' : '0');
            os << ']';
        }
    }
    return os.str();
}

// A compiled decision sequence plus the bookkeeping needed to exchange
// parameters with a shared bank: for each node, the layer id that owns its
// learnables (-1 when a parameter-free pool needed no channel fix).
struct MaterializedArch {
    ArchGraph graph;
    std::vector<int> param_layer;
    std::vector<int> node_out;
    int classifier_layer = 0;
};

namespace enas_detail {

inline bool is_pool(int op) {
    return op == static_cast<int>(EnasOp::maxpool3) || op == static_cast<int>(EnasOp::avgpool3);
}

inline LayerSpec op_layer_spec(int op, int features) {
    LayerSpec l;
    l.features = features;
    l.stride = 1;
    switch (static_cast<EnasOp>(op)) {
        case EnasOp::conv3:
            l.kind = LayerKind::conv;
            l.kernel = 3;
            break;
        case EnasOp::conv5:
            l.kind = LayerKind::conv;
            l.kernel = 5;
            break;
        case EnasOp::sepconv3:
            l.kind = LayerKind::sepconv;
            l.kernel = 3;
            break;
        case EnasOp::sepconv5:
            l.kind = LayerKind::sepconv;
            l.kernel = 5;
            break;
        case EnasOp::maxpool3:
            l.kind = LayerKind::maxpool;
            l.kernel = 3;
            break;
        case EnasOp::avgpool3:
            l.kind = LayerKind::avgpool;
            l.kernel = 3;
            break;
    }
    l.pad = (l.kernel - 1) / 2;  // same-padding keeps the grid fixed
    const bool pool = is_pool(op);
    l.use_bn = !pool;
    l.use_relu = !pool;
    l.use_bias = !pool;
    return l;
}

// Plain 1x1 conv that fixes the channel count behind a pool (pools cannot
// change width themselves); same convention as automatic merge projections.
inline LayerSpec channel_fix_spec(int features) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.features = features;
    l.kernel = 1;
    l.stride = 1;
    l.pad = 0;
    l.use_bn = false;
    l.use_relu = false;
    return l;
}

}  // namespace enas_detail

inline MaterializedArch materialize_arch(const DecisionSequence& d, const EnasSpace& sp,
                                         EnasMode mode) {
    const int n = sp.nodes;
    require(static_cast<int>(d.ops.size()) == n, "enas: decision count != nodes");
    require(mode == EnasMode::search || static_cast<int>(sp.final_features.size()) == n,
            "enas: final feature ladder must list one width per node");
    auto feat = [&](int i) {
        return mode == EnasMode::search ? sp.search_features
                                        : sp.final_features[static_cast<size_t>(i)];
    };

    MaterializedArch m;
    m.graph.input_channels = sp.input_channels;
    m.param_layer.assign(static_cast<size_t>(n), -1);
    m.node_out.assign(static_cast<size_t>(n), -1);

    for (int i = 0; i < n; ++i) {
        require(static_cast<int>(d.skips[static_cast<size_t>(i)].size()) == i,
                "enas: node " + std::to_string(i) + " needs " + std::to_string(i) + " skip bits");
        // Immediate predecessor first (it sets the merge width), then any
        // selected earlier nodes in order.
        std::vector<int> ins;
        ins.push_back(i == 0 ? -1 : m.node_out[static_cast<size_t>(i - 1)]);
        for (int j = 0; j < i; ++j)
            if (d.skips[static_cast<size_t>(i)][static_cast<size_t>(j)] && j != i - 1)
                ins.push_back(m.node_out[static_cast<size_t>(j)]);

        const int op = d.ops[static_cast<size_t>(i)];
        require(op >= 0 && op < kEnasNumOps, "enas: op id out of range");
        LayerSpec spec = enas_detail::op_layer_spec(op, feat(i));
        spec.inputs = ins;
        m.graph.layers.push_back(spec);
        const int op_id = static_cast<int>(m.graph.layers.size()) - 1;

        if (enas_detail::is_pool(op)) {
            const int in_c = i == 0 ? sp.input_channels : feat(i - 1);
            if (in_c != feat(i)) {
                LayerSpec fix = enas_detail::channel_fix_spec(feat(i));
                fix.inputs = {op_id};
                m.graph.layers.push_back(fix);
                m.param_layer[static_cast<size_t>(i)] =
                    static_cast<int>(m.graph.layers.size()) - 1;
            }
        } else {
            m.param_layer[static_cast<size_t>(i)] = op_id;
        }
        m.node_out[static_cast<size_t>(i)] = static_cast<int>(m.graph.layers.size()) - 1;
    }

    LayerSpec gap;
    gap.kind = LayerKind::gap;
    gap.grid = 1;
    gap.use_relu = false;
    gap.inputs = {m.node_out.back()};
    m.graph.layers.push_back(gap);

    LayerSpec cls;
    cls.kind = LayerKind::classifier;
    cls.features = sp.num_classes;
    cls.use_relu = false;
    m.graph.layers.push_back(cls);
    m.classifier_layer = static_cast<int>(m.graph.layers.size()) - 1;

    validate_graph(m.graph);
    return m;
}

// Lazily populated map from (node, op) to that pair's shared parameters.
// Entry initialization is seeded per key, so contents never depend on the
// order in which architectures were sampled. Pool entries hold only the 1x1
// channel fix (nothing at all when no fix is needed).
class EnasBank {
public:
    EnasBank(EnasSpace space, uint64_t seed) : sp_(std::move(space)), seed_(seed) {}

    const EnasSpace& space() const { return sp_; }
    uint64_t seed() const { return seed_; }

    LayerParams& node_entry(int node, int op) {
        require(node >= 0 && node < sp_.nodes && op >= 0 && op < kEnasNumOps,
                "bank: (node, op) out of range");
        auto it = entries_.find({node, op});
        if (it == entries_.end()) it = entries_.emplace(std::make_pair(node, op), make_entry(node, op)).first;
        return it->second;
    }

    LayerParams& classifier_entry() {
        if (!classifier_) classifier_ = make_classifier();
        return *classifier_;
    }

    // Created entries, classifier included.
    size_t entry_count() const { return entries_.size() + (classifier_ ? 1u : 0u); }

private:
    // Builds the entry by compiling a minimal graph through Network, so all
    // shape and init conventions stay identical to from-scratch training.
    LayerParams make_entry(int node, int op) const {
        const int in_c = node == 0 ? sp_.input_channels : sp_.search_features;
        ArchGraph g;
        g.input_channels = in_c;
        g.layers.push_back(enas_detail::op_layer_spec(op, sp_.search_features));
        int steal = 0;
        if (enas_detail::is_pool(op)) {
            if (in_c == sp_.search_features) return {};
            g.layers.push_back(enas_detail::channel_fix_spec(sp_.search_features));
            steal = 1;
        }
        append_head(g);
        Rng rng(derive_seed(seed_, "enas/bank/" + std::to_string(node) + "/" +
                                       std::string(enas_op_name(op))));
        Network net(g, 8, 8, rng);
        return net.layer_params()[static_cast<size_t>(steal)];
    }

    LayerParams make_classifier() const {
        ArchGraph g;
        g.input_channels = sp_.search_features;
        append_head(g);
        Rng rng(derive_seed(seed_, "enas/bank/classifier"));
        Network net(g, 8, 8, rng);
        return net.layer_params().back();
    }

    void append_head(ArchGraph& g) const {
        LayerSpec gap;
        gap.kind = LayerKind::gap;
        gap.grid = 1;
        gap.use_relu = false;
        g.layers.push_back(gap);
        LayerSpec cls;
        cls.kind = LayerKind::classifier;
        cls.features = sp_.num_classes;
        cls.use_relu = false;
        g.layers.push_back(cls);
    }

    EnasSpace sp_;
    uint64_t seed_;
    std::map<std::pair<int, int>, LayerParams> entries_;
    std::optional<LayerParams> classifier_;
};

// Moves the sampled path's parameters (with optimizer and BN state) into a
// freshly compiled network; store_shared writes them back after a step.
inline void load_shared(Network& net, const MaterializedArch& m, const DecisionSequence& d,
                        EnasBank& bank) {
    for (size_t i = 0; i < m.param_layer.size(); ++i) {
        const int L = m.param_layer[i];
        if (L < 0) continue;
        net.layer_params()[static_cast<size_t>(L)] = bank.node_entry(static_cast<int>(i), d.ops[i]);
    }
    net.layer_params()[static_cast<size_t>(m.classifier_layer)] = bank.classifier_entry();
}

inline void store_shared(Network& net, const MaterializedArch& m, const DecisionSequence& d,
                         EnasBank& bank) {
    for (size_t i = 0; i < m.param_layer.size(); ++i) {
        const int L = m.param_layer[i];
        if (L < 0) continue;
        bank.node_entry(static_cast<int>(i), d.ops[i]) = net.layer_params()[static_cast<size_t>(L)];
    }
    bank.classifier_entry() = net.layer_params()[static_cast<size_t>(m.classifier_layer)];
}

namespace enas_detail {

inline Network compile_shared(EnasBank& bank, const DecisionSequence& d, int h, int w,
                              MaterializedArch* out) {
    *out = materialize_arch(d, bank.space(), EnasMode::search);
    Rng scratch(0x0e7a5);  // immediately overwritten by the bank load
    Network net(out->graph, h, w, scratch);
    for (const auto& pr : net.plan().proj)
        require(pr.empty(), "enas: search-mode graph must not need projections");
    load_shared(net, *out, d, bank);
    return net;
}

}  // namespace enas_detail

// One SGD step of the shared weights along a sampled path. Only bank entries
// on the path are read or written.
inline double shared_train_step(EnasBank& bank, const DecisionSequence& d, const Tensor& x,
                                const Tensor& y, float lr, float momentum) {
    MaterializedArch m;
    Network net = enas_detail::compile_shared(bank, d, x.shape[2], x.shape[3], &m);
    Tensor logits = net.forward(x, true);
    Tensor dlogits;
    const double loss = sigmoid_bce_loss(logits, y, &dlogits);
    net.backward(dlogits);
    net.sgd_step(lr, momentum);
    store_shared(net, m, d, bank);
    return loss;
}

// Multi-target accuracy of a path under the current shared weights. Uses
// batch statistics (running averages in the bank mix many architectures) and
// discards the throwaway network, so the bank is left untouched.
inline double shared_reward(EnasBank& bank, const DecisionSequence& d, const Tensor& x,
                            const Tensor& y) {
    MaterializedArch m;
    Network net = enas_detail::compile_shared(bank, d, x.shape[2], x.shape[3], &m);
    const Tensor logits = net.forward(x, true);
    return compute_metrics(logits, y).multi_target;
}

// Same reward over a whole dataset, batched.
inline double shared_eval(EnasBank& bank, const DecisionSequence& d, const DataView& data,
                          int batch = 64) {
    const int n = data.size();
    require(n > 0, "enas: empty eval set");
    MaterializedArch m;
    Network net = enas_detail::compile_shared(bank, d, data.x.shape[2], data.x.shape[3], &m);
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Tensor all_logits({n, bank.space().num_classes});
    for (int from = 0; from < n; from += batch) {
        const int to = std::min(n, from + batch);
        Tensor bx, by;
        slice_batch(data, order, from, to, &bx, &by);
        const Tensor logits = net.forward(bx, true);
        for (int i = from; i < to; ++i)
            for (int k = 0; k < bank.space().num_classes; ++k)
                all_logits.at(i, k) = logits.at(i - from, k);
    }
    return compute_metrics(all_logits, data.y).multi_target;
}

struct EnasConfig {
    EnasSpace space;
    SgdwrSchedule schedule{0.05f, 1e-4f, 10, 2};  // shared-weight learning rate
    float momentum = 0.9f;
    int batch = 64;
    int controller_steps = 30;  // policy updates per epoch
    int controller_hidden = 64;
    int controller_embed = 32;
    float controller_lr = 1e-3f;
    float entropy_beta = 1e-4f;
    double baseline_decay = 0.95;
    int reward_batch = 32;  // validation minibatch per policy update
    uint64_t seed = 1;
};

struct EnasEpochStat {
    int epoch = 0;
    double shared_loss = 0.0;  // mean over the epoch's training steps
    double mean_reward = 0.0;  // mean over the epoch's policy updates
    double baseline = 0.0;
};

struct EnasSearchResult {
    Controller controller;
    EnasBank bank;
    std::vector<EnasEpochStat> epochs;
};

// Alternating optimization: each epoch first walks the training set once,
// updating shared weights along freshly sampled paths under the warm-restart
// schedule, then performs a fixed number of policy-gradient updates whose reward is the
// multi-target accuracy of a sampled path on one validation minibatch.
inline EnasSearchResult run_enas_search(const EnasConfig& cfg, const DataView& train,
                                        const DataView& val) {
    require(train.size() >= cfg.batch, "enas: training set smaller than one batch");
    require(val.size() > 0, "enas: empty validation set");

    Rng init_rng(derive_seed(cfg.seed, "enas/controller-init"));
    Controller ctrl(cfg.space.nodes, cfg.controller_hidden, cfg.controller_embed, init_rng);
    EnasBank bank(cfg.space, derive_seed(cfg.seed, "enas/bank"));
    RewardBaseline baseline{0.0, cfg.baseline_decay};

    Rng sample_rng(derive_seed(cfg.seed, "enas/sample"));
    Rng shuffle_rng(derive_seed(cfg.seed, "enas/shuffle"));
    Rng pick_rng(derive_seed(cfg.seed, "enas/val-pick"));

    const int n = train.size();
    const int batches = n / cfg.batch;
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    std::vector<EnasEpochStat> stats;
    const int epochs = total_epochs(cfg.schedule);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Phase A: shared weights.
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(static_cast<uint64_t>(i + 1)))]);
        double loss_sum = 0.0;
        for (int b = 0; b < batches; ++b) {
            const float lr = static_cast<float>(
                lr_at(cfg.schedule, static_cast<double>(epoch) + static_cast<double>(b) / batches));
            const DecisionSequence d = ctrl.sample(sample_rng);
            Tensor bx, by;
            slice_batch(train, order, b * cfg.batch, (b + 1) * cfg.batch, &bx, &by);
            const double loss = shared_train_step(bank, d, bx, by, lr, cfg.momentum);
            if (!std::isfinite(loss))
                throw std::runtime_error(
                    "enas: non-finite training loss (epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(b) + ", lr " + std::to_string(lr) + ", arch " +
                    decisions_to_string(d) + ")");
            loss_sum += loss;
        }

        // Phase B: controller.
        double reward_sum = 0.0;
        for (int s = 0; s < cfg.controller_steps; ++s) {
            const DecisionSequence d = ctrl.sample(sample_rng);
            std::vector<int> pick(static_cast<size_t>(std::min(cfg.reward_batch, val.size())));
            for (auto& ix : pick)
                ix = static_cast<int>(pick_rng.uniform_int(static_cast<uint64_t>(val.size())));
            Tensor vx, vy;
            slice_batch(val, pick, 0, static_cast<int>(pick.size()), &vx, &vy);
            const double r = shared_reward(bank, d, vx, vy);
            if (!std::isfinite(r))
                throw std::runtime_error("enas: non-finite reward (epoch " +
                                         std::to_string(epoch) + ", step " + std::to_string(s) +
                                         ", arch " + decisions_to_string(d) + ")");
            reinforce_step(ctrl, {d}, {r}, baseline, cfg.controller_lr, cfg.entropy_beta);
            reward_sum += r;
        }

        stats.push_back({epoch, batches > 0 ? loss_sum / batches : 0.0,
                         cfg.controller_steps > 0 ? reward_sum / cfg.controller_steps : 0.0,
                         baseline.value});
    }
    return {std::move(ctrl), std::move(bank), std::move(stats)};
}

struct DerivedArch {
    DecisionSequence decisions;
    double reward = 0.0;       // shared-weight validation accuracy
    ArchGraph final_graph;     // widening ladder, ready for from-scratch training
};

// Samples a pool of candidates from the trained policy, de-duplicates them,
// ranks by shared-weight accuracy on the full validation set and returns the
// top picks materialized in final mode.
inline std::vector<DerivedArch> derive_final(const Controller& ctrl, EnasBank& bank,
                                             const DataView& val, int top_n, int pool,
                                             uint64_t seed, int eval_batch = 64) {
    Rng rng(derive_seed(seed, "enas/derive"));
    std::vector<DecisionSequence> unique;
    std::set<DecisionSequence> seen;
    for (int i = 0; i < pool; ++i) {
        DecisionSequence d = ctrl.sample(rng);
        if (seen.insert(d).second) unique.push_back(std::move(d));
    }
    std::vector<DerivedArch> ranked;
    ranked.reserve(unique.size());
    for (const DecisionSequence& d : unique)
        ranked.push_back({d, shared_eval(bank, d, val, eval_batch), {}});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const DerivedArch& a, const DerivedArch& b) { return a.reward > b.reward; });
    if (static_cast<int>(ranked.size()) > top_n) ranked.resize(static_cast<size_t>(top_n));
    for (DerivedArch& da : ranked)
        da.final_graph = materialize_arch(da.decisions, bank.space(), EnasMode::final).graph;
    return ranked;
}

}  // namespace cdnas

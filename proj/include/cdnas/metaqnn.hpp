#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdnas/arch.hpp"
#include "cdnas/arch_dsl.hpp"
#include "cdnas/rng.hpp"

namespace cdnas {

// Q-learning architecture search over a layered CNN space: an agent picks
// layers left to right (3-10 convs, then an SPP stage, an optional hidden
// dense layer, and the classifier) and receives the child network's
// multi-target validation accuracy as terminal reward.

// ------------------------------------------------------------- action space

enum class QnnActionKind { conv, skip, spp, dense, classifier };

struct QnnAction {
    QnnActionKind kind = QnnActionKind::conv;
    int kernel = 0;    // conv
    int features = 0;  // conv / dense
    int stride = 1;    // conv
    int pad = 0;       // conv
    int scales = 0;    // spp

    bool padded_3x3() const {
        return kind == QnnActionKind::conv && kernel == 3 && pad == 1;
    }
};

struct MetaQnnSpace {
    std::vector<int> kernels{3, 5, 7, 9, 11};
    std::vector<int> conv_features{32, 64, 128, 256};
    std::vector<int> spp_scales{3, 4, 5};
    std::vector<int> dense_sizes{32, 64, 128};
    int min_convs = 3;
    int max_convs = 10;
    int num_classes = 6;
    int input_channels = 3;
    bool allow_skip = true;

    // Fixed, documented enumeration order (greedy ties break to the lowest
    // index): conv variants sorted by kernel, then features, each emitting
    // [stride 1 unpadded], [padded, 3x3 only], [stride 2, kernels > 5 only];
    // then skip, spp scales, dense sizes, classifier.
    std::vector<QnnAction> actions() const {
        std::vector<QnnAction> out;
        for (int k : kernels)
            for (int f : conv_features) {
                out.push_back({QnnActionKind::conv, k, f, 1, 0, 0});
                if (k == 3) out.push_back({QnnActionKind::conv, k, f, 1, 1, 0});
                if (k > 5) out.push_back({QnnActionKind::conv, k, f, 2, 0, 0});
            }
        if (allow_skip) out.push_back({QnnActionKind::skip});
        for (int s : spp_scales) out.push_back({QnnActionKind::spp, 0, 0, 1, 0, s});
        for (int d : dense_sizes) out.push_back({QnnActionKind::dense, 0, d});
        out.push_back({QnnActionKind::classifier, 0, num_classes});
        return out;
    }
};

// ------------------------------------------------------------- search state

// Minimal Markov state: how deep we are, what the last placed layer looks
// like, and whether a just-taken skip action still has to be closed by a
// padded 3x3 conv.
struct SearchState {
    int8_t phase = 0;   // 0 body, 1 head, 2 terminal
    int8_t depth = 0;   // layers placed so far
    int8_t last = -1;   // LayerKind of last layer, -1 before the first
    int8_t kernel = 0;
    int16_t features = 0;  // conv/dense features; spp stores its scale count
    int8_t stride = 0;
    int8_t pad = 0;
    bool pending_skip = false;

    auto operator<=>(const SearchState&) const = default;
};

inline std::vector<int> legal_actions(const MetaQnnSpace& space,
                                      const std::vector<QnnAction>& actions,
                                      const SearchState& st) {
    std::vector<int> out;
    if (st.phase == 2) return out;
    for (int i = 0; i < static_cast<int>(actions.size()); ++i) {
        const QnnAction& a = actions[static_cast<size_t>(i)];
        bool ok = false;
        if (st.phase == 0) {
            if (st.pending_skip) {
                // The connection parallels two padded 3x3 convs; the second
                // one is forced so spatial sizes line up at the merge.
                ok = a.padded_3x3();
            } else {
                switch (a.kind) {
                    case QnnActionKind::conv:
                        ok = st.depth < space.max_convs;
                        break;
                    case QnnActionKind::skip:
                        ok = st.last == static_cast<int8_t>(LayerKind::conv) &&
                             st.kernel == 3 && st.pad == 1 && st.depth < space.max_convs;
                        break;
                    case QnnActionKind::spp:
                        ok = st.depth >= space.min_convs;
                        break;
                    default:
                        break;
                }
            }
        } else {  // head
            if (st.last == static_cast<int8_t>(LayerKind::spp))
                ok = a.kind == QnnActionKind::dense || a.kind == QnnActionKind::classifier;
            else
                ok = a.kind == QnnActionKind::classifier;
        }
        if (ok) out.push_back(i);
    }
    return out;
}

inline SearchState after_action(const SearchState& st, const QnnAction& a) {
    SearchState n = st;
    switch (a.kind) {
        case QnnActionKind::conv:
            n.depth = static_cast<int8_t>(st.depth + 1);
            n.last = static_cast<int8_t>(LayerKind::conv);
            n.kernel = static_cast<int8_t>(a.kernel);
            n.features = static_cast<int16_t>(a.features);
            n.stride = static_cast<int8_t>(a.stride);
            n.pad = static_cast<int8_t>(a.pad);
            n.pending_skip = false;
            break;
        case QnnActionKind::skip:
            n.pending_skip = true;  // layer list unchanged
            break;
        case QnnActionKind::spp:
            n.phase = 1;
            n.depth = static_cast<int8_t>(st.depth + 1);
            n.last = static_cast<int8_t>(LayerKind::spp);
            n.kernel = 0;
            n.features = static_cast<int16_t>(a.scales);
            n.stride = 0;
            n.pad = 0;
            break;
        case QnnActionKind::dense:
            n.depth = static_cast<int8_t>(st.depth + 1);
            n.last = static_cast<int8_t>(LayerKind::fc);
            n.features = static_cast<int16_t>(a.features);
            break;
        case QnnActionKind::classifier:
            n.phase = 2;
            n.depth = static_cast<int8_t>(st.depth + 1);
            n.last = static_cast<int8_t>(LayerKind::classifier);
            n.features = static_cast<int16_t>(a.features);
            break;
    }
    return n;
}

// ------------------------------------------------------------- Q-table

struct QnnTransition {
    SearchState state;
    int action = 0;
    SearchState next;
};

class QTable {
public:
    QTable(float alpha, float gamma, float q_init, size_t n_actions)
        : alpha_(alpha), gamma_(gamma), q_init_(q_init), n_actions_(n_actions) {}

    float get(const SearchState& s, int a) const {
        const auto it = rows_.find(s);
        return it == rows_.end() ? q_init_ : it->second[static_cast<size_t>(a)];
    }

    void set(const SearchState& s, int a, float v) { row(s)[static_cast<size_t>(a)] = v; }

    float max_over(const SearchState& s, const std::vector<int>& legal) const {
        require(!legal.empty(), "qtable: no legal actions to maximize over");
        float best = get(s, legal[0]);
        for (int a : legal) best = std::max(best, get(s, a));
        return best;
    }

    // Lowest index wins ties, for reproducibility.
    int argmax(const SearchState& s, const std::vector<int>& legal) const {
        require(!legal.empty(), "qtable: no legal actions to choose from");
        int best = legal[0];
        float bv = get(s, best);
        for (int a : legal)
            if (get(s, a) > bv) {
                bv = get(s, a);
                best = a;
            }
        return best;
    }

    float alpha() const { return alpha_; }
    float gamma() const { return gamma_; }
    float q_init() const { return q_init_; }
    size_t states_seen() const { return rows_.size(); }

private:
    std::vector<float>& row(const SearchState& s) {
        auto it = rows_.find(s);
        if (it == rows_.end())
            it = rows_.emplace(s, std::vector<float>(n_actions_, q_init_)).first;
        return it->second;
    }

    float alpha_, gamma_, q_init_;
    size_t n_actions_;
    std::map<SearchState, std::vector<float>> rows_;
};

// Terminal transition moves Q toward the reward; interior ones toward the
// discounted best next-state value. Applied as a backward sweep.
inline void q_update(QTable& q, const MetaQnnSpace& space,
                     const std::vector<QnnAction>& actions,
                     const std::vector<QnnTransition>& traj, float reward) {
    require(reward >= 0.0f && reward <= 1.0f, "q_update: reward outside [0,1]");
    for (int t = static_cast<int>(traj.size()) - 1; t >= 0; --t) {
        const QnnTransition& tr = traj[static_cast<size_t>(t)];
        float target;
        if (t + 1 == static_cast<int>(traj.size())) {
            target = reward;
        } else {
            const std::vector<int> nl = legal_actions(space, actions, tr.next);
            target = q.gamma() * q.max_over(tr.next, nl);
        }
        q.set(tr.state, tr.action,
              (1.0f - q.alpha()) * q.get(tr.state, tr.action) + q.alpha() * target);
    }
}

// ------------------------------------------------------------- ε schedule

struct EpsilonSchedule {
    std::vector<std::pair<float, int>> phases;  // (ε, architecture count)
};

// Full exploration for 100 architectures, ε = 0.9..0.3 for 10 each, then 15
// each at 0.2 and 0.1: 200 total.
inline EpsilonSchedule default_epsilon_schedule() {
    EpsilonSchedule s;
    s.phases = {{1.0f, 100}, {0.9f, 10}, {0.8f, 10}, {0.7f, 10}, {0.6f, 10},
                {0.5f, 10},  {0.4f, 10}, {0.3f, 10}, {0.2f, 15}, {0.1f, 15}};
    return s;
}

inline int schedule_total(const EpsilonSchedule& s) {
    int t = 0;
    for (const auto& [e, n] : s.phases) t += n;
    return t;
}

inline float epsilon_at(const EpsilonSchedule& s, int index) {
    require(index >= 0, "epsilon_at: negative index");
    int seen = 0;
    for (const auto& [e, n] : s.phases) {
        seen += n;
        if (index < seen) return e;
    }
    throw std::out_of_range("epsilon_at: index " + std::to_string(index) +
                            " beyond schedule of " + std::to_string(seen));
}

// ------------------------------------------------------------- sampling

struct SampledArch {
    ArchGraph graph;
    std::vector<QnnTransition> trajectory;
};

inline SampledArch sample_architecture(const QTable& q, const MetaQnnSpace& space,
                                       const std::vector<QnnAction>& actions, float eps,
                                       Rng& rng) {
    SampledArch out;
    out.graph.input_channels = space.input_channels;
    SearchState st;
    // (merge target layer id, carried producer id) for taken skip actions
    std::vector<std::pair<int, int>> pending;

    while (st.phase != 2) {
        const std::vector<int> legal = legal_actions(space, actions, st);
        require(!legal.empty(), "sample: empty legal action set");
        int pick;
        if (rng.uniform() < eps)
            pick = legal[static_cast<size_t>(rng.uniform_int(legal.size()))];
        else
            pick = q.argmax(st, legal);
        const QnnAction& a = actions[static_cast<size_t>(pick)];

        if (a.kind == QnnActionKind::skip) {
            const int flagged = static_cast<int>(out.graph.layers.size()) - 1;
            const int carried = flagged == 0 ? -1 : flagged - 1;
            pending.emplace_back(flagged + 2, carried);
        } else {
            LayerSpec l;
            switch (a.kind) {
                case QnnActionKind::conv:
                    l.kind = LayerKind::conv;
                    l.features = a.features;
                    l.kernel = a.kernel;
                    l.stride = a.stride;
                    l.pad = a.pad;
                    l.use_bn = true;
                    break;
                case QnnActionKind::spp:
                    l.kind = LayerKind::spp;
                    l.scales = a.scales;
                    break;
                case QnnActionKind::dense:
                    l.kind = LayerKind::fc;
                    l.features = a.features;
                    l.use_bn = true;
                    break;
                case QnnActionKind::classifier:
                    l.kind = LayerKind::classifier;
                    l.features = a.features;
                    l.use_relu = false;
                    break;
                default:
                    break;
            }
            const int id = static_cast<int>(out.graph.layers.size());
            for (const auto& [target, carried] : pending)
                if (target == id) {
                    if (l.inputs.empty()) l.inputs.push_back(id - 1);
                    l.inputs.push_back(carried);
                }
            out.graph.layers.push_back(l);
        }

        const SearchState next = after_action(st, a);
        out.trajectory.push_back({st, pick, next});
        st = next;
    }
    validate_graph(out.graph);
    return out;
}

// ------------------------------------------------------------- search driver

struct ReplayBuffer {
    std::vector<std::pair<std::vector<QnnTransition>, float>> entries;  // append-only
};

// One batch of replayed updates; indices are sorted so the application order
// is fixed regardless of how the samples were drawn.
inline void replay_update(QTable& q, const MetaQnnSpace& space,
                          const std::vector<QnnAction>& actions, const ReplayBuffer& buf,
                          int samples, Rng& rng) {
    if (buf.entries.empty()) return;
    std::vector<size_t> idx(static_cast<size_t>(samples));
    for (auto& i : idx) i = rng.uniform_int(buf.entries.size());
    std::sort(idx.begin(), idx.end());
    for (size_t i : idx)
        q_update(q, space, actions, buf.entries[i].first, buf.entries[i].second);
}

// Outcome of evaluating one candidate (training the child network).
struct CandidateOutcome {
    double reward = 0.0;
    bool early_stopped = false;
};

using CandidateEvaluator = std::function<CandidateOutcome(const ArchGraph&)>;

struct MetaQnnConfig {
    MetaQnnSpace space;
    EpsilonSchedule schedule = default_epsilon_schedule();
    float alpha = 0.1f;
    float gamma = 1.0f;
    float q_init = 0.15f;
    int replay_samples = 64;
    int max_attempts_per_slot = 200;
    uint64_t seed = 1;
    // Patch size used to report parameter counts in the log.
    int report_h = 224;
    int report_w = 224;
};

struct SearchRecord {
    int slot = 0;
    int attempt = 0;
    float epsilon = 0.0f;
    std::string status;  // ok | early-stop | error
    double reward = 0.0;
    int64_t params = -1;
    int layers = 0;
    std::string dsl;
    std::string error;
};

struct MetaQnnResult {
    std::vector<SearchRecord> log;  // every attempt, including discarded ones
    ArchGraph best;                 // highest reward among completed slots
    double best_reward = -1.0;
    ArchGraph greedy;  // ε=0 rollout under the final Q-table
};

inline MetaQnnResult run_metaqnn_search(const MetaQnnConfig& cfg,
                                        const CandidateEvaluator& evaluate) {
    const std::vector<QnnAction> actions = cfg.space.actions();
    QTable q(cfg.alpha, cfg.gamma, cfg.q_init, actions.size());
    ReplayBuffer buffer;
    Rng sample_rng(derive_seed(cfg.seed, "metaqnn/sample"));
    Rng replay_rng(derive_seed(cfg.seed, "metaqnn/replay"));
    MetaQnnResult res;

    const int slots = schedule_total(cfg.schedule);
    for (int slot = 0; slot < slots; ++slot) {
        const float eps = epsilon_at(cfg.schedule, slot);
        for (int attempt = 0;; ++attempt) {
            require(attempt < cfg.max_attempts_per_slot,
                    "search: slot " + std::to_string(slot) + " exhausted " +
                        std::to_string(cfg.max_attempts_per_slot) + " attempts");
            const SampledArch cand = sample_architecture(q, cfg.space, actions, eps, sample_rng);

            SearchRecord rec;
            rec.slot = slot;
            rec.attempt = attempt;
            rec.epsilon = eps;
            rec.dsl = encode_arch(cand.graph);
            try {
                const ShapeReport sr = infer_shapes(cand.graph, cfg.report_h, cfg.report_w);
                rec.params = sr.total_params;
                rec.layers = sr.trainable_layers;
            } catch (const std::exception&) {
                rec.params = -1;  // not realizable at the report patch size
            }

            CandidateOutcome outcome;
            try {
                outcome = evaluate(cand.graph);
            } catch (const std::exception& e) {
                rec.status = "error";
                rec.error = e.what();
                res.log.push_back(std::move(rec));
                continue;  // retry the slot
            }

            if (outcome.early_stopped) {
                // Discarded: no Q-update, no replay entry, slot not consumed.
                rec.status = "early-stop";
                rec.reward = outcome.reward;
                res.log.push_back(std::move(rec));
                continue;
            }

            require(outcome.reward >= 0.0 && outcome.reward <= 1.0,
                    "search: evaluator reward outside [0,1]");
            rec.status = "ok";
            rec.reward = outcome.reward;
            res.log.push_back(rec);

            q_update(q, cfg.space, actions, cand.trajectory,
                     static_cast<float>(outcome.reward));
            buffer.entries.emplace_back(cand.trajectory, static_cast<float>(outcome.reward));
            replay_update(q, cfg.space, actions, buffer, cfg.replay_samples, replay_rng);

            if (outcome.reward > res.best_reward) {
                res.best_reward = outcome.reward;
                res.best = cand.graph;
            }
            break;  // slot consumed
        }
    }

    Rng greedy_rng(derive_seed(cfg.seed, "metaqnn/greedy"));
    res.greedy = sample_architecture(q, cfg.space, actions, 0.0f, greedy_rng).graph;
    return res;
}

}  // namespace cdnas

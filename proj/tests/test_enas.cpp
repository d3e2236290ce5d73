#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "cdnas/enas.hpp"

using namespace cdnas;

namespace {

void zero_param(Param& p) {
    for (auto& v : p.value.data) v = 0.0f;
}

// Small labeled image set; labels are arbitrary but fixed bits.
DataView make_data(int n, int channels, int hw, int classes, uint64_t seed) {
    DataView d;
    d.x = Tensor({n, channels, hw, hw});
    d.y = Tensor({n, classes});
    Rng rng(seed);
    for (auto& v : d.x.data) v = static_cast<float>(rng.normal());
    for (auto& v : d.y.data) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    return d;
}

// Noise images whose per-channel mean sign carries the labels, so a tiny
// network can actually learn them.
DataView make_learnable_data(int n, uint64_t seed) {
    DataView d;
    d.x = Tensor({n, 3, 8, 8});
    d.y = Tensor({n, 6});
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        float mean[3] = {};
        for (int c = 0; c < 3; ++c) {
            const float off = rng.uniform() < 0.5 ? 0.8f : -0.8f;
            for (int p = 0; p < 64; ++p) {
                const float v = static_cast<float>(rng.normal()) + off;
                d.x.data[static_cast<size_t>((i * 3 + c) * 64 + p)] = v;
                mean[c] += v;
            }
            mean[c] /= 64.0f;
        }
        for (int k = 0; k < 6; ++k)
            d.y.data[static_cast<size_t>(i * 6 + k)] = mean[k % 3] > 0.0f ? 1.0f : 0.0f;
    }
    return d;
}

DecisionSequence fixed_sequence(std::vector<int> ops, std::vector<std::vector<uint8_t>> skips) {
    DecisionSequence d;
    d.ops = std::move(ops);
    d.skips = std::move(skips);
    return d;
}

bool params_equal(const LayerParams& a, const LayerParams& b) {
    auto eq = [](const Tensor& x, const Tensor& y) {
        return x.shape == y.shape && x.data == y.data;
    };
    return eq(a.weights.value, b.weights.value) && eq(a.pointwise.value, b.pointwise.value) &&
           eq(a.bias.value, b.bias.value) && eq(a.bn_gamma.value, b.bn_gamma.value) &&
           eq(a.bn_beta.value, b.bn_beta.value) && eq(a.bn_running_mean, b.bn_running_mean) &&
           eq(a.bn_running_var, b.bn_running_var);
}

}  // namespace

TEST_CASE("sampled decision sequences have the layered-DAG shape") {
    Rng ir(11);
    Controller ctrl(7, 16, 8, ir);
    Rng sr(12);
    for (int i = 0; i < 200; ++i) {
        double lp = 0.0, ent = 0.0;
        const DecisionSequence d = ctrl.sample(sr, &lp, &ent);
        REQUIRE(d.ops.size() == 7);
        REQUIRE(d.skips.size() == 7);
        for (int node = 0; node < 7; ++node) {
            REQUIRE(d.ops[static_cast<size_t>(node)] >= 0);
            REQUIRE(d.ops[static_cast<size_t>(node)] < kEnasNumOps);
            REQUIRE(static_cast<int>(d.skips[static_cast<size_t>(node)].size()) == node);
        }
        REQUIRE(lp <= 0.0);
        REQUIRE(ent >= 0.0);
        // Teacher-forced scoring of the same sequence reproduces the numbers.
        const auto [lp2, ent2] = ctrl.logprob_entropy(d);
        REQUIRE(lp2 == Catch::Approx(lp).margin(1e-12));
        REQUIRE(ent2 == Catch::Approx(ent).margin(1e-12));
    }
}

TEST_CASE("zeroed op head samples operations uniformly") {
    Rng ir(21);
    Controller ctrl(7, 16, 8, ir);
    zero_param(ctrl.op_head_weights());
    zero_param(ctrl.op_head_bias());
    Rng sr(22);
    const int n = 10000;
    int count[7][kEnasNumOps] = {};
    for (int i = 0; i < n; ++i) {
        const DecisionSequence d = ctrl.sample(sr);
        for (int node = 0; node < 7; ++node) ++count[node][d.ops[static_cast<size_t>(node)]];
    }
    const double mean = n / 6.0;
    const double sigma = std::sqrt(n * (1.0 / 6.0) * (5.0 / 6.0));
    for (int node = 0; node < 7; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) {
            INFO("node " << node << " op " << op << " count " << count[node][op]);
            REQUIRE(std::abs(count[node][op] - mean) <= 3.0 * sigma);
        }
}

TEST_CASE("one-hot op head forces its operation with probability one") {
    Rng ir(31);
    Controller ctrl(7, 16, 8, ir);
    zero_param(ctrl.op_head_weights());
    zero_param(ctrl.op_head_bias());
    ctrl.op_head_bias().value.data[4] = 25.0f;
    Rng sr(32);
    for (int i = 0; i < 500; ++i) {
        const DecisionSequence d = ctrl.sample(sr);
        for (int op : d.ops) REQUIRE(op == 4);
    }
}

TEST_CASE("log-prob and entropy of a fully flat policy match hand arithmetic") {
    Rng ir(41);
    Controller ctrl(7, 16, 8, ir);
    zero_param(ctrl.op_head_weights());
    zero_param(ctrl.op_head_bias());
    zero_param(ctrl.skip_head_weights());
    zero_param(ctrl.skip_head_bias());
    // 7 op picks at 1/6 each and 21 bits at 1/2 each, whatever was sampled.
    const double want_lp = 7.0 * std::log(1.0 / 6.0) + 21.0 * std::log(0.5);
    const double want_ent = 7.0 * std::log(6.0) + 21.0 * std::log(2.0);
    Rng sr(42);
    for (int i = 0; i < 20; ++i) {
        const auto [lp, ent] = ctrl.logprob_entropy(ctrl.sample(sr));
        REQUIRE(lp == Catch::Approx(want_lp).margin(1e-4));
        REQUIRE(ent == Catch::Approx(want_ent).margin(1e-4));
    }
}

TEST_CASE("controller gradients match finite differences") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng ir(seed);
        Controller ctrl(4, 6, 5, ir);
        // Push the policy off the uniform point so the entropy gradient is
        // nonzero (uniform is its stationary maximum).
        Rng big(seed + 77);
        for (auto& [p, g] : ctrl.param_grad_pairs())
            for (auto& v : p->value.data) v += 0.6f * static_cast<float>(big.normal());
        Rng sr(seed * 100 + 7);
        const DecisionSequence d = ctrl.sample(sr);

        for (int which = 0; which < 2; ++which) {
            ctrl.zero_grads();
            ctrl.accumulate_gradient(d, which == 0 ? 1.0 : 0.0, which == 0 ? 0.0 : 1.0);
            auto pairs = ctrl.param_grad_pairs();
            Rng dir_rng(seed * 31 + static_cast<uint64_t>(which));
            std::vector<std::vector<float>> dirs;
            double analytic = 0.0;
            for (auto& [p, g] : pairs) {
                std::vector<float> v(static_cast<size_t>(p->numel()));
                for (size_t i = 0; i < v.size(); ++i) {
                    v[i] = static_cast<float>(dir_rng.normal());
                    analytic += static_cast<double>(v[i]) * g->data[i];
                }
                dirs.push_back(std::move(v));
            }
            auto shift = [&](float s) {
                for (size_t t = 0; t < pairs.size(); ++t)
                    for (size_t i = 0; i < dirs[t].size(); ++i)
                        pairs[t].first->value.data[i] += s * dirs[t][i];
            };
            auto value = [&] {
                const auto r = ctrl.logprob_entropy(d);
                return which == 0 ? r.first : r.second;
            };
            const float h = 2e-3f;
            shift(h);
            const double up = value();
            shift(-2.0f * h);
            const double dn = value();
            shift(h);
            const double numeric = (up - dn) / (2.0 * h);
            const double rel = std::abs(numeric - analytic) /
                               std::max(1e-8, std::max(std::abs(numeric), std::abs(analytic)));
            INFO("seed " << seed << (which == 0 ? " logprob" : " entropy") << " analytic "
                         << analytic << " numeric " << numeric);
            REQUIRE(rel < 1e-3);
        }
    }
}

TEST_CASE("policy concentrates on the rewarded operation") {
    const int target = 3;
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng ir(derive_seed(seed, "bandit/init"));
        Controller ctrl(7, 64, 32, ir);
        RewardBaseline base{0.0, 0.95};
        Rng sr(derive_seed(seed, "bandit/sample"));
        for (int s = 0; s < 500; ++s) {
            const DecisionSequence d = ctrl.sample(sr);
            int hit = 0;
            for (int op : d.ops) hit += op == target;
            reinforce_step(ctrl, {d}, {static_cast<double>(hit) / 7.0}, base, 1e-3f, 1e-4);
        }
        int count[7] = {};
        Rng er(derive_seed(seed, "bandit/eval"));
        const int m = 200;
        for (int i = 0; i < m; ++i) {
            const DecisionSequence d = ctrl.sample(er);
            for (int node = 0; node < 7; ++node) count[node] += d.ops[static_cast<size_t>(node)] == target;
        }
        for (int node = 0; node < 7; ++node) {
            INFO("seed " << seed << " node " << node);
            REQUIRE(count[node] > static_cast<int>(0.9 * m));
        }
    }
}

TEST_CASE("search-mode materialization keeps the grid and width fixed") {
    EnasSpace sp;
    sp.search_features = 8;
    Rng ir(51);
    Controller ctrl(sp.nodes, 8, 4, ir);
    Rng sr(52);
    for (int i = 0; i < 100; ++i) {
        const DecisionSequence d = ctrl.sample(sr);
        const MaterializedArch m = materialize_arch(d, sp, EnasMode::search);
        const ShapeReport rep = infer_shapes(m.graph, 16, 16);
        for (int node = 0; node < sp.nodes; ++node) {
            const LayerShape& out = rep.out[static_cast<size_t>(m.node_out[static_cast<size_t>(node)])];
            REQUIRE(out.h == 16);
            REQUIRE(out.w == 16);
            REQUIRE(out.c == sp.search_features);
            const int pl = m.param_layer[static_cast<size_t>(node)];
            if (pl >= 0) REQUIRE(rep.params[static_cast<size_t>(pl)] > 0);
        }
        // Uniform width means no automatic projections anywhere.
        for (const auto& pr : rep.proj) REQUIRE(pr.empty());
        // The only parameter-free nodes are pools fed at full width.
        for (int node = 1; node < sp.nodes; ++node) {
            const int op = d.ops[static_cast<size_t>(node)];
            const bool pool = op == static_cast<int>(EnasOp::maxpool3) ||
                              op == static_cast<int>(EnasOp::avgpool3);
            REQUIRE((m.param_layer[static_cast<size_t>(node)] < 0) == pool);
        }
        REQUIRE(m.graph.layers.back().kind == LayerKind::classifier);
        REQUIRE(m.graph.layers[static_cast<size_t>(m.classifier_layer) - 1].kind == LayerKind::gap);
    }
}

TEST_CASE("final-mode materialization widens along the feature ladder") {
    EnasSpace sp;  // published ladder 64,64,128,128,256,256,256
    const DecisionSequence d = fixed_sequence(
        {static_cast<int>(EnasOp::maxpool3), static_cast<int>(EnasOp::conv3),
         static_cast<int>(EnasOp::avgpool3), static_cast<int>(EnasOp::sepconv5),
         static_cast<int>(EnasOp::maxpool3), static_cast<int>(EnasOp::conv5),
         static_cast<int>(EnasOp::sepconv3)},
        {{}, {0}, {0, 0}, {1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 0, 0}, {1, 0, 1, 0, 0, 0}});
    const MaterializedArch m = materialize_arch(d, sp, EnasMode::final);
    const ShapeReport rep = infer_shapes(m.graph, 32, 32);
    for (int node = 0; node < sp.nodes; ++node) {
        const LayerShape& out = rep.out[static_cast<size_t>(m.node_out[static_cast<size_t>(node)])];
        REQUIRE(out.c == sp.final_features[static_cast<size_t>(node)]);
        REQUIRE(out.h == 32);
    }
    // Pools at width changes get a 1x1 channel fix: 3->64, 64->128, 128->256.
    for (int node : {0, 2, 4}) {
        const int pl = m.param_layer[static_cast<size_t>(node)];
        REQUIRE(pl >= 0);
        REQUIRE(m.graph.layers[static_cast<size_t>(pl)].kernel == 1);
    }
    // Node 4 sums the 128-wide trunk with node 1's 64-wide output, so an
    // automatic projection must appear there.
    const int l4 = static_cast<int>(m.graph.layers[static_cast<size_t>(m.param_layer[4]) - 1].inputs.size());
    REQUIRE(l4 == 2);
    bool any_proj = false;
    for (const auto& pr : rep.proj) any_proj = any_proj || !pr.empty();
    REQUIRE(any_proj);
    REQUIRE(total_epochs(SgdwrSchedule{0.05f, 1e-4f, 10, 5}) == 310);
    REQUIRE(total_epochs(SgdwrSchedule{0.05f, 1e-4f, 10, 4}) == 150);
}

TEST_CASE("weight bank creates one deterministic entry per (node, op)") {
    EnasSpace sp;
    sp.search_features = 8;
    EnasBank bank(sp, 99);
    REQUIRE(bank.entry_count() == 0);
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) bank.node_entry(node, op);
    bank.classifier_entry();
    REQUIRE(bank.entry_count() == 7 * 6 + 1);
    // Repeat touches do not create more.
    bank.node_entry(3, 2);
    REQUIRE(bank.entry_count() == 43);

    // Shapes follow the node's place in the DAG.
    REQUIRE(bank.node_entry(0, static_cast<int>(EnasOp::conv3)).weights.value.shape ==
            std::vector<int>{8, 3, 3, 3});
    REQUIRE(bank.node_entry(2, static_cast<int>(EnasOp::conv5)).weights.value.shape ==
            std::vector<int>{8, 8, 5, 5});
    REQUIRE(bank.node_entry(1, static_cast<int>(EnasOp::sepconv3)).pointwise.value.shape ==
            std::vector<int>{8, 8});
    // Pools only own a channel fix when fed by the 3-channel image.
    REQUIRE(bank.node_entry(0, static_cast<int>(EnasOp::maxpool3)).weights.value.shape ==
            std::vector<int>{8, 3, 1, 1});
    REQUIRE(bank.node_entry(4, static_cast<int>(EnasOp::maxpool3)).weights.value.empty());
    REQUIRE(bank.classifier_entry().weights.value.shape == std::vector<int>{6, 8});

    // Entry contents depend only on the seed and key, not creation order.
    EnasBank fwd(sp, 1234), rev(sp, 1234);
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) fwd.node_entry(node, op);
    for (int node = sp.nodes - 1; node >= 0; --node)
        for (int op = kEnasNumOps - 1; op >= 0; --op) rev.node_entry(node, op);
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op)
            REQUIRE(params_equal(fwd.node_entry(node, op), rev.node_entry(node, op)));
    EnasBank other(sp, 1235);
    REQUIRE_FALSE(params_equal(other.node_entry(1, 0), fwd.node_entry(1, 0)));
}

TEST_CASE("a shared step touches exactly the sampled path") {
    EnasSpace sp;
    sp.nodes = 4;
    sp.search_features = 8;
    EnasBank bank(sp, 7);
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) bank.node_entry(node, op);
    bank.classifier_entry();

    std::map<std::pair<int, int>, LayerParams> before;
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) before[{node, op}] = bank.node_entry(node, op);
    const LayerParams cls_before = bank.classifier_entry();

    const DecisionSequence d = fixed_sequence(
        {static_cast<int>(EnasOp::conv3), static_cast<int>(EnasOp::sepconv5),
         static_cast<int>(EnasOp::maxpool3), static_cast<int>(EnasOp::conv5)},
        {{}, {0}, {0, 0}, {1, 0, 0}});
    const DataView data = make_data(8, 3, 8, 6, 100);
    shared_train_step(bank, d, data.x, data.y, 0.05f, 0.9f);

    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) {
            const bool on_path = d.ops[static_cast<size_t>(node)] == op &&
                                 op != static_cast<int>(EnasOp::maxpool3);
            INFO("node " << node << " op " << op);
            REQUIRE(params_equal(before[{node, op}], bank.node_entry(node, op)) == !on_path);
        }
    REQUIRE_FALSE(params_equal(cls_before, bank.classifier_entry()));

    // Policy updates live entirely outside the bank.
    Rng ir(1);
    Controller ctrl(sp.nodes, 8, 4, ir);
    RewardBaseline base;
    Rng sr(2);
    const LayerParams snap = bank.node_entry(0, 0);
    reinforce_step(ctrl, {ctrl.sample(sr)}, {0.7}, base, 1e-3f, 1e-4);
    REQUIRE(bank.entry_count() == 25);
    REQUIRE(params_equal(snap, bank.node_entry(0, 0)));
}

TEST_CASE("repeated shared steps on one path reduce its loss") {
    EnasSpace sp;
    sp.nodes = 4;
    sp.search_features = 8;
    EnasBank bank(sp, 13);
    const DecisionSequence d = fixed_sequence(
        {static_cast<int>(EnasOp::conv3), static_cast<int>(EnasOp::conv5),
         static_cast<int>(EnasOp::sepconv3), static_cast<int>(EnasOp::avgpool3)},
        {{}, {0}, {0, 0}, {0, 1, 0}});
    const DataView data = make_learnable_data(16, 200);
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 60; ++s) {
        const double loss = shared_train_step(bank, d, data.x, data.y, 0.05f, 0.9f);
        if (s == 0) first = loss;
        last = loss;
        REQUIRE(std::isfinite(loss));
    }
    REQUIRE(last < 0.5 * first);
    // The trained path now gets most of the batch exactly right.
    REQUIRE(shared_reward(bank, d, data.x, data.y) >= 0.5);
}

TEST_CASE("full-set shared evaluation equals the single-batch reward") {
    EnasSpace sp;
    sp.nodes = 3;
    sp.search_features = 4;
    EnasBank bank(sp, 21);
    const DecisionSequence d = fixed_sequence(
        {static_cast<int>(EnasOp::conv3), static_cast<int>(EnasOp::maxpool3),
         static_cast<int>(EnasOp::conv5)},
        {{}, {0}, {1, 0}});
    const DataView data = make_data(6, 3, 8, 6, 300);
    const double whole = shared_eval(bank, d, data, 64);
    const double one = shared_reward(bank, d, data.x, data.y);
    REQUIRE(whole == Catch::Approx(one).margin(1e-12));
}

TEST_CASE("search runs are reproducible per seed") {
    EnasConfig cfg;
    cfg.space.nodes = 3;
    cfg.space.search_features = 4;
    cfg.schedule = {0.02f, 1e-4f, 1, 2};  // 3 epochs
    cfg.batch = 8;
    cfg.controller_steps = 3;
    cfg.controller_hidden = 8;
    cfg.controller_embed = 4;
    cfg.reward_batch = 8;
    cfg.seed = 5;
    const DataView train = make_data(32, 3, 8, 6, 400);
    const DataView val = make_data(16, 3, 8, 6, 401);

    const EnasSearchResult a = run_enas_search(cfg, train, val);
    const EnasSearchResult b = run_enas_search(cfg, train, val);
    REQUIRE(a.epochs.size() == 3);
    REQUIRE(a.epochs.size() == b.epochs.size());
    for (size_t e = 0; e < a.epochs.size(); ++e) {
        REQUIRE(a.epochs[e].shared_loss == b.epochs[e].shared_loss);
        REQUIRE(a.epochs[e].mean_reward == b.epochs[e].mean_reward);
        REQUIRE(a.epochs[e].baseline == b.epochs[e].baseline);
    }

    EnasConfig cfg2 = cfg;
    cfg2.seed = 6;
    const EnasSearchResult c = run_enas_search(cfg2, train, val);
    bool same = true;
    for (size_t e = 0; e < a.epochs.size(); ++e)
        same = same && a.epochs[e].shared_loss == c.epochs[e].shared_loss &&
               a.epochs[e].mean_reward == c.epochs[e].mean_reward;
    REQUIRE_FALSE(same);
}

TEST_CASE("derivation samples, de-duplicates and ranks candidates") {
    EnasConfig cfg;
    cfg.space.nodes = 3;
    cfg.space.search_features = 4;
    cfg.space.final_features = {4, 8, 8};
    cfg.schedule = {0.02f, 1e-4f, 1, 1};  // 1 epoch
    cfg.batch = 8;
    cfg.controller_steps = 2;
    cfg.controller_hidden = 8;
    cfg.controller_embed = 4;
    cfg.reward_batch = 8;
    const DataView train = make_data(16, 3, 8, 6, 500);
    const DataView val = make_data(12, 3, 8, 6, 501);
    EnasSearchResult res = run_enas_search(cfg, train, val);

    const auto derived = derive_final(res.controller, res.bank, val, 3, 40, 77);
    REQUIRE(!derived.empty());
    REQUIRE(derived.size() <= 3);
    std::set<DecisionSequence> seen;
    for (size_t i = 0; i < derived.size(); ++i) {
        REQUIRE(seen.insert(derived[i].decisions).second);
        if (i) REQUIRE(derived[i].reward <= derived[i - 1].reward);
        const ShapeReport rep = infer_shapes(derived[i].final_graph, 16, 16);
        REQUIRE(rep.out.back().features == 6);
    }

    // A policy pinned to one sequence collapses the pool to a single entry.
    Rng ir(61);
    Controller pinned(3, 8, 4, ir);
    zero_param(pinned.op_head_weights());
    zero_param(pinned.op_head_bias());
    zero_param(pinned.skip_head_weights());
    zero_param(pinned.skip_head_bias());
    pinned.op_head_bias().value.data[2] = 25.0f;
    for (auto& v : pinned.skip_head_bias().value.data) v = -25.0f;
    const auto single = derive_final(pinned, res.bank, val, 3, 20, 78);
    REQUIRE(single.size() == 1);
    REQUIRE(single[0].decisions.ops == std::vector<int>{2, 2, 2});
}

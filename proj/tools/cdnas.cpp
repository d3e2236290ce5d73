// Command-line front end: data ingest and statistics, dataset synthesis,
// split assignment, child training, the hyper-parameter grid, both
// architecture searches, derivation from shared weights, evaluation, and
// parameter-count reporting.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdnas/arch_dsl.hpp"
#include "cdnas/arch_zoo.hpp"
#include "cdnas/config.hpp"
#include "cdnas/datapipe.hpp"
#include "cdnas/enas.hpp"
#include "cdnas/enas_io.hpp"
#include "cdnas/manifest_io.hpp"
#include "cdnas/metaqnn.hpp"
#include "cdnas/runlog.hpp"
#include "cdnas/serialize.hpp"
#include "cdnas/synth.hpp"
#include "cdnas/trainer.hpp"

using namespace cdnas;

namespace {

// ------------------------------------------------------------- configuration

ConfigSchema make_schema() {
    ConfigSchema s;
    s.add("data.patch", ConfigType::integer, "224", "square patch edge length");
    s.add("data.grouped", ConfigType::boolean, "false", "assign whole groups to one split");
    s.add("data.split_target", ConfigType::integer, "150", "per-class boxes in val and test");
    s.add("data.balance", ConfigType::boolean, "true", "replicate rare training records");

    s.add("train.batch", ConfigType::integer, "16", "minibatch size");
    s.add("train.lr_max", ConfigType::real, "1e-2", "warm-restart peak learning rate");
    s.add("train.lr_min", ConfigType::real, "1e-5", "warm-restart floor learning rate");
    s.add("train.t0", ConfigType::integer, "10", "epochs in the first restart cycle");
    s.add("train.cycles", ConfigType::integer, "2", "restart cycles (each doubles)");
    s.add("train.momentum", ConfigType::real, "0.9", "SGD momentum");
    s.add("train.dropout", ConfigType::real, "0.5", "dropout rate on fc layers");
    s.add("train.early_stop", ConfigType::real, "0",
          "abandon if val accuracy is below this after the first cycle (0 = off)");

    s.add("search.archs", ConfigType::integer, "0",
          "architectures to sample (0 = published 200-arch epsilon schedule)");
    s.add("search.alpha", ConfigType::real, "0.1", "Q-learning rate");
    s.add("search.gamma", ConfigType::real, "1.0", "Q discount");
    s.add("search.q_init", ConfigType::real, "0.15", "optimistic initial Q value");
    s.add("search.replay", ConfigType::integer, "64", "replay samples per architecture");
    s.add("search.early_stop", ConfigType::real, "0.15",
          "candidate abandon threshold after the first cycle");
    s.add("search.batch", ConfigType::integer, "16", "candidate minibatch size");
    s.add("search.lr_max", ConfigType::real, "1e-2", "candidate peak learning rate");
    s.add("search.lr_min", ConfigType::real, "1e-5", "candidate floor learning rate");
    s.add("search.t0", ConfigType::integer, "10", "candidate first-cycle epochs");
    s.add("search.cycles", ConfigType::integer, "1", "candidate restart cycles");
    s.add("search.dropout", ConfigType::real, "0.5", "candidate dropout");
    s.add("search.kernels", ConfigType::text, "3,5,7,9,11", "conv kernel choices");
    s.add("search.features", ConfigType::text, "32,64,128,256", "conv feature choices");
    s.add("search.spp", ConfigType::text, "3,4,5", "pyramid pooling scale choices");
    s.add("search.dense", ConfigType::text, "32,64,128", "dense layer width choices");
    s.add("search.min_convs", ConfigType::integer, "3", "minimum conv layers");
    s.add("search.max_convs", ConfigType::integer, "10", "maximum conv layers");

    s.add("enas.nodes", ConfigType::integer, "7", "nodes in the shared DAG");
    s.add("enas.features", ConfigType::integer, "64", "uniform width during search");
    s.add("enas.final_features", ConfigType::text, "64,64,128,128,256,256,256",
          "per-node widths of derived architectures");
    s.add("enas.hidden", ConfigType::integer, "64", "controller LSTM width");
    s.add("enas.embed", ConfigType::integer, "32", "controller embedding width");
    s.add("enas.batch", ConfigType::integer, "64", "shared-weight minibatch size");
    s.add("enas.lr_max", ConfigType::real, "0.05", "shared-weight peak learning rate");
    s.add("enas.lr_min", ConfigType::real, "1e-4", "shared-weight floor learning rate");
    s.add("enas.t0", ConfigType::integer, "10", "shared-weight first-cycle epochs");
    s.add("enas.cycles", ConfigType::integer, "2", "shared-weight restart cycles");
    s.add("enas.momentum", ConfigType::real, "0.9", "shared-weight SGD momentum");
    s.add("enas.controller_steps", ConfigType::integer, "30",
          "policy updates per alternation phase");
    s.add("enas.controller_lr", ConfigType::real, "1e-3", "controller Adam learning rate");
    s.add("enas.entropy_beta", ConfigType::real, "1e-4", "entropy bonus weight");
    s.add("enas.baseline_decay", ConfigType::real, "0.95", "reward baseline decay");
    s.add("enas.reward_batch", ConfigType::integer, "32", "validation minibatch per reward");

    s.add("run.seed", ConfigType::integer, "1", "global seed");
    return s;
}

Config load_cli_config(const std::string& path, const std::vector<std::string>& overrides) {
    const ConfigSchema schema = make_schema();
    if (path.empty()) return parse_config(schema, "", overrides);
    return load_config(schema, path, overrides);
}

// Relative output paths resolve under $CDNAS_OUT when it is set; inputs are
// always taken as given.
std::string out_path(const std::string& p) {
    if (p.empty()) return p;
    const char* base = std::getenv("CDNAS_OUT");
    if (!base || !*base || std::filesystem::path(p).is_absolute()) return p;
    std::filesystem::create_directories(base);
    return (std::filesystem::path(base) / p).string();
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
    std::vector<int> out;
    std::string tok;
    std::istringstream in(csv);
    while (std::getline(in, tok, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stoi(tok, &used));
            require(used == tok.size(), "");
        } catch (const std::exception&) {
            throw std::invalid_argument("config: bad integer \"" + tok + "\" in " + what);
        }
    }
    require(!out.empty(), "config: empty list for " + what);
    return out;
}

// ------------------------------------------------------------- data assembly

struct SplitViews {
    DataView train, val, test;
};

DataView to_view(std::pair<Tensor, Tensor> xy) {
    return DataView{std::move(xy.first), std::move(xy.second)};
}

SplitViews build_views(const Manifest& m, const SplitResult& sp, const Config& cfg) {
    const int patch = static_cast<int>(cfg.get_int("data.patch"));
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    std::vector<BoxRecord> tr, va, te;
    for (const BoxRecord& b : m.boxes) {
        switch (sp.of(b.image_id)) {
            case Split::train: tr.push_back(b); break;
            case Split::val: va.push_back(b); break;
            case Split::test: te.push_back(b); break;
        }
    }
    require(!tr.empty(), "data: training split is empty");
    require(!va.empty(), "data: validation split is empty");

    std::vector<const BoxRecord*> trp;
    if (cfg.get_bool("data.balance"))
        for (int idx : balance_by_replication(tr)) trp.push_back(&tr[static_cast<size_t>(idx)]);
    else
        for (const BoxRecord& b : tr) trp.push_back(&b);
    std::vector<const BoxRecord*> vap, tep;
    for (const BoxRecord& b : va) vap.push_back(&b);
    for (const BoxRecord& b : te) tep.push_back(&b);

    std::map<std::string, Image> cache;
    Rng rng(derive_seed(seed, "cli/patches"));
    SplitViews v;
    v.train = to_view(assemble_patches(m, trp, patch, true, rng, &cache));
    v.val = to_view(assemble_patches(m, vap, patch, false, rng, &cache));
    if (!tep.empty()) v.test = to_view(assemble_patches(m, tep, patch, false, rng, &cache));
    std::printf("data: train %d (from %zu records), val %d, test %d, patch %d\n",
                v.train.size(), tr.size(), v.val.size(), v.test.size(), patch);
    return v;
}

TrainConfig train_config_from(const Config& cfg, const std::string& section) {
    TrainConfig tc;
    tc.batch = static_cast<int>(cfg.get_int(section + ".batch"));
    tc.schedule.lr_max = static_cast<float>(cfg.get_real(section + ".lr_max"));
    tc.schedule.lr_min = static_cast<float>(cfg.get_real(section + ".lr_min"));
    tc.schedule.t0 = static_cast<int>(cfg.get_int(section + ".t0"));
    tc.schedule.cycles = static_cast<int>(cfg.get_int(section + ".cycles"));
    tc.momentum = static_cast<float>(cfg.get_real(section + ".momentum"));
    tc.dropout = static_cast<float>(cfg.get_real(section + ".dropout"));
    tc.early_stop_acc = cfg.get_real(section + ".early_stop");
    tc.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    return tc;
}

ArchGraph arch_from_flags(const std::string& name, const std::string& file) {
    require(name.empty() != file.empty(), "usage: give exactly one of --arch / --arch-file");
    if (!name.empty()) return zoo::make_model(name);
    std::ifstream in(file);
    require(in.good(), "arch: cannot open " + file);
    std::stringstream buf;
    buf << in.rdbuf();
    return decode_arch(buf.str());
}

void write_arch(const std::string& path, const ArchGraph& g) {
    std::ofstream out(path);
    require(out.good(), "arch: cannot write " + path);
    out << encode_arch(g);
    require(out.good(), "arch: write failed for " + path);
}

void log_run(const std::string& path, const Config& cfg, const std::string& command,
             const std::map<std::string, double>& metrics, const std::string& note = "") {
    if (path.empty()) return;
    append_run_record(path, {utc_timestamp_now(), cfg.hash(), command, metrics, note});
}

// ------------------------------------------------------------- subcommands

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string manifest_path;
    std::string splits_path;
    std::string runlog_path;
};

void add_common(CLI::App* sub, CommonOpts* o, bool with_data) {
    sub->add_option("--config", o->config_file, "configuration file (key=value sections)");
    sub->add_option("--set", o->overrides, "override one key, e.g. --set train.batch=32");
    if (with_data) {
        sub->add_option("--manifest", o->manifest_path, "manifest file")->required();
        sub->add_option("--splits", o->splits_path, "split assignment file")->required();
    }
    sub->add_option("--log", o->runlog_path, "append a run record to this JSONL file");
}

int cmd_synth(const std::string& dir, int per_class, int size, uint64_t seed, double co_occ,
              double noise, const std::string& manifest_out) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.per_class = per_class;
    spec.image_size = size;
    spec.co_occurrence = co_occ;
    spec.noise = noise;
    const Manifest m = write_synthetic_dataset(spec, dir);
    if (!manifest_out.empty()) save_manifest(manifest_out, m);
    std::printf("synth: wrote %zu images (%d per class, %dx%d) to %s\n", m.images.size(),
                per_class, size, size, dir.c_str());
    return 0;
}

int cmd_ingest(const std::string& dir, const std::string& out, bool background, uint64_t seed,
               int target) {
    std::vector<std::string> log;
    Manifest m = parse_annotations(dir, &log);
    for (const std::string& l : log) std::fprintf(stderr, "warning: %s\n", l.c_str());
    if (background && !m.boxes.empty()) {
        Rng rng(derive_seed(seed, "cli/background"));
        std::vector<std::string> bg_log;
        const int added = sample_background_boxes(m, rng, target, 100, &bg_log);
        for (const std::string& l : bg_log) std::fprintf(stderr, "warning: %s\n", l.c_str());
        std::printf("ingest: sampled %d background boxes\n", added);
    }
    save_manifest(out, m);
    const auto counts = class_counts_of(m.boxes);
    std::printf("ingest: %zu images, %zu boxes ->", m.images.size(), m.boxes.size());
    for (int c = 0; c < kNumClasses; ++c)
        std::printf(" %s=%d", class_name(c), counts[static_cast<size_t>(c)]);
    std::printf("\n");
    return 0;
}

nlohmann::json histogram_json(const Histogram& h) {
    return {{"lo", h.lo}, {"hi", h.hi}, {"bins", h.bins}};
}

int cmd_stats(const std::string& manifest_path, const std::string& json_out) {
    const Manifest m = load_manifest(manifest_path);
    const DatasetStats s = compute_stats(m);
    std::printf("images: %d\nboxes: %d\n", s.total_images, s.total_boxes);
    for (int c = 0; c < kNumClasses; ++c)
        std::printf("%-16s %d\n", class_name(c), s.class_counts[static_cast<size_t>(c)]);
    std::printf("classes per box:");
    for (int k = 0; k <= kNumClasses; ++k)
        std::printf(" %d:%d", k, s.classes_per_box[static_cast<size_t>(k)]);
    std::printf("\nboxes per image:");
    for (const auto& [n, images] : s.boxes_per_image) std::printf(" %d:%d", n, images);
    std::printf("\n");
    if (!json_out.empty()) {
        nlohmann::json j;
        for (int c = 0; c < kNumClasses; ++c)
            j["class_counts"][class_name(c)] = s.class_counts[static_cast<size_t>(c)];
        j["classes_per_box"] = s.classes_per_box;
        for (const auto& [n, images] : s.boxes_per_image)
            j["boxes_per_image"][std::to_string(n)] = images;
        j["box_side"] = histogram_json(s.size_all);
        for (int c = 0; c < kNumClasses; ++c)
            j["box_side_per_class"][class_name(c)] =
                histogram_json(s.size_per_class[static_cast<size_t>(c)]);
        j["log2_aspect"] = histogram_json(s.aspect_all);
        std::ofstream out(json_out);
        require(out.good(), "stats: cannot write " + json_out);
        out << j.dump(2) << "\n";
        std::printf("stats: wrote %s\n", json_out.c_str());
    }
    return 0;
}

int cmd_splits(const std::string& manifest_path, const std::string& out, const Config& cfg) {
    const Manifest m = load_manifest(manifest_path);
    const SplitResult sp = make_splits(m, cfg.get_bool("data.grouped"),
                                       static_cast<int>(cfg.get_int("data.split_target")));
    for (const std::string& line : sp.report) std::printf("%s\n", line.c_str());
    if (!sp.feasible)
        std::fprintf(stderr, "warning: targets not reachable for every class (see report)\n");
    save_splits(out, sp);
    std::printf("splits: wrote %s\n", out.c_str());
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& arch_name, const std::string& arch_file,
              const std::string& checkpoint_out) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const ArchGraph g = arch_from_flags(arch_name, arch_file);
    const int patch = static_cast<int>(cfg.get_int("data.patch"));
    const ShapeReport rep = infer_shapes(g, patch, patch);
    const Manifest m = load_manifest(o.manifest_path);
    const SplitResult sp = load_splits(o.splits_path);
    const SplitViews v = build_views(m, sp, cfg);
    std::printf("arch: %" PRId64 " params, %d trainable layers\n", rep.total_params,
                rep.trainable_layers);

    const TrainConfig tc = train_config_from(cfg, "train");
    Rng init(derive_seed(tc.seed, "cli/init"));
    Network net(g, patch, patch, init);
    const History h = train_child(net, v.train, v.val, v.test.size() ? &v.test : nullptr, tc);
    for (const EpochStat& e : h.epochs)
        std::printf("epoch %3d  loss %.4f  val %.4f\n", e.epoch, e.train_loss,
                    e.val_multi_target);
    if (h.early_stopped) std::printf("train: abandoned by the early-stop rule\n");

    std::map<std::string, double> metrics = {{"best_val", h.best_val},
                                             {"best_epoch", static_cast<double>(h.best_epoch)}};
    if (v.test.size()) metrics["test_at_best"] = h.bv_test;
    std::printf("train: best val %.4f (epoch %d)", h.best_val, h.best_epoch);
    if (v.test.size()) std::printf(", test at best %.4f", h.bv_test);
    std::printf("\n");

    if (!checkpoint_out.empty() && !h.best_params.empty()) {
        restore_params(net, h.best_params);
        save_checkpoint(checkpoint_out, net, patch, patch);
        std::printf("train: wrote %s\n", checkpoint_out.c_str());
    }
    log_run(o.runlog_path, cfg, "train", metrics, arch_name.empty() ? arch_file : arch_name);
    return 0;
}

int cmd_grid(const CommonOpts& o, const std::string& arch_name, const std::string& arch_file) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const ArchGraph g = arch_from_flags(arch_name, arch_file);
    const int patch = static_cast<int>(cfg.get_int("data.patch"));
    const Manifest m = load_manifest(o.manifest_path);
    const SplitResult sp = load_splits(o.splits_path);
    const SplitViews v = build_views(m, sp, cfg);

    SgdwrSchedule base;
    base.t0 = static_cast<int>(cfg.get_int("train.t0"));
    base.cycles = static_cast<int>(cfg.get_int("train.cycles"));
    const GridResult res =
        run_grid_search(g, patch, patch, v.train, v.val, v.test.size() ? &v.test : nullptr,
                        base, static_cast<uint64_t>(cfg.get_int("run.seed")));
    std::printf("%-7s %-12s %-12s %-9s %-9s %-9s\n", "batch", "lr_max", "lr_min", "val",
                "test", "train");
    for (const GridCell& c : res.cells)
        std::printf("%-7d %-12g %-12g %-9.4f %-9.4f %-9.4f\n", c.batch, c.lr_max, c.lr_min,
                    c.best_val, c.bv_test, c.bv_train);
    require(res.best_index >= 0, "grid: no cell completed");
    const GridCell& best = res.cells[static_cast<size_t>(res.best_index)];
    std::printf("grid: best batch=%d lr=[%g,%g] val=%.4f\n", best.batch, best.lr_max,
                best.lr_min, best.best_val);
    log_run(o.runlog_path, cfg, "grid",
            {{"best_val", best.best_val},
             {"best_batch", static_cast<double>(best.batch)},
             {"best_lr_max", best.lr_max}});
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& which) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const Manifest m = load_manifest(o.manifest_path);
    const SplitResult sp = load_splits(o.splits_path);
    const Checkpoint ck = load_checkpoint(checkpoint);
    Network net = restore_network(ck);

    Split want = Split::val;
    if (which == "train")
        want = Split::train;
    else if (which == "test")
        want = Split::test;
    else
        require(which == "val", "usage: --split must be train, val, or test");

    std::vector<BoxRecord> recs;
    for (const BoxRecord& b : m.boxes)
        if (sp.of(b.image_id) == want) recs.push_back(b);
    require(!recs.empty(), "eval: split \"" + which + "\" has no records");
    std::vector<const BoxRecord*> ptrs;
    for (const BoxRecord& b : recs) ptrs.push_back(&b);
    Rng rng(derive_seed(static_cast<uint64_t>(cfg.get_int("run.seed")), "cli/eval"));
    DataView data = to_view(assemble_patches(m, ptrs, ck.in_h, false, rng));

    const Metrics metrics = evaluate(net, data);
    std::printf("eval: %s multi-target %.4f, per-class avg %.4f over %" PRId64 " patches\n",
                which.c_str(), metrics.multi_target, metrics.avg_per_class, metrics.samples);
    for (int c = 0; c < kNumClasses; ++c)
        std::printf("  %-16s %.4f\n", class_name(c), metrics.per_class[static_cast<size_t>(c)]);
    log_run(o.runlog_path, cfg, "eval",
            {{"multi_target", metrics.multi_target}, {"avg_per_class", metrics.avg_per_class}});
    return 0;
}

int cmd_params(const std::string& name, int patch) {
    auto report = [&](const std::string& model) {
        const ArchGraph g = zoo::make_model(model);
        const ShapeReport r = infer_shapes(g, patch, patch);
        // Truncated to match the published table's two-decimal style.
        const double millions =
            static_cast<double>(r.total_params / 10000) / 100.0;
        std::printf("%s: %.2fM params, %d layers\n", model.c_str(), millions,
                    r.trainable_layers);
    };
    if (name == "all") {
        for (const std::string& model : zoo::model_names()) report(model);
    } else {
        report(name);
    }
    return 0;
}

MetaQnnConfig metaqnn_config_from(const Config& cfg, int patch) {
    MetaQnnConfig mc;
    mc.space.kernels = parse_int_list(cfg.get_text("search.kernels"), "search.kernels");
    mc.space.conv_features = parse_int_list(cfg.get_text("search.features"), "search.features");
    mc.space.spp_scales = parse_int_list(cfg.get_text("search.spp"), "search.spp");
    mc.space.dense_sizes = parse_int_list(cfg.get_text("search.dense"), "search.dense");
    mc.space.min_convs = static_cast<int>(cfg.get_int("search.min_convs"));
    mc.space.max_convs = static_cast<int>(cfg.get_int("search.max_convs"));
    mc.alpha = static_cast<float>(cfg.get_real("search.alpha"));
    mc.gamma = static_cast<float>(cfg.get_real("search.gamma"));
    mc.q_init = static_cast<float>(cfg.get_real("search.q_init"));
    mc.replay_samples = static_cast<int>(cfg.get_int("search.replay"));
    mc.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    mc.report_h = mc.report_w = patch;
    const int archs = static_cast<int>(cfg.get_int("search.archs"));
    if (archs > 0) {
        // Compressed exploration for desk-scale runs.
        const int explore = std::max(1, archs / 2);
        const int mid = std::max(1, archs / 4);
        mc.schedule.phases = {{1.0f, explore}, {0.5f, mid},
                              {0.1f, std::max(1, archs - explore - mid)}};
    }
    return mc;
}

void write_search_log(const std::string& path, const std::vector<SearchRecord>& log) {
    if (path.empty()) return;
    std::ofstream out(path);
    require(out.good(), "search: cannot write " + path);
    for (const SearchRecord& r : log) {
        nlohmann::json j;
        j["slot"] = r.slot;
        j["attempt"] = r.attempt;
        j["epsilon"] = r.epsilon;
        j["status"] = r.status;
        j["reward"] = r.reward;
        j["params"] = r.params;
        j["layers"] = r.layers;
        j["arch"] = r.dsl;
        if (!r.error.empty()) j["error"] = r.error;
        out << j.dump() << "\n";
    }
}

int count_conv_layers(const ArchGraph& g) {
    int n = 0;
    for (const LayerSpec& l : g.layers)
        n += l.kind == LayerKind::conv || l.kind == LayerKind::sepconv;
    return n;
}

int cmd_search_metaqnn(const CommonOpts& o, bool surrogate, const std::string& out_arch,
                       const std::string& search_log) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const int patch = static_cast<int>(cfg.get_int("data.patch"));
    MetaQnnConfig mc = metaqnn_config_from(cfg, patch);

    CandidateEvaluator evaluate;
    SplitViews v;
    int child_counter = 0;
    if (surrogate) {
        // Cheap depth proxy: lets the Q-learning loop run in seconds.
        evaluate = [&mc](const ArchGraph& g) {
            return CandidateOutcome{
                std::min(1.0, static_cast<double>(count_conv_layers(g)) / mc.space.max_convs),
                false};
        };
    } else {
        require(!o.manifest_path.empty() && !o.splits_path.empty(),
                "usage: search-metaqnn needs --manifest and --splits (or --surrogate)");
        const Manifest m = load_manifest(o.manifest_path);
        const SplitResult sp = load_splits(o.splits_path);
        v = build_views(m, sp, cfg);
        evaluate = [&](const ArchGraph& g) {
            TrainConfig tc = train_config_from(cfg, "search");
            tc.seed = derive_seed(mc.seed, "cli/child/" + std::to_string(child_counter++));
            Rng init(derive_seed(tc.seed, "cli/child-init"));
            Network net(g, patch, patch, init);
            const History h = train_child(net, v.train, v.val, nullptr, tc);
            return CandidateOutcome{h.best_val, h.early_stopped};
        };
    }

    const MetaQnnResult res = run_metaqnn_search(mc, evaluate);
    int ok = 0;
    for (const SearchRecord& r : res.log) ok += r.status == "ok";
    std::printf("search: %zu attempts, %d scored, best reward %.4f\n", res.log.size(), ok,
                res.best_reward);
    std::printf("search: best architecture\n%s", encode_arch(res.best).c_str());
    if (!out_arch.empty()) {
        write_arch(out_arch, res.best);
        write_arch(out_arch + ".greedy", res.greedy);
        std::printf("search: wrote %s (+.greedy)\n", out_arch.c_str());
    }
    write_search_log(search_log, res.log);
    log_run(o.runlog_path, cfg, surrogate ? "search-metaqnn-surrogate" : "search-metaqnn",
            {{"best_reward", res.best_reward}, {"scored", static_cast<double>(ok)}});
    return 0;
}

EnasConfig enas_config_from(const Config& cfg) {
    EnasConfig ec;
    ec.space.nodes = static_cast<int>(cfg.get_int("enas.nodes"));
    ec.space.search_features = static_cast<int>(cfg.get_int("enas.features"));
    ec.space.final_features =
        parse_int_list(cfg.get_text("enas.final_features"), "enas.final_features");
    require(static_cast<int>(ec.space.final_features.size()) == ec.space.nodes,
            "config: enas.final_features must list one width per node");
    ec.schedule.lr_max = static_cast<float>(cfg.get_real("enas.lr_max"));
    ec.schedule.lr_min = static_cast<float>(cfg.get_real("enas.lr_min"));
    ec.schedule.t0 = static_cast<int>(cfg.get_int("enas.t0"));
    ec.schedule.cycles = static_cast<int>(cfg.get_int("enas.cycles"));
    ec.momentum = static_cast<float>(cfg.get_real("enas.momentum"));
    ec.batch = static_cast<int>(cfg.get_int("enas.batch"));
    ec.controller_steps = static_cast<int>(cfg.get_int("enas.controller_steps"));
    ec.controller_hidden = static_cast<int>(cfg.get_int("enas.hidden"));
    ec.controller_embed = static_cast<int>(cfg.get_int("enas.embed"));
    ec.controller_lr = static_cast<float>(cfg.get_real("enas.controller_lr"));
    ec.entropy_beta = static_cast<float>(cfg.get_real("enas.entropy_beta"));
    ec.baseline_decay = cfg.get_real("enas.baseline_decay");
    ec.reward_batch = static_cast<int>(cfg.get_int("enas.reward_batch"));
    ec.seed = static_cast<uint64_t>(cfg.get_int("run.seed"));
    return ec;
}

int cmd_search_enas(const CommonOpts& o, const std::string& state_out) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const Manifest m = load_manifest(o.manifest_path);
    const SplitResult sp = load_splits(o.splits_path);
    const SplitViews v = build_views(m, sp, cfg);
    EnasConfig ec = enas_config_from(cfg);

    EnasSearchResult res = run_enas_search(ec, v.train, v.val);
    for (const EnasEpochStat& e : res.epochs)
        std::printf("epoch %3d  shared loss %.4f  mean reward %.4f  baseline %.4f\n", e.epoch,
                    e.shared_loss, e.mean_reward, e.baseline);
    if (!state_out.empty()) {
        save_enas_state(state_out, res.controller, res.bank);
        std::printf("search: wrote %s\n", state_out.c_str());
    }
    const EnasEpochStat& last = res.epochs.back();
    log_run(o.runlog_path, cfg, "search-enas",
            {{"final_reward", last.mean_reward}, {"final_loss", last.shared_loss}});
    return 0;
}

int cmd_derive(const CommonOpts& o, const std::string& state_in, const std::string& out_arch,
               int top_n, int pool) {
    const Config cfg = load_cli_config(o.config_file, o.overrides);
    const Manifest m = load_manifest(o.manifest_path);
    const SplitResult sp = load_splits(o.splits_path);
    EnasState st = load_enas_state(state_in);

    std::vector<const BoxRecord*> ptrs;
    std::vector<BoxRecord> recs;
    for (const BoxRecord& b : m.boxes)
        if (sp.of(b.image_id) == Split::val) recs.push_back(b);
    require(!recs.empty(), "derive: validation split has no records");
    for (const BoxRecord& b : recs) ptrs.push_back(&b);
    const int patch = static_cast<int>(cfg.get_int("data.patch"));
    Rng rng(derive_seed(static_cast<uint64_t>(cfg.get_int("run.seed")), "cli/derive"));
    const DataView val = to_view(assemble_patches(m, ptrs, patch, false, rng));

    const std::vector<DerivedArch> ranked =
        derive_final(st.controller, st.bank, val, top_n, pool,
                     static_cast<uint64_t>(cfg.get_int("run.seed")));
    require(!ranked.empty(), "derive: no candidates survived");
    for (size_t i = 0; i < ranked.size(); ++i) {
        const ShapeReport rep = infer_shapes(ranked[i].final_graph, patch, patch);
        std::printf("#%zu shared-weight val %.4f, %" PRId64 " params  %s\n", i + 1,
                    ranked[i].reward, rep.total_params,
                    decisions_to_string(ranked[i].decisions).c_str());
    }
    if (!out_arch.empty()) {
        write_arch(out_arch, ranked[0].final_graph);
        for (size_t i = 1; i < ranked.size(); ++i)
            write_arch(out_arch + "." + std::to_string(i + 1), ranked[i].final_graph);
        std::printf("derive: wrote %s\n", out_arch.c_str());
    }
    log_run(o.runlog_path, cfg, "derive", {{"best_reward", ranked[0].reward}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "cdnas: multi-target defect classification with Q-learning and\n"
        "weight-sharing architecture search"};
    app.require_subcommand(1);
    app.footer(
        "Relative output paths resolve under $CDNAS_OUT when it is set.\n"
        "Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic defect dataset");
    std::string synth_dir, synth_manifest;
    int synth_per_class = 100, synth_size = 32;
    uint64_t synth_seed = 1;
    double synth_co = 0.3, synth_noise = 8.0;
    synth->add_option("--out", synth_dir, "output directory")->required();
    synth->add_option("--manifest-out", synth_manifest, "also write a manifest file");
    synth->add_option("--per-class", synth_per_class, "samples per class");
    synth->add_option("--size", synth_size, "image edge length");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--co-occurrence", synth_co, "extra-defect probability");
    synth->add_option("--noise", synth_noise, "base texture noise level");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse annotations into a manifest");
    std::string ingest_dir, ingest_out;
    bool ingest_bg = true;
    uint64_t ingest_seed = 1;
    int ingest_target = -1;
    ingest->add_option("--dir", ingest_dir, "annotation directory")->required();
    ingest->add_option("--out", ingest_out, "manifest output path")->required();
    ingest->add_flag("--background,!--no-background", ingest_bg, "sample background boxes");
    ingest->add_option("--seed", ingest_seed, "background sampler seed");
    ingest->add_option("--target", ingest_target,
                       "background box count (-1 = mean defect class count)");

    // stats
    auto* stats = app.add_subcommand("stats", "dataset statistics from a manifest");
    std::string stats_manifest, stats_json;
    stats->add_option("--manifest", stats_manifest, "manifest file")->required();
    stats->add_option("--json", stats_json, "write histograms to this JSON file");

    // splits
    auto* splits = app.add_subcommand("splits", "assign images to train/val/test");
    CommonOpts splits_opts;
    std::string splits_manifest, splits_out;
    splits->add_option("--manifest", splits_manifest, "manifest file")->required();
    splits->add_option("--out", splits_out, "split assignment output path")->required();
    splits->add_option("--config", splits_opts.config_file, "configuration file");
    splits->add_option("--set", splits_opts.overrides, "override one key");

    // train
    auto* train = app.add_subcommand("train", "train one architecture");
    CommonOpts train_opts;
    std::string train_arch, train_arch_file, train_ck;
    add_common(train, &train_opts, true);
    train->add_option("--arch", train_arch, "a published architecture name");
    train->add_option("--arch-file", train_arch_file, "architecture text file");
    train->add_option("--checkpoint", train_ck, "write the best weights here");

    // grid
    auto* grid = app.add_subcommand("grid", "batch-size x learning-rate sweep");
    CommonOpts grid_opts;
    std::string grid_arch, grid_arch_file;
    add_common(grid, &grid_opts, true);
    grid->add_option("--arch", grid_arch, "a published architecture name");
    grid->add_option("--arch-file", grid_arch_file, "architecture text file");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    CommonOpts eval_opts;
    std::string eval_ck, eval_split = "val";
    add_common(eval, &eval_opts, true);
    eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
    eval->add_option("--split", eval_split, "train, val, or test");

    // params
    auto* params = app.add_subcommand("params", "parameter count of published models");
    std::string params_name;
    int params_patch = 224;
    params->add_option("name", params_name, "model name, or \"all\"")->required();
    params->add_option("--patch", params_patch, "input edge length");

    // search-metaqnn
    auto* smq = app.add_subcommand("search-metaqnn", "Q-learning architecture search");
    CommonOpts smq_opts;
    bool smq_surrogate = false;
    std::string smq_out, smq_log;
    smq->add_option("--config", smq_opts.config_file, "configuration file");
    smq->add_option("--set", smq_opts.overrides, "override one key");
    smq->add_option("--manifest", smq_opts.manifest_path, "manifest file");
    smq->add_option("--splits", smq_opts.splits_path, "split assignment file");
    smq->add_option("--log", smq_opts.runlog_path, "append a run record here");
    smq->add_flag("--surrogate", smq_surrogate, "score with a depth proxy instead of training");
    smq->add_option("--out", smq_out, "write the best architecture here");
    smq->add_option("--search-log", smq_log, "write every attempt to this JSONL file");

    // search-enas
    auto* sen = app.add_subcommand("search-enas", "weight-sharing architecture search");
    CommonOpts sen_opts;
    std::string sen_state;
    add_common(sen, &sen_opts, true);
    sen->add_option("--state", sen_state, "write controller + shared weights here");

    // derive
    auto* derive = app.add_subcommand("derive", "rank architectures from a search state");
    CommonOpts derive_opts;
    std::string derive_state, derive_out;
    int derive_top = 3, derive_pool = 10;
    add_common(derive, &derive_opts, true);
    derive->add_option("--state", derive_state, "search state file")->required();
    derive->add_option("--out", derive_out, "write the winning architecture here");
    derive->add_option("--top", derive_top, "how many ranked candidates to keep");
    derive->add_option("--pool", derive_pool, "how many sequences to sample");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    for (CommonOpts* o : {&train_opts, &grid_opts, &eval_opts, &smq_opts, &sen_opts,
                          &derive_opts})
        o->runlog_path = out_path(o->runlog_path);

    try {
        if (*synth)
            return cmd_synth(out_path(synth_dir), synth_per_class, synth_size, synth_seed,
                             synth_co, synth_noise, out_path(synth_manifest));
        if (*ingest)
            return cmd_ingest(ingest_dir, out_path(ingest_out), ingest_bg, ingest_seed,
                              ingest_target);
        if (*stats) return cmd_stats(stats_manifest, out_path(stats_json));
        if (*splits) {
            const Config cfg =
                load_cli_config(splits_opts.config_file, splits_opts.overrides);
            return cmd_splits(splits_manifest, out_path(splits_out), cfg);
        }
        if (*train)
            return cmd_train(train_opts, train_arch, train_arch_file, out_path(train_ck));
        if (*grid) return cmd_grid(grid_opts, grid_arch, grid_arch_file);
        if (*eval) return cmd_eval(eval_opts, eval_ck, eval_split);
        if (*params) return cmd_params(params_name, params_patch);
        if (*smq)
            return cmd_search_metaqnn(smq_opts, smq_surrogate, out_path(smq_out),
                                      out_path(smq_log));
        if (*sen) return cmd_search_enas(sen_opts, out_path(sen_state));
        if (*derive)
            return cmd_derive(derive_opts, derive_state, out_path(derive_out), derive_top,
                              derive_pool);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}

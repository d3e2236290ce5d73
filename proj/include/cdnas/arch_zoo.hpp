#pragma once

// Built-in architecture definitions: the three best Q-learning-searched
// models and the literature baselines they are compared against, all with
// 6-class multi-target heads.

#include <string>
#include <vector>

#include "cdnas/arch_dsl.hpp"

namespace cdnas::zoo {

inline ArchGraph metaqnn_1() {
    return decode_arch(R"(
conv 9x9-256 s=2 bn
conv 3x3-32 p=1 bn
conv 5x5-256 bn
conv 7x7-256 s=2 bn
spp 4
fc 128 bn
classifier 6
)");
}

inline ArchGraph metaqnn_2() {
    return decode_arch(R"(
conv 5x5-128 bn
conv 7x7-32 s=2 bn
conv 3x3-256 p=1 bn skip
conv 3x3-256 p=1 bn
conv 3x3-32 bn
conv 9x9-128 s=2 bn
spp 3
fc 128 bn
classifier 6
)");
}

inline ArchGraph metaqnn_3() {
    return decode_arch(R"(
conv 3x3-128 p=1 bn skip
conv 3x3-128 p=1 bn
conv 9x9-128 s=2 bn
conv 3x3-256 p=1 bn skip
conv 3x3-256 p=1 bn
spp 4
fc 64 bn
classifier 6
)");
}

inline ArchGraph alexnet() {
    return decode_arch(R"(
conv 11x11-64 s=4 p=2
maxpool 3x3 s=2
conv 5x5-192 p=2
maxpool 3x3 s=2
conv 3x3-384 p=1
conv 3x3-256 p=1
conv 3x3-256 p=1
maxpool 3x3 s=2
gap 6
fc 4096
fc 4096
classifier 6
)");
}

// Texture-CNN style variant: original single-group filter counts and a first
// fully-connected layer fed straight from the last pooled feature map, so its
// size follows the input patch size.
inline ArchGraph tcnn() {
    return decode_arch(R"(
conv 11x11-96 s=4 p=2
maxpool 3x3 s=2
conv 5x5-256 p=2
maxpool 3x3 s=2
conv 3x3-384 p=1
conv 3x3-384 p=1
conv 3x3-256 p=1
maxpool 3x3 s=2
fc 4096
fc 4096
classifier 6
)");
}

namespace detail {

inline ArchGraph vgg(const std::vector<int>& cfg) {
    ArchGraph g;
    for (int c : cfg) {
        LayerSpec l;
        if (c < 0) {
            l.kind = LayerKind::maxpool;
            l.kernel = 2;
            l.stride = 2;
        } else {
            l.kind = LayerKind::conv;
            l.kernel = 3;
            l.pad = 1;
            l.features = c;
        }
        g.layers.push_back(l);
    }
    LayerSpec gap;
    gap.kind = LayerKind::gap;
    gap.grid = 7;
    g.layers.push_back(gap);
    for (int i = 0; i < 2; ++i) {
        LayerSpec fc;
        fc.kind = LayerKind::fc;
        fc.features = 4096;
        g.layers.push_back(fc);
    }
    LayerSpec cls;
    cls.kind = LayerKind::classifier;
    cls.features = 6;
    cls.use_relu = false;
    g.layers.push_back(cls);
    return g;
}

}  // namespace detail

inline ArchGraph vgg_a() {
    return detail::vgg({64, -1, 128, -1, 256, 256, -1, 512, 512, -1, 512, 512, -1});
}

inline ArchGraph vgg_d() {
    return detail::vgg(
        {64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512, -1, 512, 512, 512, -1});
}

// Wide residual network, depth 28, width factor 4. Residual sums are wired
// through each consumer's input list; the strided 1x1 shortcut convolutions
// are explicit layers (no batch norm, no activation).
inline ArchGraph wrn_28_4() {
    ArchGraph g;
    auto add = [&](LayerSpec l) {
        g.layers.push_back(std::move(l));
        return static_cast<int>(g.layers.size()) - 1;
    };
    auto conv = [&](int k, int f, int s, int p, std::vector<int> from, bool bn, bool relu) {
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.kernel = k;
        l.features = f;
        l.stride = s;
        l.pad = p;
        l.use_bias = false;
        l.use_bn = bn;
        l.use_relu = relu;
        l.inputs = std::move(from);
        return add(l);
    };

    const int stem = conv(3, 16, 1, 1, {}, true, true);
    std::vector<int> carry = {stem};  // outputs that sum into the next block
    int channels = 16;
    const int widths[3] = {64, 128, 256};
    for (int group = 0; group < 3; ++group) {
        const int out_c = widths[group];
        const int stride = group == 0 ? 1 : 2;
        for (int block = 0; block < 4; ++block) {
            const int s = block == 0 ? stride : 1;
            const int a = conv(3, out_c, s, 1, carry, true, true);
            const int b = conv(3, out_c, 1, 1, {a}, true, true);
            // A block's output is b plus its shortcut, realized by handing
            // every summand's id to whoever consumes the block. A projection
            // shortcut replaces the carried sum; an identity shortcut keeps
            // it, so the carry list grows by one per identity block.
            if (block == 0) {
                const int shortcut = conv(1, out_c, s, 0, carry, false, false);
                carry = {b, shortcut};
            } else {
                carry.insert(carry.begin(), b);
            }
            channels = out_c;
        }
    }
    LayerSpec gap;
    gap.kind = LayerKind::gap;
    gap.grid = 1;
    gap.inputs = carry;
    add(gap);
    LayerSpec cls;
    cls.kind = LayerKind::classifier;
    cls.features = 6;
    cls.use_relu = false;
    add(cls);
    return g;
}

// Densely connected network, 121-layer configuration (growth 32, bottleneck
// factor 4, compression 0.5). Batch norm is attached to conv outputs here,
// so the element count differs slightly from the pre-activation original;
// the comparison report calls this out.
inline ArchGraph densenet_121() {
    ArchGraph g;
    auto add = [&](LayerSpec l) {
        g.layers.push_back(std::move(l));
        return static_cast<int>(g.layers.size()) - 1;
    };
    auto conv = [&](int k, int f, int s, int p, std::vector<int> from, bool cat) {
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.kernel = k;
        l.features = f;
        l.stride = s;
        l.pad = p;
        l.use_bias = false;
        l.use_bn = true;
        l.inputs = std::move(from);
        l.concat_inputs = cat;
        return add(l);
    };

    const int growth = 32;
    const int stem = conv(7, 64, 2, 3, {}, false);
    LayerSpec pool0;
    pool0.kind = LayerKind::maxpool;
    pool0.kernel = 3;
    pool0.stride = 2;
    pool0.pad = 1;
    pool0.inputs = {stem};
    int entry = add(pool0);
    int channels = 64;

    const int block_sizes[4] = {6, 12, 24, 16};
    std::vector<int> feed;
    for (int b = 0; b < 4; ++b) {
        feed = {entry};
        for (int i = 0; i < block_sizes[b]; ++i) {
            const int bottleneck = conv(1, 4 * growth, 1, 0, feed, true);
            const int out = conv(3, growth, 1, 1, {bottleneck}, false);
            feed.push_back(out);
            channels += growth;
        }
        if (b < 3) {
            channels /= 2;
            const int t = conv(1, channels, 1, 0, feed, true);
            LayerSpec pool;
            pool.kind = LayerKind::avgpool;
            pool.kernel = 2;
            pool.stride = 2;
            pool.inputs = {t};
            entry = add(pool);
        }
    }
    LayerSpec gap;
    gap.kind = LayerKind::gap;
    gap.grid = 1;
    gap.inputs = feed;
    gap.concat_inputs = true;
    add(gap);
    LayerSpec cls;
    cls.kind = LayerKind::classifier;
    cls.features = 6;
    cls.use_relu = false;
    add(cls);
    return g;
}

// Reference values from the comparison table the models are reported
// against: total parameters (millions) and trainable-layer counts.
struct PublishedRef {
    std::string model;
    double params_millions;
    int layers;
    bool gated;  // counted against the reproduction gate vs report-only
};

inline const std::vector<PublishedRef>& published_table() {
    static const std::vector<PublishedRef> table = {
        {"metaqnn-1", 4.53, 6, true},
        {"metaqnn-2", 1.22, 8, false},
        {"metaqnn-3", 2.88, 7, true},
        {"alexnet", 57.02, 8, true},
        {"tcnn", 58.60, 8, false},
        {"vgg-a", 128.79, 11, true},
        {"vgg-d", 134.28, 16, true},
        {"wrn-28-4", 5.84, 28, true},
        {"densenet-121", 11.50, 121, false},
    };
    return table;
}

inline std::vector<std::string> model_names() {
    std::vector<std::string> names;
    for (const auto& r : published_table()) names.push_back(r.model);
    return names;
}

inline ArchGraph make_model(const std::string& name) {
    if (name == "metaqnn-1") return metaqnn_1();
    if (name == "metaqnn-2") return metaqnn_2();
    if (name == "metaqnn-3") return metaqnn_3();
    if (name == "alexnet") return alexnet();
    if (name == "tcnn") return tcnn();
    if (name == "vgg-a") return vgg_a();
    if (name == "vgg-d") return vgg_d();
    if (name == "wrn-28-4") return wrn_28_4();
    if (name == "densenet-121") return densenet_121();
    throw std::invalid_argument("unknown model '" + name + "'");
}

}  // namespace cdnas::zoo

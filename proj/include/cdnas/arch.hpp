#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdnas/conv.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

enum class LayerKind { conv, sepconv, maxpool, avgpool, spp, gap, fc, classifier };

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::sepconv: return "sepconv";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool: return "avgpool";
        case LayerKind::spp: return "spp";
        case LayerKind::gap: return "gap";
        case LayerKind::fc: return "fc";
        case LayerKind::classifier: return "classifier";
    }
    return "?";
}

// One node of an architecture DAG. `inputs` lists producer layer ids (-1 is
// the network input); an empty list means "the previous layer". Multiple
// inputs are summed (the first entry sets the channel count and other
// branches get automatic 1x1 projections) unless concat_inputs is set, in
// which case channels concatenate.
struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int features = 0;  // output features: conv/sepconv/fc/classifier
    int kernel = 0;    // window size: conv/sepconv/pools
    int stride = 1;
    int pad = 0;
    int scales = 0;  // spp pyramid depth
    int grid = 1;    // gap target grid (1 = global average)
    bool use_bn = false;
    bool use_bias = true;
    bool use_relu = true;
    std::vector<int> inputs;
    bool concat_inputs = false;

    bool operator==(const LayerSpec&) const = default;
};

struct ArchGraph {
    std::vector<LayerSpec> layers;
    int input_channels = 3;

    bool operator==(const ArchGraph&) const = default;
};

inline std::vector<int> resolved_inputs(const ArchGraph& g, int i) {
    if (!g.layers[static_cast<size_t>(i)].inputs.empty())
        return g.layers[static_cast<size_t>(i)].inputs;
    return {i - 1};  // layer 0 gets {-1}, the image
}

// Output description of one layer: either a feature map or a flat vector.
struct LayerShape {
    bool flat = false;
    int c = 0, h = 0, w = 0;  // when !flat
    int features = 0;         // when flat

    int flattened() const { return flat ? features : c * h * w; }
    bool operator==(const LayerShape&) const = default;
};

// A 1x1 channel projection inserted automatically at a sum-merge.
struct ProjSpec {
    int input_id = 0;  // producer being projected
    int from_c = 0;
    int to_c = 0;

    bool operator==(const ProjSpec&) const = default;
};

struct ShapeReport {
    std::vector<LayerShape> out;                 // per layer
    std::vector<LayerShape> merged_in;           // per layer, after merge
    std::vector<std::vector<ProjSpec>> proj;     // per layer
    std::vector<int64_t> params;                 // per layer, incl. its projections
    int64_t total_params = 0;
    int trainable_layers = 0;  // convs + sepconvs + fc + classifier
};

inline void validate_graph(const ArchGraph& g) {
    require(!g.layers.empty(), "graph: no layers");
    require(g.input_channels >= 1, "graph: input channels must be positive");
    const int n = static_cast<int>(g.layers.size());
    for (int i = 0; i < n; ++i) {
        const LayerSpec& l = g.layers[static_cast<size_t>(i)];
        const std::string where = "layer " + std::to_string(i) + " (" + kind_name(l.kind) + ")";
        for (int in : resolved_inputs(g, i))
            require(in >= -1 && in < i, where + ": input id " + std::to_string(in) +
                                            " must name an earlier layer or -1");
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::sepconv:
                require(l.features >= 1 && l.kernel >= 1 && l.stride >= 1 && l.pad >= 0,
                        where + ": needs positive features/kernel/stride");
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                require(l.kernel >= 1 && l.stride >= 1 && l.pad >= 0,
                        where + ": needs positive kernel/stride");
                break;
            case LayerKind::spp:
                require(l.scales >= 1, where + ": needs scales >= 1");
                break;
            case LayerKind::gap:
                require(l.grid >= 1, where + ": needs grid >= 1");
                break;
            case LayerKind::fc:
            case LayerKind::classifier:
                require(l.features >= 1, where + ": needs positive features");
                break;
        }
        if (l.kind == LayerKind::classifier)
            require(i == n - 1, "graph: classifier must be the last layer");
    }
    require(g.layers.back().kind == LayerKind::classifier,
            "graph: last layer must be the classifier");
}

// Walk the DAG once for a given input resolution: check connectivity rules
// that depend on shapes, record every layer's output shape, plan the
// automatic projections, and count learnable elements.
inline ShapeReport infer_shapes(const ArchGraph& g, int in_h, int in_w) {
    validate_graph(g);
    const int n = static_cast<int>(g.layers.size());
    ShapeReport rep;
    rep.out.resize(static_cast<size_t>(n));
    rep.merged_in.resize(static_cast<size_t>(n));
    rep.proj.resize(static_cast<size_t>(n));
    rep.params.assign(static_cast<size_t>(n), 0);

    const LayerShape image{false, g.input_channels, in_h, in_w, 0};
    auto shape_of = [&](int id) { return id < 0 ? image : rep.out[static_cast<size_t>(id)]; };

    for (int i = 0; i < n; ++i) {
        const LayerSpec& l = g.layers[static_cast<size_t>(i)];
        const std::string where = "layer " + std::to_string(i) + " (" + kind_name(l.kind) + ")";
        const std::vector<int> ins = resolved_inputs(g, i);

        // Merge the producers into one input shape.
        LayerShape in = shape_of(ins[0]);
        if (ins.size() > 1) {
            require(!in.flat, where + ": cannot merge flat inputs");
            for (size_t j = 1; j < ins.size(); ++j) {
                const LayerShape s = shape_of(ins[j]);
                require(!s.flat, where + ": cannot merge flat inputs");
                require(s.h == in.h && s.w == in.w,
                        where + ": merge inputs disagree on spatial size (" +
                            std::to_string(s.h) + "x" + std::to_string(s.w) + " vs " +
                            std::to_string(in.h) + "x" + std::to_string(in.w) + ")");
                if (l.concat_inputs) {
                    in.c += s.c;
                } else if (s.c != in.c) {
                    rep.proj[static_cast<size_t>(i)].push_back({ins[j], s.c, in.c});
                    rep.params[static_cast<size_t>(i)] +=
                        static_cast<int64_t>(in.c) * s.c + in.c;  // 1x1 weights + bias
                }
            }
        }
        rep.merged_in[static_cast<size_t>(i)] = in;

        LayerShape out;
        int64_t p = 0;
        switch (l.kind) {
            case LayerKind::conv: {
                require(!in.flat, where + ": needs a feature-map input");
                out = {false, l.features, conv_out_size(in.h, l.kernel, l.stride, l.pad),
                       conv_out_size(in.w, l.kernel, l.stride, l.pad), 0};
                p += static_cast<int64_t>(l.features) * in.c * l.kernel * l.kernel;
                if (l.use_bias) p += l.features;
                if (l.use_bn) p += 2LL * l.features;
                ++rep.trainable_layers;
                break;
            }
            case LayerKind::sepconv: {
                require(!in.flat, where + ": needs a feature-map input");
                out = {false, l.features, conv_out_size(in.h, l.kernel, l.stride, l.pad),
                       conv_out_size(in.w, l.kernel, l.stride, l.pad), 0};
                p += static_cast<int64_t>(in.c) * l.kernel * l.kernel;  // depthwise
                p += static_cast<int64_t>(l.features) * in.c;           // pointwise
                if (l.use_bias) p += l.features;
                if (l.use_bn) p += 2LL * l.features;
                ++rep.trainable_layers;
                break;
            }
            case LayerKind::maxpool:
            case LayerKind::avgpool: {
                require(!in.flat, where + ": needs a feature-map input");
                const int oh = (in.h + 2 * l.pad - l.kernel) / l.stride + 1;
                const int ow = (in.w + 2 * l.pad - l.kernel) / l.stride + 1;
                require(oh >= 1 && ow >= 1, where + ": window larger than input");
                out = {false, in.c, oh, ow, 0};
                break;
            }
            case LayerKind::spp: {
                require(!in.flat, where + ": needs a feature-map input");
                require(in.h >= l.scales && in.w >= l.scales,
                        where + ": input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                            " smaller than coarsest grid " + std::to_string(l.scales));
                int bins = 0;
                for (int s = 1; s <= l.scales; ++s) bins += s * s;
                out = {true, 0, 0, 0, in.c * bins};
                break;
            }
            case LayerKind::gap: {
                require(!in.flat, where + ": needs a feature-map input");
                require(in.h >= l.grid && in.w >= l.grid, where + ": grid larger than input");
                out = {false, in.c, l.grid, l.grid, 0};
                break;
            }
            case LayerKind::fc:
            case LayerKind::classifier: {
                const int fin = in.flattened();
                out = {true, 0, 0, 0, l.features};
                p += static_cast<int64_t>(l.features) * fin;
                if (l.use_bias) p += l.features;
                if (l.use_bn) p += 2LL * l.features;
                ++rep.trainable_layers;
                break;
            }
        }
        rep.out[static_cast<size_t>(i)] = out;
        rep.params[static_cast<size_t>(i)] += p;
        rep.total_params += rep.params[static_cast<size_t>(i)];
    }
    return rep;
}

inline int64_t count_params(const ArchGraph& g, int in_h, int in_w) {
    return infer_shapes(g, in_h, in_w).total_params;
}

}  // namespace cdnas

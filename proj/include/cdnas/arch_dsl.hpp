#pragma once

// Text form for architecture DAGs: one layer per line, '#' comments.
//
//   input 3
//   conv 3x3-128 p=1 bn skip
//   conv 3x3-128 p=1 bn
//   conv 9x9-128 s=2 bn
//   spp 4
//   fc 64 bn
//   classifier 6
//
// Layer forms:  conv KxK-F | sepconv KxK-F | maxpool KxK | avgpool KxK |
//               spp S | gap G | fc F | classifier F
// Attributes:   s=N  p=N  bn  nobias  norelu  cat  from=ID[,ID...]  skip
// `from` entries are 0-based layer indices or `in` for the network input;
// multiple producers are summed unless `cat` is given. `skip` is shorthand
// on a conv: it feeds this layer's own input two layers further down, which
// is how the searched skip connections are written.

#include <sstream>
#include <string>
#include <vector>

#include "cdnas/arch.hpp"

namespace cdnas {

struct ParseError : std::runtime_error {
    explicit ParseError(int line, const std::string& msg)
        : std::runtime_error("line " + std::to_string(line) + ": " + msg) {}
};

namespace dsl_detail {

inline int parse_int(const std::string& tok, int line, const std::string& what) {
    size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
        throw ParseError(line, "expected a number for " + what + ", got '" + tok + "'");
    }
    if (pos != tok.size())
        throw ParseError(line, "trailing characters in " + what + " '" + tok + "'");
    return v;
}

// "KxK-F" or "KxK"
inline void parse_kernel(const std::string& tok, int line, bool with_features, int* kernel,
                         int* features) {
    const size_t x = tok.find('x');
    if (x == std::string::npos)
        throw ParseError(line, "expected KxK in '" + tok + "'");
    const size_t dash = tok.find('-', x);
    if (with_features && dash == std::string::npos)
        throw ParseError(line, "expected KxK-F in '" + tok + "'");
    if (!with_features && dash != std::string::npos)
        throw ParseError(line, "pooling takes no feature count: '" + tok + "'");
    const std::string k1 = tok.substr(0, x);
    const std::string k2 = tok.substr(x + 1, (dash == std::string::npos ? tok.size() : dash) - x - 1);
    if (k1 != k2)
        throw ParseError(line, "only square windows are supported: '" + tok + "'");
    *kernel = parse_int(k1, line, "kernel size");
    if (with_features) *features = parse_int(tok.substr(dash + 1), line, "feature count");
}

inline std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream is(line);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

}  // namespace dsl_detail

inline ArchGraph decode_arch(const std::string& text) {
    ArchGraph g;
    std::vector<int> skip_from;  // parse index of each conv marked `skip`
    std::istringstream stream(text);
    std::string raw;
    int lineno = 0;
    bool saw_layer = false;

    while (std::getline(stream, raw)) {
        ++lineno;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::vector<std::string> toks = dsl_detail::tokenize(raw);
        if (toks.empty()) continue;

        if (toks[0] == "input") {
            if (saw_layer) throw ParseError(lineno, "'input' must come before any layer");
            if (toks.size() != 2) throw ParseError(lineno, "usage: input CHANNELS");
            g.input_channels = dsl_detail::parse_int(toks[1], lineno, "input channels");
            continue;
        }

        LayerSpec l;
        size_t arg = 2;  // most forms take one positional argument
        if (toks[0] == "conv" || toks[0] == "sepconv") {
            l.kind = toks[0] == "conv" ? LayerKind::conv : LayerKind::sepconv;
            if (toks.size() < 2) throw ParseError(lineno, toks[0] + " needs KxK-F");
            dsl_detail::parse_kernel(toks[1], lineno, true, &l.kernel, &l.features);
        } else if (toks[0] == "maxpool" || toks[0] == "avgpool") {
            l.kind = toks[0] == "maxpool" ? LayerKind::maxpool : LayerKind::avgpool;
            if (toks.size() < 2) throw ParseError(lineno, toks[0] + " needs KxK");
            dsl_detail::parse_kernel(toks[1], lineno, false, &l.kernel, nullptr);
        } else if (toks[0] == "spp") {
            l.kind = LayerKind::spp;
            if (toks.size() < 2) throw ParseError(lineno, "spp needs a scale count");
            l.scales = dsl_detail::parse_int(toks[1], lineno, "spp scales");
        } else if (toks[0] == "gap") {
            l.kind = LayerKind::gap;
            if (toks.size() < 2) throw ParseError(lineno, "gap needs a grid size");
            l.grid = dsl_detail::parse_int(toks[1], lineno, "gap grid");
        } else if (toks[0] == "fc" || toks[0] == "classifier") {
            l.kind = toks[0] == "fc" ? LayerKind::fc : LayerKind::classifier;
            if (toks.size() < 2) throw ParseError(lineno, toks[0] + " needs a feature count");
            l.features = dsl_detail::parse_int(toks[1], lineno, "feature count");
            if (l.kind == LayerKind::classifier) l.use_relu = false;
        } else {
            throw ParseError(lineno, "unknown layer kind '" + toks[0] + "'");
        }

        bool skip = false;
        for (; arg < toks.size(); ++arg) {
            const std::string& t = toks[arg];
            if (t == "bn") {
                l.use_bn = true;
            } else if (t == "nobias") {
                l.use_bias = false;
            } else if (t == "norelu") {
                l.use_relu = false;
            } else if (t == "cat") {
                l.concat_inputs = true;
            } else if (t == "skip") {
                if (l.kind != LayerKind::conv)
                    throw ParseError(lineno, "'skip' applies only to conv layers");
                skip = true;
            } else if (t.rfind("s=", 0) == 0) {
                l.stride = dsl_detail::parse_int(t.substr(2), lineno, "stride");
            } else if (t.rfind("p=", 0) == 0) {
                l.pad = dsl_detail::parse_int(t.substr(2), lineno, "padding");
            } else if (t.rfind("from=", 0) == 0) {
                std::istringstream fs(t.substr(5));
                std::string id;
                while (std::getline(fs, id, ',')) {
                    if (id == "in") {
                        l.inputs.push_back(-1);
                    } else {
                        const int v = dsl_detail::parse_int(id, lineno, "from id");
                        if (v < 0 || v >= static_cast<int>(g.layers.size()))
                            throw ParseError(lineno, "from id " + id +
                                                         " does not name an earlier layer");
                        l.inputs.push_back(v);
                    }
                }
                if (l.inputs.empty()) throw ParseError(lineno, "empty from= list");
            } else {
                throw ParseError(lineno, "unknown attribute '" + t + "'");
            }
        }

        if (skip) skip_from.push_back(static_cast<int>(g.layers.size()));
        g.layers.push_back(l);
        saw_layer = true;
    }

    // Resolve skip shorthand: layer i's own input joins layer i+2's inputs.
    for (int i : skip_from) {
        const int target = i + 2;
        if (target >= static_cast<int>(g.layers.size()))
            throw ParseError(0, "skip on layer " + std::to_string(i) +
                                    " has no layer two positions later");
        const int carried = resolved_inputs(g, i)[0];
        LayerSpec& t = g.layers[static_cast<size_t>(target)];
        if (t.inputs.empty()) t.inputs = resolved_inputs(g, target);
        t.inputs.push_back(carried);
    }

    validate_graph(g);
    return g;
}

// Canonical text form; decode(encode(g)) == g. Skip shorthand is not
// reconstructed — resolved `from` lists are written out instead.
inline std::string encode_arch(const ArchGraph& g) {
    std::ostringstream os;
    if (g.input_channels != 3) os << "input " << g.input_channels << "\n";
    for (const LayerSpec& l : g.layers) {
        os << kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::conv:
            case LayerKind::sepconv:
                os << " " << l.kernel << "x" << l.kernel << "-" << l.features;
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool:
                os << " " << l.kernel << "x" << l.kernel;
                break;
            case LayerKind::spp:
                os << " " << l.scales;
                break;
            case LayerKind::gap:
                os << " " << l.grid;
                break;
            case LayerKind::fc:
            case LayerKind::classifier:
                os << " " << l.features;
                break;
        }
        if (l.stride != 1) os << " s=" << l.stride;
        if (l.pad != 0) os << " p=" << l.pad;
        if (l.use_bn) os << " bn";
        if (!l.use_bias) os << " nobias";
        if (!l.use_relu && l.kind != LayerKind::classifier) os << " norelu";
        if (!l.inputs.empty()) {
            os << " from=";
            for (size_t i = 0; i < l.inputs.size(); ++i) {
                if (i) os << ",";
                if (l.inputs[i] < 0)
                    os << "in";
                else
                    os << l.inputs[i];
            }
        }
        if (l.concat_inputs) os << " cat";
        os << "\n";
    }
    return os.str();
}

}  // namespace cdnas

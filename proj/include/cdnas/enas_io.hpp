#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "cdnas/enas.hpp"
#include "cdnas/serialize.hpp"

namespace cdnas {

// Weight-sharing search state on disk: the policy network plus the shared
// parameter bank, enough to derive architectures in a separate process.
// Optimizer state is not persisted; deriving only evaluates.

namespace ser_detail {
constexpr char kEnasMagic[8] = {'C', 'D', 'N', 'A', 'S', 'E', 'N', 'A'};
}

struct EnasState {
    EnasSpace space;
    Controller controller;
    EnasBank bank;
};

inline void save_enas_state(const std::string& path, Controller& ctrl, EnasBank& bank) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "search state: cannot write " + path);
    out.write(ser_detail::kEnasMagic, sizeof(ser_detail::kEnasMagic));
    ser_detail::write_pod<uint32_t>(out, 1);

    const EnasSpace& sp = bank.space();
    ser_detail::write_pod<int32_t>(out, sp.nodes);
    ser_detail::write_pod<int32_t>(out, sp.search_features);
    ser_detail::write_pod<int32_t>(out, sp.num_classes);
    ser_detail::write_pod<int32_t>(out, sp.input_channels);
    ser_detail::write_pod<uint32_t>(out, static_cast<uint32_t>(sp.final_features.size()));
    for (int f : sp.final_features) ser_detail::write_pod<int32_t>(out, f);

    ser_detail::write_pod<int32_t>(out, ctrl.nodes());
    ser_detail::write_pod<int32_t>(out, ctrl.hidden());
    ser_detail::write_pod<int32_t>(out, ctrl.embed());
    for (auto& [param, grad] : ctrl.param_grad_pairs())
        ser_detail::write_tensor(out, param->value);

    ser_detail::write_pod<uint64_t>(out, bank.seed());
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op)
            ser_detail::write_layer(out, bank.node_entry(node, op));
    ser_detail::write_layer(out, bank.classifier_entry());
    require(out.good(), "search state: write failed for " + path);
}

inline EnasState load_enas_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "search state: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.good() && std::memcmp(magic, ser_detail::kEnasMagic, sizeof(magic)) == 0,
            "search state: bad magic in " + path);
    require(ser_detail::read_pod<uint32_t>(in, path) == 1,
            "search state: unsupported version in " + path);

    EnasSpace sp;
    sp.nodes = ser_detail::read_pod<int32_t>(in, path);
    sp.search_features = ser_detail::read_pod<int32_t>(in, path);
    sp.num_classes = ser_detail::read_pod<int32_t>(in, path);
    sp.input_channels = ser_detail::read_pod<int32_t>(in, path);
    const uint32_t nf = ser_detail::read_pod<uint32_t>(in, path);
    require(nf < 64, "search state: implausible final ladder in " + path);
    sp.final_features.clear();
    for (uint32_t i = 0; i < nf; ++i)
        sp.final_features.push_back(ser_detail::read_pod<int32_t>(in, path));

    const int nodes = ser_detail::read_pod<int32_t>(in, path);
    const int hidden = ser_detail::read_pod<int32_t>(in, path);
    const int embed = ser_detail::read_pod<int32_t>(in, path);
    require(nodes == sp.nodes, "search state: controller/space node mismatch in " + path);
    require(hidden > 0 && hidden <= 4096 && embed > 0 && embed <= 4096,
            "search state: implausible controller size in " + path);
    Rng scratch(0);
    EnasState st{sp, Controller(nodes, hidden, embed, scratch),
                 EnasBank(sp, 0) /* seed replaced below */};
    for (auto& [param, grad] : st.controller.param_grad_pairs()) {
        Tensor t = ser_detail::read_tensor(in, path);
        require(t.shape == param->value.shape,
                "search state: controller tensor shape mismatch in " + path);
        param->value = std::move(t);
    }

    const uint64_t bank_seed = ser_detail::read_pod<uint64_t>(in, path);
    st.bank = EnasBank(sp, bank_seed);
    for (int node = 0; node < sp.nodes; ++node)
        for (int op = 0; op < kEnasNumOps; ++op) {
            LayerParams loaded = ser_detail::read_layer(in, path);
            LayerParams& entry = st.bank.node_entry(node, op);
            require(loaded.weights.value.shape == entry.weights.value.shape,
                    "search state: bank entry shape mismatch in " + path);
            entry = std::move(loaded);
        }
    st.bank.classifier_entry() = ser_detail::read_layer(in, path);
    return st;
}

}  // namespace cdnas

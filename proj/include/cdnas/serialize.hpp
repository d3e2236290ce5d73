#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cdnas/arch_dsl.hpp"
#include "cdnas/network.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

// Binary checkpoints. A file is self-describing: it carries the architecture
// text and input size, so loading needs no external context. Saved state
// covers weights and batchnorm running statistics (what inference needs);
// optimizer state is deliberately not persisted.

namespace ser_detail {

constexpr char kMagic[8] = {'C', 'D', 'N', 'A', 'S', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(in.good(), "checkpoint: truncated file " + path);
    return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& path) {
    const uint64_t n = read_pod<uint64_t>(in, path);
    require(n < (1u << 24), "checkpoint: implausible string length in " + path);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    require(in.good(), "checkpoint: truncated file " + path);
    return s;
}

inline void write_tensor(std::ostream& out, const Tensor& t) {
    write_pod<uint8_t>(out, t.empty() ? 0 : 1);
    if (t.empty()) return;
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) write_pod<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(float))));
}

inline Tensor read_tensor(std::istream& in, const std::string& path) {
    if (read_pod<uint8_t>(in, path) == 0) return {};
    const uint32_t ndim = read_pod<uint32_t>(in, path);
    require(ndim >= 1 && ndim <= 8, "checkpoint: implausible tensor rank in " + path);
    std::vector<int> shape;
    for (uint32_t i = 0; i < ndim; ++i) {
        const int64_t d = read_pod<int64_t>(in, path);
        require(d > 0 && d < (1 << 28), "checkpoint: implausible tensor dim in " + path);
        shape.push_back(static_cast<int>(d));
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(float))));
    require(in.good(), "checkpoint: truncated file " + path);
    return t;
}

inline void write_layer(std::ostream& out, const LayerParams& p) {
    write_tensor(out, p.weights.value);
    write_tensor(out, p.pointwise.value);
    write_tensor(out, p.bias.value);
    write_tensor(out, p.bn_gamma.value);
    write_tensor(out, p.bn_beta.value);
    write_tensor(out, p.bn_running_mean);
    write_tensor(out, p.bn_running_var);
}

inline LayerParams read_layer(std::istream& in, const std::string& path) {
    LayerParams p;
    p.weights.value = read_tensor(in, path);
    p.pointwise.value = read_tensor(in, path);
    p.bias.value = read_tensor(in, path);
    p.bn_gamma.value = read_tensor(in, path);
    p.bn_beta.value = read_tensor(in, path);
    p.bn_running_mean = read_tensor(in, path);
    p.bn_running_var = read_tensor(in, path);
    return p;
}

}  // namespace ser_detail

struct Checkpoint {
    std::string arch_text;
    int in_h = 0, in_w = 0;
    std::vector<LayerParams> layers;
    std::vector<std::vector<LayerParams>> projections;
};

inline void save_checkpoint(const std::string& path, Network& net, int in_h, int in_w) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "checkpoint: cannot write " + path);
    out.write(ser_detail::kMagic, sizeof(ser_detail::kMagic));
    ser_detail::write_pod<uint32_t>(out, ser_detail::kVersion);
    ser_detail::write_string(out, encode_arch(net.graph()));
    ser_detail::write_pod<int32_t>(out, in_h);
    ser_detail::write_pod<int32_t>(out, in_w);
    const auto& layers = net.layer_params();
    ser_detail::write_pod<uint32_t>(out, static_cast<uint32_t>(layers.size()));
    for (const LayerParams& p : layers) ser_detail::write_layer(out, p);
    const auto& projs = net.projection_params();
    ser_detail::write_pod<uint32_t>(out, static_cast<uint32_t>(projs.size()));
    for (const auto& group : projs) {
        ser_detail::write_pod<uint32_t>(out, static_cast<uint32_t>(group.size()));
        for (const LayerParams& p : group) ser_detail::write_layer(out, p);
    }
    require(out.good(), "checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    require(in.good() && std::memcmp(magic, ser_detail::kMagic, sizeof(magic)) == 0,
            "checkpoint: bad magic in " + path);
    const uint32_t version = ser_detail::read_pod<uint32_t>(in, path);
    require(version == ser_detail::kVersion,
            "checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    Checkpoint ck;
    ck.arch_text = ser_detail::read_string(in, path);
    ck.in_h = ser_detail::read_pod<int32_t>(in, path);
    ck.in_w = ser_detail::read_pod<int32_t>(in, path);
    const uint32_t n_layers = ser_detail::read_pod<uint32_t>(in, path);
    require(n_layers < (1u << 16), "checkpoint: implausible layer count in " + path);
    for (uint32_t i = 0; i < n_layers; ++i)
        ck.layers.push_back(ser_detail::read_layer(in, path));
    const uint32_t n_groups = ser_detail::read_pod<uint32_t>(in, path);
    require(n_groups < (1u << 16), "checkpoint: implausible projection count in " + path);
    for (uint32_t g = 0; g < n_groups; ++g) {
        std::vector<LayerParams> group;
        const uint32_t n = ser_detail::read_pod<uint32_t>(in, path);
        require(n < (1u << 16), "checkpoint: implausible projection group in " + path);
        for (uint32_t i = 0; i < n; ++i) group.push_back(ser_detail::read_layer(in, path));
        ck.projections.push_back(std::move(group));
    }
    return ck;
}

namespace ser_detail {

inline void restore_layer(LayerParams& dst, const LayerParams& src, const std::string& what) {
    auto check = [&](const Tensor& incoming, const Tensor& existing, const char* field) {
        require(incoming.shape == existing.shape,
                "checkpoint: shape mismatch at " + what + " " + field);
    };
    check(src.weights.value, dst.weights.value, "weights");
    check(src.pointwise.value, dst.pointwise.value, "pointwise");
    check(src.bias.value, dst.bias.value, "bias");
    check(src.bn_gamma.value, dst.bn_gamma.value, "bn_gamma");
    check(src.bn_beta.value, dst.bn_beta.value, "bn_beta");
    check(src.bn_running_mean, dst.bn_running_mean, "bn_running_mean");
    check(src.bn_running_var, dst.bn_running_var, "bn_running_var");
    dst.weights.value = src.weights.value;
    dst.pointwise.value = src.pointwise.value;
    dst.bias.value = src.bias.value;
    dst.bn_gamma.value = src.bn_gamma.value;
    dst.bn_beta.value = src.bn_beta.value;
    dst.bn_running_mean = src.bn_running_mean;
    dst.bn_running_var = src.bn_running_var;
}

}  // namespace ser_detail

// Rebuilds the network a checkpoint came from and installs its state.
inline Network restore_network(const Checkpoint& ck) {
    Rng rng(0);  // initial weights are immediately overwritten
    Network net(decode_arch(ck.arch_text), ck.in_h, ck.in_w, rng);
    require(net.layer_params().size() == ck.layers.size(),
            "checkpoint: layer count mismatch against architecture text");
    for (size_t i = 0; i < ck.layers.size(); ++i)
        ser_detail::restore_layer(net.layer_params()[i], ck.layers[i],
                                  "layer " + std::to_string(i));
    require(net.projection_params().size() == ck.projections.size(),
            "checkpoint: projection group count mismatch");
    for (size_t g = 0; g < ck.projections.size(); ++g) {
        require(net.projection_params()[g].size() == ck.projections[g].size(),
                "checkpoint: projection count mismatch in group " + std::to_string(g));
        for (size_t i = 0; i < ck.projections[g].size(); ++i)
            ser_detail::restore_layer(net.projection_params()[g][i], ck.projections[g][i],
                                      "projection " + std::to_string(g) + "/" +
                                          std::to_string(i));
    }
    return net;
}

}  // namespace cdnas

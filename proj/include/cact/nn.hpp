#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cact/common.hpp"
#include "cact/graph.hpp"
#include "cact/tensor.hpp"

#include "json.hpp"

namespace cact {

enum class Init { Projection, Zeros, Ones, Embedding };

template <typename T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
};

// Named learnable arrays with matching gradient accumulators. Each parameter
// is initialized from an RNG stream derived from (seed, name), so two models
// sharing a parameter name initialize it identically no matter which other
// parameters exist.
template <typename T>
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Param<T>& add(const std::string& name, std::size_t rows, std::size_t cols, Init kind) {
        if (params_.count(name)) throw ValidationError("parameter exists: " + name);
        Param<T> p;
        p.value = Tensor<T>(rows, cols);
        p.grad = Tensor<T>(rows, cols);
        Rng rng(mix_seed(seed_, "init/" + name));
        switch (kind) {
            case Init::Zeros:
                break;
            case Init::Ones:
                p.value.fill(T(1));
                break;
            case Init::Projection: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
                for (std::size_t i = 0; i < p.value.size(); ++i)
                    p.value[i] = static_cast<T>(rng.uniform(-bound, bound));
                break;
            }
            case Init::Embedding:
                for (std::size_t i = 0; i < p.value.size(); ++i)
                    p.value[i] = static_cast<T>(rng.normal() * 0.02);
                break;
        }
        return params_.emplace(name, std::move(p)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Param<T>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    const Param<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }

    void set_trainable(const std::string& name, bool t) { at(name).trainable = t; }

    void zero_grads() {
        for (auto& [name, p] : params_) p.grad.fill(T(0));
    }

    std::size_t count_values() const {
        std::size_t n = 0;
        for (const auto& [name, p] : params_) n += p.value.size();
        return n;
    }

    // Ordered by name; iteration order is part of the checkpoint contract.
    std::map<std::string, Param<T>>& all() { return params_; }
    const std::map<std::string, Param<T>>& all() const { return params_; }

private:
    std::uint64_t seed_;
    std::map<std::string, Param<T>> params_;
};

// Binds store parameters into a tape, one leaf per parameter, created on
// first use. flush_grads copies tape gradients back into the store.
template <typename T>
class BoundParams {
public:
    BoundParams(Tape<T>& tape, ParameterStore<T>& store) : tape_(&tape), store_(&store) {}

    VarId operator()(const std::string& name) {
        auto it = ids_.find(name);
        if (it != ids_.end()) return it->second;
        VarId id = tape_->leaf(store_->at(name).value);
        ids_.emplace(name, id);
        return id;
    }

    // Binds an existing tape var as a parameter's node (used by the
    // finite-difference harness to route its own leaves through a model).
    void adopt(const std::string& name, VarId id) { ids_[name] = id; }

    void flush_grads() {
        for (const auto& [name, id] : ids_) {
            if (!tape_->has_grad(id)) continue;
            const Tensor<T>& g = tape_->grad(id);
            Tensor<T>& acc = store_->at(name).grad;
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
    }

    Tape<T>& tape() { return *tape_; }

private:
    Tape<T>* tape_;
    ParameterStore<T>* store_;
    std::unordered_map<std::string, VarId> ids_;
};

// ---- layer helpers --------------------------------------------------------

template <typename T>
void add_linear_params(ParameterStore<T>& s, const std::string& prefix, std::size_t in, std::size_t out) {
    s.add(prefix + ".w", in, out, Init::Projection);
    s.add(prefix + ".b", 1, out, Init::Zeros);
}

template <typename T>
VarId linear(BoundParams<T>& p, const std::string& prefix, VarId x) {
    return p.tape().linear(x, p(prefix + ".w"), p(prefix + ".b"));
}

template <typename T>
void add_layer_norm_params(ParameterStore<T>& s, const std::string& prefix, std::size_t dim) {
    s.add(prefix + ".g", 1, dim, Init::Ones);
    s.add(prefix + ".b", 1, dim, Init::Zeros);
}

template <typename T>
VarId layer_norm(BoundParams<T>& p, const std::string& prefix, VarId x) {
    return p.tape().layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
}

template <typename T>
void add_mha_params(ParameterStore<T>& s, const std::string& prefix, std::size_t dim) {
    add_linear_params(s, prefix + ".q", dim, dim);
    // no key bias: softmax is invariant to it, so it would never train
    s.add(prefix + ".k.w", dim, dim, Init::Projection);
    add_linear_params(s, prefix + ".v", dim, dim);
    add_linear_params(s, prefix + ".o", dim, dim);
}

// Projections + scaled dot-product attention + output projection.
template <typename T>
VarId multi_head_attention(BoundParams<T>& p, const std::string& prefix, VarId q_src, VarId kv_src,
                           std::size_t heads, bool causal) {
    Tape<T>& t = p.tape();
    VarId q = linear(p, prefix + ".q", q_src);
    VarId k = t.matmul(kv_src, p(prefix + ".k.w"));
    VarId v = linear(p, prefix + ".v", kv_src);
    VarId att = t.attention(q, k, v, heads, causal);
    return linear(p, prefix + ".o", att);
}

template <typename T>
void add_ffn_params(ParameterStore<T>& s, const std::string& prefix, std::size_t dim, std::size_t hidden) {
    add_linear_params(s, prefix + ".in", dim, hidden);
    add_linear_params(s, prefix + ".out", hidden, dim);
}

template <typename T>
VarId feed_forward(BoundParams<T>& p, const std::string& prefix, VarId x) {
    return linear(p, prefix + ".out", p.tape().relu(linear(p, prefix + ".in", x)));
}

template <typename T>
void add_encoder_block_params(ParameterStore<T>& s, const std::string& prefix, std::size_t dim,
                              std::size_t hidden) {
    add_layer_norm_params(s, prefix + ".ln1", dim);
    add_mha_params(s, prefix + ".attn", dim);
    add_layer_norm_params(s, prefix + ".ln2", dim);
    add_ffn_params(s, prefix + ".ffn", dim, hidden);
}

// Pre-norm block: with zero-initialized output projections the block is the
// identity, which several invariants rely on.
template <typename T>
VarId encoder_block(BoundParams<T>& p, const std::string& prefix, VarId x, std::size_t heads,
                    double drop_p, Rng* attn_rng, Rng* ffn_rng) {
    Tape<T>& t = p.tape();
    VarId n1 = layer_norm(p, prefix + ".ln1", x);
    VarId a = multi_head_attention(p, prefix + ".attn", n1, n1, heads, false);
    VarId h = t.add(x, t.dropout(a, drop_p, attn_rng));
    VarId n2 = layer_norm(p, prefix + ".ln2", h);
    VarId f = feed_forward(p, prefix + ".ffn", n2);
    return t.add(h, t.dropout(f, drop_p, ffn_rng));
}

template <typename T>
void add_decoder_block_params(ParameterStore<T>& s, const std::string& prefix, std::size_t dim,
                              std::size_t hidden) {
    add_layer_norm_params(s, prefix + ".ln1", dim);
    add_mha_params(s, prefix + ".self", dim);
    add_layer_norm_params(s, prefix + ".ln2", dim);
    add_mha_params(s, prefix + ".cross", dim);
    add_layer_norm_params(s, prefix + ".ln3", dim);
    add_ffn_params(s, prefix + ".ffn", dim, hidden);
}

template <typename T>
VarId decoder_block(BoundParams<T>& p, const std::string& prefix, VarId d, VarId memory,
                    std::size_t heads, double drop_p, Rng* r1, Rng* r2, Rng* r3) {
    Tape<T>& t = p.tape();
    VarId n1 = layer_norm(p, prefix + ".ln1", d);
    VarId a = multi_head_attention(p, prefix + ".self", n1, n1, heads, true);
    d = t.add(d, t.dropout(a, drop_p, r1));
    VarId n2 = layer_norm(p, prefix + ".ln2", d);
    VarId c = multi_head_attention(p, prefix + ".cross", n2, memory, heads, false);
    d = t.add(d, t.dropout(c, drop_p, r2));
    VarId n3 = layer_norm(p, prefix + ".ln3", d);
    VarId f = feed_forward(p, prefix + ".ffn", n3);
    return t.add(d, t.dropout(f, drop_p, r3));
}

// ---- positional embeddings ------------------------------------------------

// Fixed 2D sinusoidal embeddings over an hp x wp grid: the first dim/2
// channels encode the row coordinate, the rest the column coordinate.
// Token order is row-major over the grid.
template <typename T>
Tensor<T> sinusoidal_2d(std::size_t hp, std::size_t wp, std::size_t dim) {
    if (dim % 2 != 0) throw ValidationError("sinusoidal_2d: embedding dim must be even");
    const std::size_t half = dim / 2;
    auto fill_axis = [&](Tensor<T>& out, std::size_t row, std::size_t offset, double pos) {
        for (std::size_t i = 0; i < half; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
            out(row, offset + i) = static_cast<T>(std::sin(pos * freq));
            if (i + 1 < half) out(row, offset + i + 1) = static_cast<T>(std::cos(pos * freq));
        }
    };
    Tensor<T> out(hp * wp, dim);
    for (std::size_t r = 0; r < hp; ++r)
        for (std::size_t c = 0; c < wp; ++c) {
            const std::size_t row = r * wp + c;
            fill_axis(out, row, 0, static_cast<double>(r));
            fill_axis(out, row, half, static_cast<double>(c));
        }
    return out;
}

// ---- checkpoint I/O -------------------------------------------------------

// Layout: magic, json manifest (names/shapes/dtype/trainable), then raw
// little-endian scalar payload in manifest order. Roundtrip is bit-exact.
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'C', 'T', 'K', 'P', 'T', '1'};

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path) {
    nlohmann::json manifest;
    manifest["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
    manifest["params"] = nlohmann::json::array();
    for (const auto& [name, p] : store.all())
        manifest["params"].push_back({{"name", name},
                                      {"rows", p.value.rows()},
                                      {"cols", p.value.cols()},
                                      {"trainable", p.trainable}});
    const std::string header = manifest.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kCheckpointMagic, 8);
    const std::uint64_t len = header.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, p] : store.all())
        f.write(reinterpret_cast<const char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(T)));
    if (!f) throw IoError("short write: " + path);
}

// Loads values into an existing store; names and shapes must match exactly.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    f.read(header.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError("truncated checkpoint header: " + path);
    nlohmann::json manifest = nlohmann::json::parse(header);
    const std::string want = sizeof(T) == 4 ? "f32" : "f64";
    if (manifest.at("dtype").get<std::string>() != want)
        throw IoError("checkpoint dtype mismatch: " + path);
    std::size_t seen = 0;
    for (const auto& entry : manifest.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        if (!store.has(name)) throw IoError("checkpoint has unknown parameter: " + name);
        Param<T>& p = store.at(name);
        if (p.value.rows() != entry.at("rows").get<std::size_t>() ||
            p.value.cols() != entry.at("cols").get<std::size_t>())
            throw IoError("checkpoint shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(p.value.data()),
               static_cast<std::streamsize>(p.value.size() * sizeof(T)));
        if (!f) throw IoError("truncated checkpoint payload: " + path);
        p.trainable = entry.at("trainable").get<bool>();
        ++seen;
    }
    if (seen != store.all().size()) throw IoError("checkpoint parameter set mismatch: " + path);
}

}  // namespace cact

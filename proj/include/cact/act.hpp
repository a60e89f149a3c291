#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "cact/common.hpp"
#include "cact/concept_data.hpp"
#include "cact/graph.hpp"
#include "cact/nn.hpp"
#include "cact/tensor.hpp"

namespace cact {

enum class Method { Act, ConceptActTransformer, ConceptActHeads };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::Act: return "act";
        case Method::ConceptActTransformer: return "conceptact_transformer";
        case Method::ConceptActHeads: return "conceptact_heads";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "act") return Method::Act;
    if (s == "conceptact_transformer") return Method::ConceptActTransformer;
    if (s == "conceptact_heads") return Method::ConceptActHeads;
    throw ConfigError("unknown method: " + s);
}

struct ActConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 1;
    std::size_t vae_layers = 1;
    std::size_t chunk = 20;
    std::size_t latent = 8;
    std::size_t patch = 8;
    std::size_t ffn_mult = 4;
    std::size_t concept_hidden = 32;
    double dropout = 0.1;
    double heads_dropout = 0.2;
    std::size_t cameras = 2;
    std::size_t image_size = 32;
    std::size_t d_s = 4;
    std::size_t d_a = 4;
    Method method = Method::Act;

    std::size_t grid() const { return image_size / patch; }
    std::size_t patches_per_camera() const { return grid() * grid(); }
    std::size_t seq_len() const { return 2 + cameras * patches_per_camera(); }

    void validate() const {
        if (dim == 0 || dim % heads != 0) throw ConfigError("model dim must be divisible by heads");
        if (dim % 2 != 0) throw ConfigError("model dim must be even for 2D positions");
        if (chunk < 1) throw ConfigError("chunk size must be >= 1");
        if (latent < 1) throw ConfigError("latent dim must be >= 1");
        if (cameras > 0 && image_size % patch != 0)
            throw ConfigError("image size " + std::to_string(image_size) +
                              " not divisible by patch " + std::to_string(patch));
        if (method == Method::ConceptActTransformer && encoder_layers < 1)
            throw ConfigError("conceptact_transformer needs at least one encoder layer");
    }
};

// Label-smoothed target: (1 - eps + eps/n) at the hot index, eps/n elsewhere.
// The off value is snapped to a multiple of 2^-26 so the entries sum to
// exactly 1.0 in double under any summation order.
template <typename T>
Tensor<T> smoothed_targets(const std::vector<std::uint8_t>& onehot, double eps) {
    if (eps < 0.0 || eps >= 1.0) throw ValidationError("label smoothing must be in [0,1)");
    const std::size_t n = onehot.size();
    std::size_t hot = n, ones = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (onehot[i] == 1) {
            hot = i;
            ++ones;
        } else if (onehot[i] != 0) {
            throw ValidationError("smoothed_targets: input is not one-hot");
        }
    if (ones != 1) throw ValidationError("smoothed_targets: input is not one-hot");
    constexpr double grid = 67108864.0;  // 2^26
    const double off = std::round(eps / static_cast<double>(n) * grid) / grid;
    Tensor<T> q(1, n);
    for (std::size_t i = 0; i < n; ++i) q[i] = static_cast<T>(off);
    q[hot] = static_cast<T>(1.0 - static_cast<double>(n - 1) * off);
    return q;
}

// Splits an H x W x 3 byte frame into non-overlapping patches, row-major over
// the patch grid; each row is the patch's pixels (row, col, channel order)
// scaled to [0, 1].
template <typename T>
Tensor<T> patchify(const std::uint8_t* frame, std::size_t image_size, std::size_t patch) {
    if (patch == 0 || image_size % patch != 0)
        throw ValidationError("patchify: image not divisible by patch size");
    const std::size_t g = image_size / patch;
    Tensor<T> out(g * g, patch * patch * 3);
    for (std::size_t pr = 0; pr < g; ++pr)
        for (std::size_t pc = 0; pc < g; ++pc) {
            const std::size_t row = pr * g + pc;
            std::size_t col = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x) {
                    const std::size_t base = ((pr * patch + y) * image_size + pc * patch + x) * 3;
                    out(row, col++) = static_cast<T>(frame[base]) / T(255);
                    out(row, col++) = static_cast<T>(frame[base + 1]) / T(255);
                    out(row, col++) = static_cast<T>(frame[base + 2]) / T(255);
                }
        }
    return out;
}

// Per-call RNG streams for dropout and noise, derived from (seed, site,
// step, sample). Sites that exist in two model variants draw identical
// masks, so removing a layer never shifts any other site's stream.
struct StepRngs {
    std::uint64_t seed = 0;
    long step = 0;
    int sample = 0;
    bool train = false;

    Rng make(const std::string& site) const {
        return Rng(mix_seed(mix_seed(seed, site),
                            static_cast<std::uint64_t>(step) * 8191 + static_cast<std::uint64_t>(sample)));
    }
};

template <typename T>
struct SampleInput {
    Tensor<T> proprio;                // 1 x d_s
    std::vector<Tensor<T>> patches;   // per camera: P x (3 * patch^2)
    Tensor<T> target_chunk;           // k x d_a (zero-padded)
    Tensor<T> chunk_mask;             // k x 1, 1 on valid rows
    Tensor<T> eta;                    // 1 x latent, posterior noise
    const EpisodeAnnotation* annotation = nullptr;
};

template <typename T>
struct ForwardOutput {
    VarId actions{};      // k x d_a
    VarId l1{};
    VarId kl{};
    VarId concept_ce{};   // valid when has_concept
    bool has_losses = false;
    bool has_concept = false;
    // (class name, alpha VarId): alpha is S x |T_j|, rows softmax-normalized
    std::vector<std::pair<std::string, VarId>> attention;
    // (class name, pooled VarId): 1 x |T_j|
    std::vector<std::pair<std::string, VarId>> pooled;
};

// ACT policy with optional concept integration. The transformer variant
// swaps the final encoder block for the class-aware concept layer; the heads
// variant adds per-class readout MLPs on an unchanged encoder.
template <typename T>
class ActModel {
public:
    ActModel(ActConfig cfg, ConceptSchema schema, std::uint64_t seed)
        : cfg_(cfg), schema_(std::move(schema)), store_(seed) {
        cfg_.validate();
        if (cfg_.method != Method::Act) schema_.validate();
        build_params();
        if (cfg_.cameras > 0)
            pos2d_ = sinusoidal_2d<T>(cfg_.grid(), cfg_.grid(), cfg_.dim);
    }

    const ActConfig& config() const { return cfg_; }
    const ConceptSchema& schema() const { return schema_; }
    ParameterStore<T>& store() { return store_; }
    const ParameterStore<T>& store() const { return store_; }

    std::size_t standard_encoder_layers() const {
        return cfg_.method == Method::ConceptActTransformer ? cfg_.encoder_layers - 1
                                                            : cfg_.encoder_layers;
    }

    // Fixes the concept projection to select the residual slice (Y == X) and
    // freezes it; used by the ACT-equivalence construction.
    void freeze_concept_projection_to_identity() {
        if (cfg_.method != Method::ConceptActTransformer)
            throw ValidationError("identity projection requires the transformer variant");
        Param<T>& w = store_.at("concept.proj.w");
        w.value.fill(T(0));
        for (std::size_t i = 0; i < cfg_.dim; ++i) w.value(i, i) = T(1);
        w.trainable = false;
        Param<T>& b = store_.at("concept.proj.b");
        b.value.fill(T(0));
        b.trainable = false;
    }

    // Training-path forward for one sample: posterior, reparameterized z,
    // encoder (+ concept layer), decoder, losses.
    ForwardOutput<T> forward_train(BoundParams<T>& bp, const SampleInput<T>& in,
                                   const StepRngs& rngs, double label_smoothing,
                                   bool want_concept_loss) {
        Tape<T>& t = bp.tape();
        // posterior over z from proprio + action chunk
        VarId s_tok = linear(bp, "vae.sproj", t.constant(in.proprio));
        VarId a_tok = linear(bp, "vae.aproj", t.constant(in.target_chunk));
        VarId seq = t.concat_rows({bp("vae.readout"), s_tok, a_tok});
        seq = t.add(seq, bp("vae.pos"));
        for (std::size_t i = 0; i < cfg_.vae_layers; ++i)
            seq = block(bp, "vae.block" + std::to_string(i), seq, rngs);
        VarId readout = t.slice_rows(seq, 0, 1);
        VarId mu = linear(bp, "vae.mu", readout);
        VarId logvar = linear(bp, "vae.logvar", readout);
        VarId z = t.reparameterize(mu, logvar, t.constant(in.eta));

        ForwardOutput<T> out = decode_from(bp, z, in.proprio, in.patches, rngs);
        out.l1 = t.masked_l1(out.actions, t.constant(in.target_chunk), t.constant(in.chunk_mask));
        out.kl = t.kl_normal(mu, logvar);
        out.has_losses = true;
        if (want_concept_loss && cfg_.method != Method::Act) {
            if (in.annotation == nullptr)
                throw ValidationError("concept loss requested without an annotation");
            out.concept_ce = concept_loss(bp, out, *in.annotation, label_smoothing);
            out.has_concept = true;
        }
        return out;
    }

    // Inference path: z = 0, evaluation mode, no annotation anywhere.
    ForwardOutput<T> forward_infer(BoundParams<T>& bp, const Tensor<T>& proprio,
                                   const std::vector<Tensor<T>>& patches) {
        Tape<T>& t = bp.tape();
        StepRngs eval_rngs;  // train == false: dropout inactive
        VarId z = t.constant(Tensor<T>(1, cfg_.latent));
        return decode_from(bp, z, proprio, patches, eval_rngs);
    }

private:
    ActConfig cfg_;
    ConceptSchema schema_;
    ParameterStore<T> store_;
    Tensor<T> pos2d_;

    void build_params() {
        const std::size_t d = cfg_.dim, hidden = cfg_.dim * cfg_.ffn_mult;
        add_linear_params(store_, "vae.sproj", cfg_.d_s, d);
        add_linear_params(store_, "vae.aproj", cfg_.d_a, d);
        store_.add("vae.readout", 1, d, Init::Embedding);
        store_.add("vae.pos", 2 + cfg_.chunk, d, Init::Embedding);
        for (std::size_t i = 0; i < cfg_.vae_layers; ++i)
            add_encoder_block_params(store_, "vae.block" + std::to_string(i), d, hidden);
        add_linear_params(store_, "vae.mu", d, cfg_.latent);
        add_linear_params(store_, "vae.logvar", d, cfg_.latent);

        add_linear_params(store_, "enc.zproj", cfg_.latent, d);
        add_linear_params(store_, "enc.sproj", cfg_.d_s, d);
        if (cfg_.cameras > 0)
            add_linear_params(store_, "enc.patch", cfg_.patch * cfg_.patch * 3, d);
        store_.add("enc.pos", 2, d, Init::Embedding);
        for (std::size_t i = 0; i < standard_encoder_layers(); ++i)
            add_encoder_block_params(store_, "enc.block" + std::to_string(i), d, hidden);

        if (cfg_.method == Method::ConceptActTransformer) {
            const std::size_t K = schema_.class_count();
            for (std::size_t j = 0; j < K; ++j) {
                const std::string p = "concept.class" + std::to_string(j);
                store_.add(p + ".embed", schema_.classes[j].cardinality(), d, Init::Embedding);
                store_.add(p + ".wq", d, d, Init::Projection);
                store_.add(p + ".wk", d, d, Init::Projection);
                store_.add(p + ".wv", d, d, Init::Projection);
            }
            add_linear_params(store_, "concept.proj", (K + 1) * d, d);
        }
        if (cfg_.method == Method::ConceptActHeads) {
            for (std::size_t j = 0; j < schema_.class_count(); ++j) {
                const std::string p = "heads.class" + std::to_string(j);
                add_linear_params(store_, p + ".fc1", d, cfg_.concept_hidden);
                add_linear_params(store_, p + ".fc2", cfg_.concept_hidden,
                                  schema_.classes[j].cardinality());
            }
        }

        store_.add("dec.queries", cfg_.chunk, d, Init::Embedding);
        for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
            add_decoder_block_params(store_, "dec.block" + std::to_string(i), d, hidden);
        add_linear_params(store_, "action", d, cfg_.d_a);
    }

    VarId block(BoundParams<T>& bp, const std::string& prefix, VarId x, const StepRngs& rngs) {
        Rng r1 = rngs.make("drop/" + prefix + ".attn");
        Rng r2 = rngs.make("drop/" + prefix + ".ffn");
        return encoder_block(bp, prefix, x, cfg_.heads, cfg_.dropout, rngs.train ? &r1 : nullptr,
                             rngs.train ? &r2 : nullptr);
    }

    // Builds the multimodal token sequence, runs the encoder stack (with the
    // concept layer in final position for the transformer variant) and the
    // chunk decoder. Fills actions/attention/pooled.
    ForwardOutput<T> decode_from(BoundParams<T>& bp, VarId z, const Tensor<T>& proprio,
                                 const std::vector<Tensor<T>>& patches, const StepRngs& rngs) {
        Tape<T>& t = bp.tape();
        if (patches.size() != cfg_.cameras)
            throw ValidationError("expected " + std::to_string(cfg_.cameras) + " camera patch sets");
        VarId z_tok = linear(bp, "enc.zproj", z);
        VarId s_tok = linear(bp, "enc.sproj", t.constant(proprio));
        VarId nonvis = t.add(t.concat_rows({z_tok, s_tok}), bp("enc.pos"));
        std::vector<VarId> parts{nonvis};
        for (const Tensor<T>& cam : patches) {
            VarId tok = linear(bp, "enc.patch", t.constant(cam));
            parts.push_back(t.add(tok, t.constant(pos2d_)));
        }
        VarId x = parts.size() == 1 ? parts[0] : t.concat_rows(parts);

        for (std::size_t i = 0; i < standard_encoder_layers(); ++i)
            x = block(bp, "enc.block" + std::to_string(i), x, rngs);

        ForwardOutput<T> out;
        if (cfg_.method == Method::ConceptActTransformer) x = concept_layer(bp, x, out);

        VarId d = bp("dec.queries");
        for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) {
            const std::string p = "dec.block" + std::to_string(i);
            Rng r1 = rngs.make("drop/" + p + ".self");
            Rng r2 = rngs.make("drop/" + p + ".cross");
            Rng r3 = rngs.make("drop/" + p + ".ffn");
            d = decoder_block(bp, p, d, x, cfg_.heads, cfg_.dropout, rngs.train ? &r1 : nullptr,
                              rngs.train ? &r2 : nullptr, rngs.train ? &r3 : nullptr);
        }
        out.actions = linear(bp, "action", d);

        if (cfg_.method == Method::ConceptActHeads) heads_forward(bp, x, rngs, out);
        return out;
    }

    // Class-aware cross-attention: queries from the sequence, keys/values
    // from learnable per-class concept embeddings; outputs are concatenated
    // with the residual input and projected back to width d.
    VarId concept_layer(BoundParams<T>& bp, VarId x, ForwardOutput<T>& out) {
        Tape<T>& t = bp.tape();
        const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(cfg_.dim));
        std::vector<VarId> enhanced{x};
        for (std::size_t j = 0; j < schema_.class_count(); ++j) {
            const std::string p = "concept.class" + std::to_string(j);
            VarId q = t.matmul(x, bp(p + ".wq"));
            VarId k = t.matmul(bp(p + ".embed"), bp(p + ".wk"));
            VarId v = t.matmul(bp(p + ".embed"), bp(p + ".wv"));
            VarId alpha = t.softmax_rows(t.scale(t.matmul_nt(q, k), inv_sqrt_d));
            out.attention.emplace_back(schema_.classes[j].name, alpha);
            out.pooled.emplace_back(schema_.classes[j].name, t.mean_rows(alpha));
            enhanced.push_back(t.matmul(alpha, v));
        }
        return linear(bp, "concept.proj", t.concat_cols(enhanced));
    }

    // Per-class two-layer perceptrons on the encoder readout token.
    void heads_forward(BoundParams<T>& bp, VarId encoded, const StepRngs& rngs,
                       ForwardOutput<T>& out) {
        Tape<T>& t = bp.tape();
        VarId readout = t.slice_rows(encoded, 0, 1);
        for (std::size_t j = 0; j < schema_.class_count(); ++j) {
            const std::string p = "heads.class" + std::to_string(j);
            VarId h = t.relu(linear(bp, p + ".fc1", readout));
            Rng r = rngs.make("drop/" + p);
            h = t.dropout(h, cfg_.heads_dropout, rngs.train ? &r : nullptr);
            out.pooled.emplace_back(schema_.classes[j].name, linear(bp, p + ".fc2", h));
        }
    }

    // Sum of label-smoothed cross-entropies over classes. The transformer
    // variant passes mean-pooled attention straight in as logits.
    VarId concept_loss(BoundParams<T>& bp, const ForwardOutput<T>& out,
                       const EpisodeAnnotation& annotation, double eps) {
        Tape<T>& t = bp.tape();
        VarId total{};
        bool first = true;
        for (const auto& [cls, logits] : out.pooled) {
            const Tensor<T> q = smoothed_targets<T>(annotation.at(cls), eps);
            VarId ce = t.ce_with_logits(logits, t.constant(q));
            total = first ? ce : t.add(total, ce);
            first = false;
        }
        if (first) throw ValidationError("concept loss with empty schema");
        return total;
    }
};

// Exponentially weighted blend of overlapping chunk predictions: weights
// w_i = exp(-m * i) with i the query age, newest first.
class TemporalEnsemble {
public:
    TemporalEnsemble(std::size_t chunk, double decay) : chunk_(chunk), decay_(decay) {
        if (chunk_ < 1) throw ValidationError("ensemble needs chunk >= 1");
    }

    void push(long issued_at, Tensor<float> chunk) {
        if (chunk.rows() != chunk_) throw ValidationError("ensemble chunk row mismatch");
        buffer_.push_back({issued_at, std::move(chunk)});
        while (buffer_.size() > chunk_) buffer_.pop_front();
    }

    // Blends every buffered prediction that covers timestep t.
    Tensor<float> action_at(long t) const {
        Tensor<float> acc;
        double wsum = 0.0;
        for (const Entry& e : buffer_) {
            const long age = t - e.issued_at;
            if (age < 0 || age >= static_cast<long>(chunk_)) continue;
            const double w = std::exp(-decay_ * static_cast<double>(age));
            if (acc.empty()) acc = Tensor<float>(1, e.chunk.cols());
            for (std::size_t c = 0; c < e.chunk.cols(); ++c)
                acc[c] += static_cast<float>(w) * e.chunk(static_cast<std::size_t>(age), c);
            wsum += w;
        }
        if (acc.empty()) throw ValidationError("temporal ensemble: no prediction covers timestep");
        for (std::size_t c = 0; c < acc.cols(); ++c)
            acc[c] = static_cast<float>(acc[c] / wsum);
        return acc;
    }

    void reset() { buffer_.clear(); }

private:
    struct Entry {
        long issued_at;
        Tensor<float> chunk;
    };
    std::size_t chunk_;
    double decay_;
    std::deque<Entry> buffer_;
};

}  // namespace cact

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "cact/common.hpp"
#include "cact/nn.hpp"

using namespace cact;

TEST_CASE("parameter initialization is bit-reproducible from the seed") {
    ParameterStore<float> a(42), b(42), c(43);
    for (auto* s : {&a, &b, &c}) {
        s->add("proj.w", 8, 8, Init::Projection);
        s->add("embed", 4, 8, Init::Embedding);
    }
    CHECK(std::memcmp(a.at("proj.w").value.data(), b.at("proj.w").value.data(), 64 * 4) == 0);
    CHECK(std::memcmp(a.at("embed").value.data(), b.at("embed").value.data(), 32 * 4) == 0);
    CHECK(std::memcmp(a.at("proj.w").value.data(), c.at("proj.w").value.data(), 64 * 4) != 0);
}

TEST_CASE("a parameter's init stream depends only on (seed, name)") {
    // Stores with different parameter sets still initialize shared names
    // identically; this is what makes the ACT-equivalence construction work.
    ParameterStore<float> a(7), b(7);
    a.add("extra.w", 16, 16, Init::Projection);
    a.add("shared.w", 6, 6, Init::Projection);
    b.add("shared.w", 6, 6, Init::Projection);
    b.add("other", 3, 3, Init::Embedding);
    CHECK(std::memcmp(a.at("shared.w").value.data(), b.at("shared.w").value.data(), 36 * 4) == 0);
}

TEST_CASE("projection init is bounded by 1/sqrt(fan_in), biases zero") {
    ParameterStore<double> s(11);
    s.add("p.w", 16, 8, Init::Projection);
    s.add("p.b", 1, 8, Init::Zeros);
    const double bound = 1.0 / 4.0;
    for (std::size_t i = 0; i < 128; ++i) {
        CHECK(s.at("p.w").value[i] <= bound);
        CHECK(s.at("p.w").value[i] >= -bound);
    }
    for (std::size_t i = 0; i < 8; ++i) CHECK(s.at("p.b").value[i] == 0.0);
}

TEST_CASE("duplicate parameter names are rejected") {
    ParameterStore<float> s(1);
    s.add("x", 2, 2, Init::Zeros);
    CHECK_THROWS_AS(s.add("x", 2, 2, Init::Zeros), ValidationError);
    CHECK_THROWS_AS(s.at("missing"), ValidationError);
}

TEST_CASE("sinusoidal 2d embeddings: deterministic, distinct per cell, even dim only") {
    const auto a = sinusoidal_2d<double>(4, 4, 16);
    const auto b = sinusoidal_2d<double>(4, 4, 16);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    CHECK_THROWS_AS(sinusoidal_2d<double>(2, 2, 7), ValidationError);
    // distinct rows for every pair of cells on grids up to 8x8
    for (std::size_t hp : {3ul, 8ul}) {
        const auto e = sinusoidal_2d<double>(hp, hp, 16);
        for (std::size_t i = 0; i < e.rows(); ++i)
            for (std::size_t j = i + 1; j < e.rows(); ++j) {
                bool same = true;
                for (std::size_t c = 0; c < e.cols() && same; ++c)
                    same = e(i, c) == e(j, c);
                CHECK_FALSE(same);
            }
    }
}

TEST_CASE("learned rows move after a gradient step with nonzero grad") {
    ParameterStore<float> s(3);
    s.add("pos", 4, 8, Init::Embedding);
    Tape<float> tape;
    BoundParams<float> bp(tape, s);
    tape.backward(tape.sum_all(bp("pos")));
    bp.flush_grads();
    const float before = s.at("pos").value[5];
    for (std::size_t i = 0; i < s.at("pos").value.size(); ++i)
        s.at("pos").value[i] -= 0.1f * s.at("pos").grad[i];
    CHECK(s.at("pos").value[5] != before);
}

TEST_CASE("encoder block with zero output projections is the identity") {
    ParameterStore<double> s(5);
    add_encoder_block_params(s, "blk", 8, 16);
    s.at("blk.attn.o.w").value.fill(0.0);
    s.at("blk.ffn.out.w").value.fill(0.0);
    Tape<double> tape;
    BoundParams<double> bp(tape, s);
    Tensor<double> x(3, 8);
    Rng rng(9);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    VarId y = encoder_block(bp, "blk", tape.constant(x), 2, 0.0, nullptr, nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(tape.val(y)[i] == x[i]);
}

TEST_CASE("checkpoint roundtrip is bit-exact and validates structure") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "cact_ckpt_test.bin";
    ParameterStore<float> s(21);
    s.add("a.w", 5, 7, Init::Projection);
    s.add("b.embed", 3, 7, Init::Embedding);
    s.set_trainable("b.embed", false);
    save_checkpoint(s, path.string());

    ParameterStore<float> fresh(99);  // different seed: values differ before load
    fresh.add("a.w", 5, 7, Init::Projection);
    fresh.add("b.embed", 3, 7, Init::Embedding);
    CHECK(std::memcmp(fresh.at("a.w").value.data(), s.at("a.w").value.data(), 35 * 4) != 0);
    load_checkpoint(fresh, path.string());
    CHECK(std::memcmp(fresh.at("a.w").value.data(), s.at("a.w").value.data(), 35 * 4) == 0);
    CHECK(std::memcmp(fresh.at("b.embed").value.data(), s.at("b.embed").value.data(), 21 * 4) == 0);
    CHECK_FALSE(fresh.at("b.embed").trainable);

    ParameterStore<float> wrong(1);
    wrong.add("a.w", 5, 6, Init::Projection);  // shape mismatch
    wrong.add("b.embed", 3, 7, Init::Embedding);
    CHECK_THROWS_AS(load_checkpoint(wrong, path.string()), IoError);

    ParameterStore<float> missing(1);
    missing.add("a.w", 5, 7, Init::Projection);  // b.embed absent
    CHECK_THROWS_AS(load_checkpoint(missing, path.string()), IoError);

    std::ofstream junk(path, std::ios::binary);
    junk << "not a checkpoint";
    junk.close();
    ParameterStore<float> any(2);
    any.add("a.w", 5, 7, Init::Projection);
    CHECK_THROWS_AS(load_checkpoint(any, path.string()), IoError);
    fs::remove(path);
}

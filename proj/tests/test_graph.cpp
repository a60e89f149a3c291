#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "cact/common.hpp"
#include "cact/grad_check.hpp"
#include "cact/graph.hpp"

using namespace cact;

namespace {

Tensor<double> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
    Rng rng(seed);
    Tensor<double> t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("softmax of a zero row is uniform") {
    Tape<double> t;
    VarId x = t.constant(Tensor<double>(1, 5));
    VarId y = t.softmax_rows(x);
    for (std::size_t i = 0; i < 5; ++i) CHECK(t.val(y)[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
    Tape<double> t;
    VarId x = t.constant(random_tensor(7, 9, 42, -5.0, 5.0));
    VarId y = t.softmax_rows(x);
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) {
            const double v = t.val(y)(r, c);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("linear with identity weights and zero bias is the identity") {
    Tape<double> t;
    Tensor<double> W(3, 3);
    for (int i = 0; i < 3; ++i) W(i, i) = 1.0;
    Tensor<double> X = random_tensor(4, 3, 7);
    VarId y = t.linear(t.constant(X), t.constant(W), t.constant(Tensor<double>(1, 3)));
    for (std::size_t i = 0; i < X.size(); ++i) CHECK(t.val(y)[i] == X[i]);
}

TEST_CASE("layer_norm output rows have mean 0 and variance 1 before affine") {
    Tape<double> t;
    Tensor<double> g(1, 6);
    g.fill(1.0);
    VarId y = t.layer_norm(t.constant(random_tensor(5, 6, 11, -3.0, 3.0)), t.constant(g),
                           t.constant(Tensor<double>(1, 6)));
    for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < 6; ++c) mean += t.val(y)(r, c);
        mean /= 6;
        for (std::size_t c = 0; c < 6; ++c) {
            const double d = t.val(y)(r, c) - mean;
            var += d * d;
        }
        var /= 6;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("scalar square at x=3 has derivative 6") {
    Tensor<double> x = Tensor<double>::scalar(3.0);
    const double err = finite_difference_check(
        {&x},
        [](Tape<double>& t, const std::vector<VarId>& in) { return t.mul(in[0], in[0]); }, 1e-5);
    CHECK(err < 1e-8);
    Tape<double> t;
    VarId v = t.leaf(x);
    t.backward(t.mul(v, v));
    CHECK(t.grad(v)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("constant function has zero gradient and zero fd error") {
    Tensor<double> x = random_tensor(2, 2, 5);
    const double err = finite_difference_check(
        {&x},
        [](Tape<double>& t, const std::vector<VarId>& in) {
            (void)in;
            return t.constant(Tensor<double>::scalar(4.0));
        },
        1e-5);
    CHECK(err == 0.0);
}

TEST_CASE("finite differences: linear layer on a random 4x4") {
    Tensor<double> X = random_tensor(4, 4, 21);
    Tensor<double> W = random_tensor(4, 4, 22);
    Tensor<double> b = random_tensor(1, 4, 23);
    const double err = finite_difference_check(
        {&X, &W, &b},
        [](Tape<double>& t, const std::vector<VarId>& in) {
            return t.mean_all(t.linear(in[0], in[1], in[2]));
        },
        1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("finite differences: every elementwise primitive") {
    Tensor<double> A = random_tensor(3, 4, 31);
    Tensor<double> B = random_tensor(3, 4, 32);
    auto check2 = [&](auto op) {
        Tensor<double> a = A, b = B;
        return finite_difference_check(
            {&a, &b},
            [&op](Tape<double>& t, const std::vector<VarId>& in) {
                return t.mean_all(op(t, in[0], in[1]));
            },
            1e-5);
    };
    CHECK(check2([](Tape<double>& t, VarId a, VarId b) { return t.add(a, b); }) < 1e-7);
    CHECK(check2([](Tape<double>& t, VarId a, VarId b) { return t.sub(a, b); }) < 1e-7);
    CHECK(check2([](Tape<double>& t, VarId a, VarId b) { return t.mul(a, b); }) < 1e-7);
    CHECK(check2([](Tape<double>& t, VarId a, VarId b) {
              return t.concat_cols({t.relu(a), t.scale(b, 1.7)});
          }) < 1e-6);
}

TEST_CASE("finite differences: softmax, layer_norm, matmul variants") {
    Tensor<double> X = random_tensor(3, 5, 41, -2.0, 2.0);
    Tensor<double> Y = random_tensor(4, 5, 42);
    Tensor<double> g = random_tensor(1, 5, 43, 0.5, 1.5);
    Tensor<double> b = random_tensor(1, 5, 44);
    {
        Tensor<double> x = X;
        CHECK(finite_difference_check(
                  {&x},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      // weight rows so the gradient is non-trivial
                      Tensor<double> w(3, 5);
                      for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i);
                      return t.mean_all(t.mul(t.softmax_rows(in[0]), t.constant(w)));
                  },
                  1e-6) < 1e-6);
    }
    {
        Tensor<double> x = X, gg = g, bb = b;
        CHECK(finite_difference_check(
                  {&x, &gg, &bb},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      Tensor<double> w(3, 5);
                      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i));
                      return t.mean_all(t.mul(t.layer_norm(in[0], in[1], in[2]), t.constant(w)));
                  },
                  1e-6) < 1e-5);
    }
    {
        Tensor<double> x = X, y = Y;
        CHECK(finite_difference_check(
                  {&x, &y},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.mean_all(t.matmul_nt(in[0], in[1]));
                  },
                  1e-5) < 1e-7);
    }
    {
        Tensor<double> x = X;
        Tensor<double> w = random_tensor(5, 4, 45);
        CHECK(finite_difference_check(
                  {&x, &w},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.mean_all(t.matmul(in[0], in[1]));
                  },
                  1e-5) < 1e-7);
    }
}

TEST_CASE("finite differences: attention, lookup, reparameterize, losses") {
    {
        Tensor<double> q = random_tensor(4, 6, 51), k = random_tensor(5, 6, 52),
                       v = random_tensor(5, 6, 53);
        CHECK(finite_difference_check(
                  {&q, &k, &v},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      Tensor<double> w(4, 6);
                      for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.07 * static_cast<double>(i) - 0.5;
                      return t.mean_all(t.mul(t.attention(in[0], in[1], in[2], 2, false), t.constant(w)));
                  },
                  1e-6) < 1e-6);
    }
    {
        Tensor<double> q = random_tensor(4, 6, 54);
        CHECK(finite_difference_check(
                  {&q},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.mean_all(t.attention(in[0], in[0], in[0], 3, true));
                  },
                  1e-6) < 1e-6);
    }
    {
        Tensor<double> E = random_tensor(6, 4, 55);
        CHECK(finite_difference_check(
                  {&E},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.mean_all(t.embedding_lookup(in[0], {3, 1, 3}));
                  },
                  1e-5) < 1e-7);
    }
    {
        Tensor<double> mu = random_tensor(1, 4, 56), lv = random_tensor(1, 4, 57);
        Tensor<double> eta = random_tensor(1, 4, 58);
        Tensor<double> mu2 = mu, lv2 = lv;
        CHECK(finite_difference_check(
                  {&mu, &lv},
                  [&eta](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.mean_all(t.reparameterize(in[0], in[1], t.constant(eta)));
                  },
                  1e-6) < 1e-6);
        CHECK(finite_difference_check(
                  {&mu2, &lv2},
                  [](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.kl_normal(in[0], in[1]);
                  },
                  1e-6) < 1e-6);
    }
    {
        Tensor<double> pred = random_tensor(4, 3, 59);
        Tensor<double> target = random_tensor(4, 3, 60);
        Tensor<double> mask(4, 1);
        mask(0, 0) = mask(1, 0) = mask(2, 0) = 1.0;
        CHECK(finite_difference_check(
                  {&pred},
                  [&](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.masked_l1(in[0], t.constant(target), t.constant(mask));
                  },
                  1e-6) < 1e-6);
    }
    {
        Tensor<double> logits = random_tensor(1, 5, 61, -2.0, 2.0);
        Tensor<double> q(1, 5);
        q[2] = 0.925;
        q[0] = q[1] = q[3] = q[4] = 0.025;
        CHECK(finite_difference_check(
                  {&logits},
                  [&](Tape<double>& t, const std::vector<VarId>& in) {
                      return t.ce_with_logits(in[0], t.constant(q));
                  },
                  1e-6) < 1e-6);
    }
}

TEST_CASE("attention rows are convex combinations of value rows") {
    // Single head, compare output (pre output-projection) against the
    // min/max envelope of V per column.
    Tape<double> t;
    Tensor<double> Q = random_tensor(5, 4, 71), K = random_tensor(6, 4, 72),
                   V = random_tensor(6, 4, 73);
    VarId y = t.attention(t.constant(Q), t.constant(K), t.constant(V), 1, false);
    for (std::size_t c = 0; c < 4; ++c) {
        double lo = V(0, c), hi = V(0, c);
        for (std::size_t r = 1; r < 6; ++r) {
            lo = std::min(lo, V(r, c));
            hi = std::max(hi, V(r, c));
        }
        for (std::size_t r = 0; r < 5; ++r) {
            CHECK(t.val(y)(r, c) >= lo - 1e-12);
            CHECK(t.val(y)(r, c) <= hi + 1e-12);
        }
    }
}

TEST_CASE("attention with sequence length 1 returns the value row") {
    Tape<double> t;
    Tensor<double> Q = random_tensor(1, 4, 81), K = random_tensor(1, 4, 82),
                   V = random_tensor(1, 4, 83);
    VarId y = t.attention(t.constant(Q), t.constant(K), t.constant(V), 2, false);
    for (std::size_t c = 0; c < 4; ++c) CHECK(t.val(y)(0, c) == doctest::Approx(V(0, c)).epsilon(1e-12));
}

TEST_CASE("causal mask: position 0 attends only to itself") {
    Tape<double> t;
    Tensor<double> X = random_tensor(4, 4, 91);
    VarId y = t.attention(t.constant(X), t.constant(X), t.constant(X), 1, true);
    for (std::size_t c = 0; c < 4; ++c) CHECK(t.val(y)(0, c) == doctest::Approx(X(0, c)).epsilon(1e-12));
}

TEST_CASE("two-token one-head attention matches a hand-rolled computation") {
    // Independent straight-line evaluation of softmax(QK^T/sqrt(d)) V.
    Tensor<double> Q(2, 2), K(2, 2), V(2, 2);
    Q(0, 0) = 1.0; Q(0, 1) = 0.5; Q(1, 0) = -0.5; Q(1, 1) = 2.0;
    K(0, 0) = 0.3; K(0, 1) = -1.0; K(1, 0) = 0.8; K(1, 1) = 0.2;
    V(0, 0) = 2.0; V(0, 1) = -1.0; V(1, 0) = 0.0; V(1, 1) = 1.0;
    const double inv = 1.0 / std::sqrt(2.0);
    double expected[2][2];
    for (int i = 0; i < 2; ++i) {
        const double l0 = (Q(i, 0) * K(0, 0) + Q(i, 1) * K(0, 1)) * inv;
        const double l1 = (Q(i, 0) * K(1, 0) + Q(i, 1) * K(1, 1)) * inv;
        const double m = std::max(l0, l1);
        const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
        const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
        expected[i][0] = a0 * V(0, 0) + a1 * V(1, 0);
        expected[i][1] = a0 * V(0, 1) + a1 * V(1, 1);
    }
    Tape<double> t;
    VarId y = t.attention(t.constant(Q), t.constant(K), t.constant(V), 1, false);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(t.val(y)(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));
}

TEST_CASE("dropout is identity in evaluation mode and rescales in training") {
    Tape<double> t;
    Tensor<double> X = random_tensor(10, 10, 101);
    VarId x = t.constant(X);
    CHECK(t.dropout(x, 0.5, nullptr) == x);
    CHECK(t.dropout(x, 0.0, nullptr) == x);
    Rng rng(7);
    VarId y = t.dropout(x, 0.5, &rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const double v = t.val(y)[i];
        if (v == 0.0)
            ++zeros;
        else
            CHECK(v == doctest::Approx(2.0 * X[i]).epsilon(1e-12));
    }
    CHECK(zeros > 20);
    CHECK(zeros < 80);
}

TEST_CASE("shape mismatches and invalid heads raise validation errors") {
    Tape<double> t;
    VarId a = t.constant(Tensor<double>(2, 3));
    VarId b = t.constant(Tensor<double>(3, 3));
    CHECK_THROWS_AS((void)t.add(a, b), ValidationError);
    CHECK_THROWS_AS((void)t.attention(b, b, b, 2, false), ValidationError);
    Tensor<double> bad(1, 2);
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS((void)t.constant(bad), NumericError);
    Tensor<double> mask(2, 1);
    CHECK_THROWS_AS((void)t.masked_l1(a, a, t.constant(mask)), ValidationError);
}

TEST_CASE("backward accumulates into shared subexpressions") {
    // f(x) = sum(x*x + x) -> df/dx = 2x + 1
    Tape<double> t;
    Tensor<double> X = random_tensor(2, 2, 111);
    VarId x = t.leaf(X);
    t.backward(t.sum_all(t.add(t.mul(x, x), x)));
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(t.grad(x)[i] == doctest::Approx(2.0 * X[i] + 1.0).epsilon(1e-12));
}

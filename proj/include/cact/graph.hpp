#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cact/common.hpp"
#include "cact/kernels.hpp"
#include "cact/tensor.hpp"

namespace cact {

using VarId = std::size_t;

// Reverse-mode tape over 2D tensors. A graph is built per training step and
// discarded; nodes are created in topological order, so backward is a single
// reverse sweep. Every op validates its output is finite and throws
// NumericError otherwise.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated on first accumulation
        bool requires_grad = false;
        std::function<void()> backward;
    };

    VarId constant(Tensor<T> v) { return push(std::move(v), false, "constant"); }
    VarId leaf(Tensor<T> v) { return push(std::move(v), true, "leaf"); }

    const Tensor<T>& val(VarId id) const { return nodes_[id].value; }
    bool requires_grad(VarId id) const { return nodes_[id].requires_grad; }

    Tensor<T>& grad(VarId id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool has_grad(VarId id) const { return !nodes_[id].grad.empty(); }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    void backward(VarId root) {
        if (val(root).size() != 1) throw ValidationError("backward: root must be scalar");
        grad(root)[0] = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward && !n.grad.empty()) n.backward();
        }
    }

    // ---- ops ------------------------------------------------------------

    VarId matmul(VarId a, VarId b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (A.cols() != B.rows()) throw ValidationError("matmul: inner dims " + A.shape_str() + " vs " + B.shape_str());
        Tensor<T> out(A.rows(), B.cols());
        kernels::gemm_nn(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.cols());
        VarId y = push(std::move(out), needs(a, b), "matmul");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, b, y] {
            const Tensor<T>& dy = grad(y);
            const Tensor<T>&A = val(a), &B = val(b);
            if (requires_grad(a))
                kernels::gemm_nt(dy.data(), B.data(), grad(a).data(), dy.rows(), dy.cols(), B.rows(), true);
            if (requires_grad(b))
                kernels::gemm_tn(A.data(), dy.data(), grad(b).data(), A.rows(), A.cols(), dy.cols(), true);
        };
        return y;
    }

    // A (m x k) times B^T where B is (n x k).
    VarId matmul_nt(VarId a, VarId b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (A.cols() != B.cols()) throw ValidationError("matmul_nt: inner dims " + A.shape_str() + " vs " + B.shape_str());
        Tensor<T> out(A.rows(), B.rows());
        kernels::gemm_nt(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.rows());
        VarId y = push(std::move(out), needs(a, b), "matmul_nt");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, b, y] {
            const Tensor<T>& dy = grad(y);
            const Tensor<T>&A = val(a), &B = val(b);
            if (requires_grad(a))
                kernels::gemm_nn(dy.data(), B.data(), grad(a).data(), dy.rows(), dy.cols(), B.cols(), true);
            if (requires_grad(b))
                kernels::gemm_tn(dy.data(), A.data(), grad(b).data(), dy.rows(), dy.cols(), A.cols(), true);
        };
        return y;
    }

    // x (m x in) * w (in x out) + bias row b (1 x out).
    VarId linear(VarId x, VarId w, VarId b) {
        const Tensor<T>&X = val(x), &W = val(w), &Bv = val(b);
        if (X.cols() != W.rows() || Bv.rows() != 1 || Bv.cols() != W.cols())
            throw ValidationError("linear: shapes " + X.shape_str() + ", " + W.shape_str() + ", " + Bv.shape_str());
        Tensor<T> out(X.rows(), W.cols());
        kernels::gemm_nn(X.data(), W.data(), out.data(), X.rows(), X.cols(), W.cols());
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += Bv[c];
        VarId y = push(std::move(out), needs(x, w) || requires_grad(b), "linear");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, w, b, y] {
            const Tensor<T>& dy = grad(y);
            const Tensor<T>&X = val(x), &W = val(w);
            if (requires_grad(x))
                kernels::gemm_nt(dy.data(), W.data(), grad(x).data(), dy.rows(), dy.cols(), W.rows(), true);
            if (requires_grad(w))
                kernels::gemm_tn(X.data(), dy.data(), grad(w).data(), X.rows(), X.cols(), dy.cols(), true);
            if (requires_grad(b)) {
                Tensor<T>& db = grad(b);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy(r, c);
            }
        };
        return y;
    }

    VarId add(VarId a, VarId b) { return ew2(a, b, "add", [](T x, T y) { return x + y; }, T(1), T(1)); }
    VarId sub(VarId a, VarId b) { return ew2(a, b, "sub", [](T x, T y) { return x - y; }, T(1), T(-1)); }

    VarId mul(VarId a, VarId b) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (!A.same_shape(B)) throw ValidationError("mul: shape mismatch");
        Tensor<T> out(A.rows(), A.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
        VarId y = push(std::move(out), needs(a, b), "mul");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, b, y] {
            const Tensor<T>& dy = grad(y);
            if (requires_grad(a)) {
                Tensor<T>& da = grad(a);
                const Tensor<T>& B = val(b);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * B[i];
            }
            if (requires_grad(b)) {
                Tensor<T>& db = grad(b);
                const Tensor<T>& A = val(a);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * A[i];
            }
        };
        return y;
    }

    VarId scale(VarId a, T c) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.rows(), A.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * c;
        VarId y = push(std::move(out), requires_grad(a), "scale");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, c, y] {
            const Tensor<T>& dy = grad(y);
            Tensor<T>& da = grad(a);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
        };
        return y;
    }

    VarId relu(VarId a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.rows(), A.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > T(0) ? A[i] : T(0);
        VarId y = push(std::move(out), requires_grad(a), "relu");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, y] {
            const Tensor<T>& dy = grad(y);
            const Tensor<T>& A = val(a);
            Tensor<T>& da = grad(a);
            for (std::size_t i = 0; i < dy.size(); ++i)
                if (A[i] > T(0)) da[i] += dy[i];
        };
        return y;
    }

    // Per-row normalization to mean 0, variance 1, then elementwise affine
    // with gain g and bias b (both 1 x cols).
    VarId layer_norm(VarId x, VarId g, VarId b) {
        constexpr T eps = T(1e-5);
        const Tensor<T>&X = val(x), &G = val(g), &Bv = val(b);
        if (G.cols() != X.cols() || Bv.cols() != X.cols())
            throw ValidationError("layer_norm: affine shape mismatch");
        const std::size_t R = X.rows(), C = X.cols();
        Tensor<T> xhat(R, C), out(R, C), inv_sd(R, 1);
        for (std::size_t r = 0; r < R; ++r) {
            T mean = T(0);
            for (std::size_t c = 0; c < C; ++c) mean += X(r, c);
            mean /= T(C);
            T var = T(0);
            for (std::size_t c = 0; c < C; ++c) {
                T d = X(r, c) - mean;
                var += d * d;
            }
            var /= T(C);
            const T inv = T(1) / std::sqrt(var + eps);
            inv_sd(r, 0) = inv;
            for (std::size_t c = 0; c < C; ++c) {
                xhat(r, c) = (X(r, c) - mean) * inv;
                out(r, c) = G[c] * xhat(r, c) + Bv[c];
            }
        }
        VarId y = push(std::move(out), needs(x, g) || requires_grad(b), "layer_norm");
        if (nodes_[y].requires_grad) {
            auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
            auto is = std::make_shared<Tensor<T>>(std::move(inv_sd));
            nodes_[y].backward = [this, x, g, b, y, xh, is] {
                const Tensor<T>& dy = grad(y);
                const Tensor<T>& G = val(g);
                const std::size_t R = dy.rows(), C = dy.cols();
                if (requires_grad(g)) {
                    Tensor<T>& dg = grad(g);
                    for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < C; ++c) dg[c] += dy(r, c) * (*xh)(r, c);
                }
                if (requires_grad(b)) {
                    Tensor<T>& db = grad(b);
                    for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < C; ++c) db[c] += dy(r, c);
                }
                if (requires_grad(x)) {
                    Tensor<T>& dx = grad(x);
                    for (std::size_t r = 0; r < R; ++r) {
                        T sum_d = T(0), sum_dx = T(0);
                        for (std::size_t c = 0; c < C; ++c) {
                            const T dh = dy(r, c) * G[c];
                            sum_d += dh;
                            sum_dx += dh * (*xh)(r, c);
                        }
                        const T inv = (*is)(r, 0);
                        for (std::size_t c = 0; c < C; ++c) {
                            const T dh = dy(r, c) * G[c];
                            dx(r, c) += inv * (dh - sum_d / T(C) - (*xh)(r, c) * sum_dx / T(C));
                        }
                    }
                }
            };
        }
        return y;
    }

    VarId softmax_rows(VarId x) {
        const Tensor<T>& X = val(x);
        Tensor<T> out = softmax_forward(X);
        VarId y = push(std::move(out), requires_grad(x), "softmax_rows");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y] {
            const Tensor<T>&dy = grad(y), &Y = val(y);
            Tensor<T>& dx = grad(x);
            softmax_backward(Y, dy, dx);
        };
        return y;
    }

    // Scaled dot-product attention over already-projected q, k, v.
    // q: Sq x d, k/v: Sk x d, d divisible by heads; per-head width d/heads.
    // causal masks key positions j > query position i (requires Sq == Sk).
    VarId attention(VarId q, VarId k, VarId v, std::size_t heads, bool causal) {
        const Tensor<T>&Q = val(q), &K = val(k), &V = val(v);
        const std::size_t d = Q.cols();
        if (K.cols() != d || V.cols() != d) throw ValidationError("attention: embedding dims differ");
        if (d % heads != 0) throw ValidationError("attention: dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
        if (causal && Q.rows() != K.rows()) throw ValidationError("attention: causal mask needs square attention");
        const std::size_t Sq = Q.rows(), Sk = K.rows(), dh = d / heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

        auto weights = std::make_shared<std::vector<Tensor<T>>>();
        weights->reserve(heads);
        Tensor<T> out(Sq, d);
        Tensor<T> qh(Sq, dh), kh(Sk, dh), vh(Sk, dh), logits(Sq, Sk), ctx(Sq, dh);
        for (std::size_t h = 0; h < heads; ++h) {
            gather_head(Q, h, dh, qh);
            gather_head(K, h, dh, kh);
            gather_head(V, h, dh, vh);
            kernels::gemm_nt(qh.data(), kh.data(), logits.data(), Sq, dh, Sk);
            for (std::size_t i = 0; i < logits.size(); ++i) logits[i] *= inv_sqrt;
            if (causal)
                for (std::size_t i = 0; i < Sq; ++i)
                    for (std::size_t j = i + 1; j < Sk; ++j)
                        logits(i, j) = -std::numeric_limits<T>::infinity();
            Tensor<T> A = softmax_forward(logits);
            kernels::gemm_nn(A.data(), vh.data(), ctx.data(), Sq, Sk, dh);
            scatter_head(ctx, h, dh, out);
            weights->push_back(std::move(A));
        }
        VarId y = push(std::move(out), needs(q, k) || requires_grad(v), "attention");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, q, k, v, y, heads, weights] {
            const Tensor<T>&Q = val(q), &K = val(k), &V = val(v), &dy = grad(y);
            const std::size_t d = Q.cols(), dh = d / heads, Sq = Q.rows(), Sk = K.rows();
            const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
            Tensor<T> qh(Sq, dh), kh(Sk, dh), vh(Sk, dh), dctx(Sq, dh);
            Tensor<T> dA(Sq, Sk), dS(Sq, Sk), dqh(Sq, dh), dkh(Sk, dh), dvh(Sk, dh);
            for (std::size_t h = 0; h < heads; ++h) {
                const Tensor<T>& A = (*weights)[h];
                gather_head(Q, h, dh, qh);
                gather_head(K, h, dh, kh);
                gather_head(V, h, dh, vh);
                gather_head(dy, h, dh, dctx);
                // dV = A^T dctx ; dA = dctx V^T ; dS = A*(dA - rowsum(dA*A))/sqrt(dh)
                kernels::gemm_tn(A.data(), dctx.data(), dvh.data(), Sq, Sk, dh);
                kernels::gemm_nt(dctx.data(), vh.data(), dA.data(), Sq, dh, Sk);
                softmax_backward_into(A, dA, dS);
                for (std::size_t i = 0; i < dS.size(); ++i) dS[i] *= inv_sqrt;
                kernels::gemm_nn(dS.data(), kh.data(), dqh.data(), Sq, Sk, dh);
                kernels::gemm_tn(dS.data(), qh.data(), dkh.data(), Sq, Sk, dh);
                if (requires_grad(q)) scatter_head_acc(dqh, h, dh, grad(q));
                if (requires_grad(k)) scatter_head_acc(dkh, h, dh, grad(k));
                if (requires_grad(v)) scatter_head_acc(dvh, h, dh, grad(v));
            }
        };
        return y;
    }

    VarId concat_rows(const std::vector<VarId>& parts) {
        if (parts.empty()) throw ValidationError("concat_rows: empty");
        const std::size_t C = val(parts[0]).cols();
        std::size_t R = 0;
        bool rg = false;
        for (VarId p : parts) {
            if (val(p).cols() != C) throw ValidationError("concat_rows: column mismatch");
            R += val(p).rows();
            rg = rg || requires_grad(p);
        }
        Tensor<T> out(R, C);
        std::size_t r0 = 0;
        for (VarId p : parts) {
            const Tensor<T>& P = val(p);
            for (std::size_t r = 0; r < P.rows(); ++r)
                for (std::size_t c = 0; c < C; ++c) out(r0 + r, c) = P(r, c);
            r0 += P.rows();
        }
        VarId y = push(std::move(out), rg, "concat_rows");
        if (rg) nodes_[y].backward = [this, parts, y] {
            const Tensor<T>& dy = grad(y);
            std::size_t r0 = 0;
            for (VarId p : parts) {
                const std::size_t pr = val(p).rows(), C = dy.cols();
                if (requires_grad(p)) {
                    Tensor<T>& dp = grad(p);
                    for (std::size_t r = 0; r < pr; ++r)
                        for (std::size_t c = 0; c < C; ++c) dp(r, c) += dy(r0 + r, c);
                }
                r0 += pr;
            }
        };
        return y;
    }

    VarId concat_cols(const std::vector<VarId>& parts) {
        if (parts.empty()) throw ValidationError("concat_cols: empty");
        const std::size_t R = val(parts[0]).rows();
        std::size_t C = 0;
        bool rg = false;
        for (VarId p : parts) {
            if (val(p).rows() != R) throw ValidationError("concat_cols: row mismatch");
            C += val(p).cols();
            rg = rg || requires_grad(p);
        }
        Tensor<T> out(R, C);
        std::size_t c0 = 0;
        for (VarId p : parts) {
            const Tensor<T>& P = val(p);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < P.cols(); ++c) out(r, c0 + c) = P(r, c);
            c0 += P.cols();
        }
        VarId y = push(std::move(out), rg, "concat_cols");
        if (rg) nodes_[y].backward = [this, parts, y] {
            const Tensor<T>& dy = grad(y);
            std::size_t c0 = 0;
            for (VarId p : parts) {
                const std::size_t pc = val(p).cols();
                if (requires_grad(p)) {
                    Tensor<T>& dp = grad(p);
                    for (std::size_t r = 0; r < dy.rows(); ++r)
                        for (std::size_t c = 0; c < pc; ++c) dp(r, c) += dy(r, c0 + c);
                }
                c0 += pc;
            }
        };
        return y;
    }

    VarId slice_rows(VarId x, std::size_t r0, std::size_t count) {
        const Tensor<T>& X = val(x);
        if (r0 + count > X.rows()) throw ValidationError("slice_rows: out of range");
        Tensor<T> out(count, X.cols());
        for (std::size_t r = 0; r < count; ++r)
            for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) = X(r0 + r, c);
        VarId y = push(std::move(out), requires_grad(x), "slice_rows");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y, r0] {
            const Tensor<T>& dy = grad(y);
            Tensor<T>& dx = grad(x);
            for (std::size_t r = 0; r < dy.rows(); ++r)
                for (std::size_t c = 0; c < dy.cols(); ++c) dx(r0 + r, c) += dy(r, c);
        };
        return y;
    }

    VarId mean_rows(VarId x) {
        const Tensor<T>& X = val(x);
        if (X.rows() == 0) throw ValidationError("mean_rows: empty input");
        Tensor<T> out(1, X.cols());
        for (std::size_t r = 0; r < X.rows(); ++r)
            for (std::size_t c = 0; c < X.cols(); ++c) out[c] += X(r, c);
        for (std::size_t c = 0; c < X.cols(); ++c) out[c] /= T(X.rows());
        VarId y = push(std::move(out), requires_grad(x), "mean_rows");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y] {
            const Tensor<T>& dy = grad(y);
            Tensor<T>& dx = grad(x);
            const T inv = T(1) / T(dx.rows());
            for (std::size_t r = 0; r < dx.rows(); ++r)
                for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy[c] * inv;
        };
        return y;
    }

    VarId mean_all(VarId x) {
        const Tensor<T>& X = val(x);
        T s = T(0);
        for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
        VarId y = push(Tensor<T>::scalar(s / T(X.size())), requires_grad(x), "mean_all");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y] {
            const T g = grad(y)[0] / T(val(x).size());
            Tensor<T>& dx = grad(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        };
        return y;
    }

    VarId sum_all(VarId x) {
        const Tensor<T>& X = val(x);
        T s = T(0);
        for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
        VarId y = push(Tensor<T>::scalar(s), requires_grad(x), "sum_all");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y] {
            const T g = grad(y)[0];
            Tensor<T>& dx = grad(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        };
        return y;
    }

    // Inverted dropout; identity when p == 0 or rng is null (evaluation mode).
    VarId dropout(VarId x, double p, Rng* rng) {
        if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: p must be in [0,1)");
        if (p == 0.0 || rng == nullptr) return x;
        const Tensor<T>& X = val(x);
        auto mask = std::make_shared<Tensor<T>>(X.rows(), X.cols());
        const T keep_scale = T(1.0 / (1.0 - p));
        for (std::size_t i = 0; i < mask->size(); ++i)
            (*mask)[i] = rng->uniform() < p ? T(0) : keep_scale;
        Tensor<T> out(X.rows(), X.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * (*mask)[i];
        VarId y = push(std::move(out), requires_grad(x), "dropout");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, x, y, mask] {
            const Tensor<T>& dy = grad(y);
            Tensor<T>& dx = grad(x);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
        };
        return y;
    }

    VarId embedding_lookup(VarId table, std::vector<std::size_t> idx) {
        const Tensor<T>& E = val(table);
        Tensor<T> out(idx.size(), E.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= E.rows()) throw ValidationError("embedding_lookup: index out of range");
            for (std::size_t c = 0; c < E.cols(); ++c) out(r, c) = E(idx[r], c);
        }
        VarId y = push(std::move(out), requires_grad(table), "embedding_lookup");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, table, y, idx = std::move(idx)] {
            const Tensor<T>& dy = grad(y);
            Tensor<T>& dE = grad(table);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t c = 0; c < dy.cols(); ++c) dE(idx[r], c) += dy(r, c);
        };
        return y;
    }

    // z = mu + exp(logvar / 2) * eta with eta a constant noise row.
    VarId reparameterize(VarId mu, VarId logvar, VarId eta) {
        const Tensor<T>&M = val(mu), &L = val(logvar), &E = val(eta);
        if (!M.same_shape(L) || !M.same_shape(E)) throw ValidationError("reparameterize: shape mismatch");
        Tensor<T> out(M.rows(), M.cols());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = M[i] + std::exp(L[i] / T(2)) * E[i];
        VarId y = push(std::move(out), needs(mu, logvar), "reparameterize");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, mu, logvar, eta, y] {
            const Tensor<T>&dy = grad(y), &L = val(logvar), &E = val(eta);
            if (requires_grad(mu)) {
                Tensor<T>& dm = grad(mu);
                for (std::size_t i = 0; i < dy.size(); ++i) dm[i] += dy[i];
            }
            if (requires_grad(logvar)) {
                Tensor<T>& dl = grad(logvar);
                for (std::size_t i = 0; i < dy.size(); ++i)
                    dl[i] += dy[i] * std::exp(L[i] / T(2)) * E[i] / T(2);
            }
        };
        return y;
    }

    // KL(N(mu, exp(logvar)) || N(0, I)) = 0.5 * sum(mu^2 + exp(lv) - 1 - lv).
    VarId kl_normal(VarId mu, VarId logvar) {
        const Tensor<T>&M = val(mu), &L = val(logvar);
        if (!M.same_shape(L)) throw ValidationError("kl_normal: shape mismatch");
        T s = T(0);
        for (std::size_t i = 0; i < M.size(); ++i)
            s += M[i] * M[i] + std::exp(L[i]) - T(1) - L[i];
        VarId y = push(Tensor<T>::scalar(s / T(2)), needs(mu, logvar), "kl_normal");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, mu, logvar, y] {
            const T g = grad(y)[0];
            const Tensor<T>&M = val(mu), &L = val(logvar);
            if (requires_grad(mu)) {
                Tensor<T>& dm = grad(mu);
                for (std::size_t i = 0; i < M.size(); ++i) dm[i] += g * M[i];
            }
            if (requires_grad(logvar)) {
                Tensor<T>& dl = grad(logvar);
                for (std::size_t i = 0; i < L.size(); ++i)
                    dl[i] += g * (std::exp(L[i]) - T(1)) / T(2);
            }
        };
        return y;
    }

    // Mean absolute error over rows with mask(t) == 1; mask is (rows x 1).
    VarId masked_l1(VarId pred, VarId target, VarId mask) {
        const Tensor<T>&P = val(pred), &G = val(target), &M = val(mask);
        if (!P.same_shape(G) || M.rows() != P.rows() || M.cols() != 1)
            throw ValidationError("masked_l1: shape mismatch");
        T denom = T(0);
        for (std::size_t r = 0; r < M.rows(); ++r) denom += M(r, 0);
        denom *= T(P.cols());
        if (denom <= T(0)) throw ValidationError("masked_l1: empty mask");
        T s = T(0);
        for (std::size_t r = 0; r < P.rows(); ++r) {
            if (M(r, 0) == T(0)) continue;
            for (std::size_t c = 0; c < P.cols(); ++c) s += std::abs(P(r, c) - G(r, c));
        }
        VarId y = push(Tensor<T>::scalar(s / denom), requires_grad(pred), "masked_l1");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, pred, target, mask, y, denom] {
            const T g = grad(y)[0] / denom;
            const Tensor<T>&P = val(pred), &G = val(target), &M = val(mask);
            Tensor<T>& dp = grad(pred);
            for (std::size_t r = 0; r < P.rows(); ++r) {
                if (M(r, 0) == T(0)) continue;
                for (std::size_t c = 0; c < P.cols(); ++c) {
                    const T d = P(r, c) - G(r, c);
                    dp(r, c) += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
                }
            }
        };
        return y;
    }

    // Cross-entropy -sum(q * log_softmax(logits)) for a single row; q constant.
    VarId ce_with_logits(VarId logits, VarId targets) {
        const Tensor<T>&X = val(logits), &Q = val(targets);
        if (X.rows() != 1 || !X.same_shape(Q)) throw ValidationError("ce_with_logits: expects matching 1 x n rows");
        const std::size_t n = X.cols();
        T mx = X[0];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, X[i]);
        T lse = T(0);
        for (std::size_t i = 0; i < n; ++i) lse += std::exp(X[i] - mx);
        lse = std::log(lse) + mx;
        T loss = T(0), qsum = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            loss -= Q[i] * (X[i] - lse);
            qsum += Q[i];
        }
        VarId y = push(Tensor<T>::scalar(loss), requires_grad(logits), "ce_with_logits");
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, logits, targets, y, lse, qsum] {
            const T g = grad(y)[0];
            const Tensor<T>&X = val(logits), &Q = val(targets);
            Tensor<T>& dx = grad(logits);
            for (std::size_t i = 0; i < X.cols(); ++i)
                dx[i] += g * (std::exp(X[i] - lse) * qsum - Q[i]);
        };
        return y;
    }

private:
    std::vector<Node> nodes_;

    bool needs(VarId a, VarId b) const { return requires_grad(a) || requires_grad(b); }

    VarId push(Tensor<T> v, bool rg, const char* op) {
        if (!v.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
        nodes_.push_back(Node{std::move(v), Tensor<T>{}, rg, nullptr});
        return nodes_.size() - 1;
    }

    template <typename F>
    VarId ew2(VarId a, VarId b, const char* name, F f, T ga, T gb) {
        const Tensor<T>&A = val(a), &B = val(b);
        if (!A.same_shape(B)) throw ValidationError(std::string(name) + ": shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        Tensor<T> out(A.rows(), A.cols());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
        VarId y = push(std::move(out), needs(a, b), name);
        if (nodes_[y].requires_grad) nodes_[y].backward = [this, a, b, y, ga, gb] {
            const Tensor<T>& dy = grad(y);
            if (requires_grad(a)) {
                Tensor<T>& da = grad(a);
                for (std::size_t i = 0; i < dy.size(); ++i) da[i] += ga * dy[i];
            }
            if (requires_grad(b)) {
                Tensor<T>& db = grad(b);
                for (std::size_t i = 0; i < dy.size(); ++i) db[i] += gb * dy[i];
            }
        };
        return y;
    }

    static Tensor<T> softmax_forward(const Tensor<T>& X) {
        Tensor<T> out(X.rows(), X.cols());
        for (std::size_t r = 0; r < X.rows(); ++r) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < X.cols(); ++c) mx = std::max(mx, X(r, c));
            T sum = T(0);
            for (std::size_t c = 0; c < X.cols(); ++c) {
                const T e = std::exp(X(r, c) - mx);
                out(r, c) = e;
                sum += e;
            }
            for (std::size_t c = 0; c < X.cols(); ++c) out(r, c) /= sum;
        }
        return out;
    }

    static void softmax_backward_into(const Tensor<T>& Y, const Tensor<T>& dY, Tensor<T>& dX) {
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < Y.cols(); ++c) dot += dY(r, c) * Y(r, c);
            for (std::size_t c = 0; c < Y.cols(); ++c) dX(r, c) = Y(r, c) * (dY(r, c) - dot);
        }
    }

    static void softmax_backward(const Tensor<T>& Y, const Tensor<T>& dY, Tensor<T>& dX) {
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < Y.cols(); ++c) dot += dY(r, c) * Y(r, c);
            for (std::size_t c = 0; c < Y.cols(); ++c) dX(r, c) += Y(r, c) * (dY(r, c) - dot);
        }
    }

    static void gather_head(const Tensor<T>& X, std::size_t h, std::size_t dh, Tensor<T>& out) {
        const std::size_t c0 = h * dh;
        for (std::size_t r = 0; r < X.rows(); ++r)
            for (std::size_t c = 0; c < dh; ++c) out(r, c) = X(r, c0 + c);
    }

    static void scatter_head(const Tensor<T>& H, std::size_t h, std::size_t dh, Tensor<T>& out) {
        const std::size_t c0 = h * dh;
        for (std::size_t r = 0; r < H.rows(); ++r)
            for (std::size_t c = 0; c < dh; ++c) out(r, c0 + c) = H(r, c);
    }

    static void scatter_head_acc(const Tensor<T>& H, std::size_t h, std::size_t dh, Tensor<T>& out) {
        const std::size_t c0 = h * dh;
        for (std::size_t r = 0; r < H.rows(); ++r)
            for (std::size_t c = 0; c < dh; ++c) out(r, c0 + c) += H(r, c);
    }
};

}  // namespace cact

#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cact::kernels {

// Per-element arithmetic order is identical in the serial and OpenMP paths
// (threads split output rows; each output element is one serial inner loop),
// so results are bit-equal regardless of thread count.

// Worker threads that run whole training cells in parallel set this to force
// the kernels serial and avoid oversubscription.
inline thread_local bool tl_serial = false;

struct ScopedSerial {
    bool prev;
    ScopedSerial() : prev(tl_serial) { tl_serial = true; }
    ~ScopedSerial() { tl_serial = prev; }
};

// Minimum multiply-adds before a parallel region pays for itself.
inline constexpr std::size_t kParallelThreshold = 96 * 1024;

inline bool use_parallel(std::size_t work) {
#ifdef _OPENMP
    return !tl_serial && work >= kParallelThreshold && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

// C(m x n) = A(m x k) * B(k x n). Accumulates when acc is true.
template <typename T>
void gemm_nn_serial(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool acc = false) {
    for (std::size_t i = 0; i < m; ++i) {
        T* c = C + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
        const T* a = A + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const T av = a[l];
            const T* b = B + l * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false) {
#ifdef _OPENMP
    if (use_parallel(m * k * n)) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
            gemm_nn_serial(A + i * k, B, C + i * n, 1, k, n, acc);
        return;
    }
#endif
    gemm_nn_serial(A, B, C, m, k, n, acc);
}

// C(m x n) = A(m x k) * B(n x k)^T.
template <typename T>
void gemm_nt_serial(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool acc = false) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* a = A + i * k;
        T* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* b = B + j * k;
            T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
            std::size_t l = 0;
            for (; l + 4 <= k; l += 4) {
                s0 += a[l] * b[l];
                s1 += a[l + 1] * b[l + 1];
                s2 += a[l + 2] * b[l + 2];
                s3 += a[l + 3] * b[l + 3];
            }
            T s = (s0 + s1) + (s2 + s3);
            for (; l < k; ++l) s += a[l] * b[l];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

template <typename T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false) {
#ifdef _OPENMP
    if (use_parallel(m * k * n)) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
            gemm_nt_serial(A + i * k, B, C + i * n, 1, k, n, acc);
        return;
    }
#endif
    gemm_nt_serial(A, B, C, m, k, n, acc);
}

// C(k x n) = A(m x k)^T * B(m x n).
template <typename T>
void gemm_tn_serial(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool acc = false) {
    for (std::size_t i = 0; i < k; ++i) {
        T* c = C + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
        for (std::size_t l = 0; l < m; ++l) {
            const T av = A[l * k + i];
            const T* b = B + l * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <typename T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
             bool acc = false) {
#ifdef _OPENMP
    if (use_parallel(m * k * n)) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(k); ++i) {
            T* c = C + i * n;
            if (!acc)
                for (std::size_t j = 0; j < n; ++j) c[j] = T(0);
            for (std::size_t l = 0; l < m; ++l) {
                const T av = A[l * k + i];
                const T* b = B + l * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
        return;
    }
#endif
    gemm_tn_serial(A, B, C, m, k, n, acc);
}

}  // namespace cact::kernels

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace fidrank::kernels {

namespace detail {

inline thread_local std::uint64_t mac_count = 0;

#if defined(__AVX512F__)
inline constexpr std::size_t kVectorBytes = 64;
#else
inline constexpr std::size_t kVectorBytes = 32;
#endif

template <typename T>
struct Simd {
    typedef T type __attribute__((vector_size(kVectorBytes)));
    typedef T unaligned __attribute__((vector_size(kVectorBytes), aligned(alignof(T)), may_alias));
    static constexpr std::size_t width = kVectorBytes / sizeof(T);
};

template <typename T>
inline typename Simd<T>::type load(const T* p)
{
    return *reinterpret_cast<const typename Simd<T>::unaligned*>(p);
}

template <typename T>
inline void store(T* p, typename Simd<T>::type v)
{
    *reinterpret_cast<typename Simd<T>::unaligned*>(p) = v;
}

// Register tile: MR rows x NV vectors of c, accumulated over the whole k extent.
template <typename T, std::size_t MR, std::size_t NV>
inline void tile(std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate)
{
    using V = typename Simd<T>::type;
    constexpr std::size_t W = Simd<T>::width;
    V acc[MR][NV];
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t v = 0; v < NV; ++v) {
            acc[r][v] = accumulate ? load(c + r * n + v * W) : V{};
        }
    }
    for (std::size_t p = 0; p < k; ++p) {
        V bv[NV];
        for (std::size_t v = 0; v < NV; ++v) {
            bv[v] = load(b + p * n + v * W);
        }
        for (std::size_t r = 0; r < MR; ++r) {
            const T s = a[r * k + p];
            for (std::size_t v = 0; v < NV; ++v) {
                acc[r][v] += s * bv[v];
            }
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t v = 0; v < NV; ++v) {
            store(c + r * n + v * W, acc[r][v]);
        }
    }
}

template <typename T, std::size_t MR>
inline void row_block(std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate)
{
    constexpr std::size_t W = Simd<T>::width;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
        tile<T, MR, 2>(k, n, a, b + j, c + j, accumulate);
    }
    for (; j + W <= n; j += W) {
        tile<T, MR, 1>(k, n, a, b + j, c + j, accumulate);
    }
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t jj = j; jj < n; ++jj) {
            T sum = accumulate ? c[r * n + jj] : T{0};
            for (std::size_t p = 0; p < k; ++p) {
                sum += a[r * k + p] * b[p * n + jj];
            }
            c[r * n + jj] = sum;
        }
    }
}

}  // namespace detail

/// Multiply-adds issued by gemm on the calling thread since the last reset.
inline std::uint64_t mac_count() noexcept { return detail::mac_count; }
inline void reset_mac_count() noexcept { detail::mac_count = 0; }

/// Scoped reader: `MacCounter c; ...; c.count()` gives the MACs issued inside the scope.
class MacCounter {
public:
    MacCounter() noexcept : start_(detail::mac_count) {}
    std::uint64_t count() const noexcept { return detail::mac_count - start_; }

private:
    std::uint64_t start_;
};

/// out[n x m] = in[m x n]^T
template <typename T>
void transpose(std::size_t m, std::size_t n, const T* __restrict in, T* __restrict out)
{
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = in[i * n + j];
        }
    }
}

/// c[m x n] (+)= a[m x k] * b[k x n], all row-major and contiguous.
/// Every element of c sums its k products in index order.
template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate)
{
    detail::mac_count += static_cast<std::uint64_t>(m) * k * n;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        detail::row_block<T, 4>(k, n, a + i * k, b, c + i * n, accumulate);
    }
    for (; i < m; ++i) {
        detail::row_block<T, 1>(k, n, a + i * k, b, c + i * n, accumulate);
    }
}

/// c[k x n] (+)= a[m x k]^T * b[m x n]. Used for weight gradients.
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c, bool accumulate)
{
    std::vector<T> at(m * k);
    transpose(m, k, a, at.data());
    gemm(k, m, n, at.data(), b, c, accumulate);
}

}  // namespace fidrank::kernels

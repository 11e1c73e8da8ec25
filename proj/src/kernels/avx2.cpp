#include "doge/kernels.hpp"

#include <immintrin.h>

namespace doge::kernels {

namespace {

inline double hsum(__m256d v)
{
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n)
{
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 8 <= n; k += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k + 4), _mm256_loadu_pd(y + k + 4), acc1);
    }
    for (; k + 4 <= n; k += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; k < n; ++k) s += x[k] * y[k];
    return s;
}

void gemv(const double* W, const double* x, double* y, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) y[r] += dot(W + r * cols, x, cols);
}

void axpy(double a, const double* x, double* y, std::size_t n)
{
    const __m256d va = _mm256_set1_pd(a);
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4)
        _mm256_storeu_pd(y + k, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + k), _mm256_loadu_pd(y + k)));
    for (; k < n; ++k) y[k] += a * x[k];
}

void gemv_t(const double* W, const double* y, double* x, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r)
        if (y[r] != 0.0) axpy(y[r], W + r * cols, x, cols);
}

void ger(double* W, const double* y, const double* x, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r)
        if (y[r] != 0.0) axpy(y[r], x, W + r * cols, cols);
}

}  // namespace

const Table& avx2_table()
{
    static const Table t{dot, gemv, gemv_t, ger, axpy};
    return t;
}

}  // namespace doge::kernels

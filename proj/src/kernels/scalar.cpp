#include "doge/kernels.hpp"

namespace doge::kernels {

namespace {

double dot(const double* x, const double* y, std::size_t n)
{
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += x[k] * y[k];
    return s;
}

void gemv(const double* W, const double* x, double* y, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) y[r] += dot(W + r * cols, x, cols);
}

void gemv_t(const double* W, const double* y, double* x, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const double a = y[r];
        if (a == 0.0) continue;
        const double* w = W + r * cols;
        for (std::size_t c = 0; c < cols; ++c) x[c] += a * w[c];
    }
}

void ger(double* W, const double* y, const double* x, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const double a = y[r];
        if (a == 0.0) continue;
        double* w = W + r * cols;
        for (std::size_t c = 0; c < cols; ++c) w[c] += a * x[c];
    }
}

void axpy(double a, const double* x, double* y, std::size_t n)
{
    for (std::size_t k = 0; k < n; ++k) y[k] += a * x[k];
}

}  // namespace

const Table& scalar_table()
{
    static const Table t{dot, gemv, gemv_t, ger, axpy};
    return t;
}

}  // namespace doge::kernels

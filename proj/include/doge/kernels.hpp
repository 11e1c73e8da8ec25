#pragma once

#include <cstddef>

// Dense double-precision kernels used by the network. Matrices are row-major
// with `rows` x `cols` entries.
namespace doge::kernels {

enum class Isa { scalar, avx2 };

struct Table {
    // x . y
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += W x
    void (*gemv)(const double* W, const double* x, double* y, std::size_t rows, std::size_t cols);
    // x += W^T y
    void (*gemv_t)(const double* W, const double* y, double* x, std::size_t rows, std::size_t cols);
    // W += y x^T
    void (*ger)(double* W, const double* y, const double* x, std::size_t rows, std::size_t cols);
    // y += a x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
};

const Table& scalar_table();
#ifdef DOGE_HAVE_AVX2
const Table& avx2_table();
#endif

bool supported(Isa isa);
const Table& table(Isa isa);

// Picks AVX2 when the CPU has it unless DOGE_FORCE_SCALAR is set.
Isa active_isa();
const Table& active();
// Throws InvalidArgument if the CPU lacks `isa`.
void select(Isa isa);

const char* name(Isa isa);

}  // namespace doge::kernels

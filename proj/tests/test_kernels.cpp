#include "doge/error.hpp"
#include "doge/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace doge;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Checks every kernel of `t` against plain loops on ragged sizes.
void check_table(const kernels::Table& t)
{
    std::mt19937_64 rng(123);
    for (std::size_t rows : {1u, 3u, 4u, 7u, 16u, 33u}) {
        for (std::size_t cols : {1u, 2u, 5u, 8u, 13u, 62u}) {
            const auto W = random_vec(rows * cols, rng);
            const auto x = random_vec(cols, rng);
            const auto y = random_vec(rows, rng);

            double ref_dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) ref_dot += W[c] * x[c];
            CHECK(std::abs(t.dot(W.data(), x.data(), cols) - ref_dot) <= 1e-12);

            auto gy = y, ref_gy = y;
            t.gemv(W.data(), x.data(), gy.data(), rows, cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) ref_gy[r] += W[r * cols + c] * x[c];
            CHECK(max_diff(gy, ref_gy) <= 1e-12);

            auto gx = x, ref_gx = x;
            t.gemv_t(W.data(), y.data(), gx.data(), rows, cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) ref_gx[c] += W[r * cols + c] * y[r];
            CHECK(max_diff(gx, ref_gx) <= 1e-12);

            auto gw = W, ref_gw = W;
            t.ger(gw.data(), y.data(), x.data(), rows, cols);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) ref_gw[r * cols + c] += y[r] * x[c];
            CHECK(max_diff(gw, ref_gw) <= 1e-12);

            auto ax = y, ref_ax = y;
            t.axpy(0.75, y.data(), ax.data(), rows);
            for (std::size_t r = 0; r < rows; ++r) ref_ax[r] += 0.75 * y[r];
            CHECK(max_diff(ax, ref_ax) <= 1e-15);
        }
    }
}

}  // namespace

TEST_SUITE("kernels")
{
    TEST_CASE("scalar kernels match plain loops")
    {
        check_table(kernels::table(kernels::Isa::scalar));
    }

    TEST_CASE("avx2 kernels match plain loops when available")
    {
        if (!kernels::supported(kernels::Isa::avx2)) {
            CHECK_THROWS_AS(kernels::select(kernels::Isa::avx2), InvalidArgument);
            return;
        }
        check_table(kernels::table(kernels::Isa::avx2));
    }

    TEST_CASE("selection switches the active table")
    {
        const auto original = kernels::active_isa();
        kernels::select(kernels::Isa::scalar);
        CHECK(kernels::active_isa() == kernels::Isa::scalar);
        CHECK(&kernels::active() == &kernels::table(kernels::Isa::scalar));
        CHECK(std::string(kernels::name(kernels::Isa::scalar)) == "scalar");
        kernels::select(original);
        CHECK(kernels::active_isa() == original);
    }
}

#include "doge/bdd.hpp"
#include "doge/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace doge;

namespace {

Constraint row(std::vector<std::uint32_t> vars, std::vector<double> coeffs, Relation rel, double rhs)
{
    return Constraint{std::move(vars), std::move(coeffs), rel, rhs};
}

// All 0-1 points of the row in level order, lexicographic.
std::vector<std::vector<std::uint8_t>> brute_feasible(const Constraint& r)
{
    const auto k = r.vars.size();
    std::vector<std::vector<std::uint8_t>> out;
    for (std::uint64_t mask = 0; mask < (1ull << k); ++mask) {
        std::vector<std::uint8_t> x(k);
        double lhs = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
            x[t] = static_cast<std::uint8_t>((mask >> (k - 1 - t)) & 1u);
            lhs += r.coeffs[t] * x[t];
        }
        const bool ok = r.rel == Relation::equal ? lhs == r.rhs : lhs <= r.rhs;
        if (ok) out.push_back(std::move(x));
    }
    return out;
}

double path_cost(const std::vector<std::uint8_t>& x, const std::vector<double>& hi, const std::vector<double>& lo)
{
    double s = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) s += x[t] ? hi[t] : lo[t];
    return s;
}

Constraint random_row(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> len(1, 8), coef(-3, 3), eq(0, 3);
    const auto k = static_cast<std::size_t>(len(rng));
    Constraint r;
    for (std::size_t t = 0; t < k; ++t) {
        r.vars.push_back(static_cast<std::uint32_t>(t));
        int c = coef(rng);
        if (c == 0) c = 1;
        r.coeffs.push_back(c);
    }
    // rhs from a random point keeps the row feasible
    double lhs = 0.0;
    for (std::size_t t = 0; t < k; ++t) lhs += r.coeffs[t] * static_cast<double>(rng() & 1u);
    r.rel = eq(rng) == 0 ? Relation::equal : Relation::less_equal;
    r.rhs = lhs;
    return r;
}

}  // namespace

TEST_SUITE("bdd")
{
    TEST_CASE("pairwise exclusion has three nodes")
    {
        const auto b = build_bdd(row({0, 1}, {1, 1}, Relation::less_equal, 1));
        CHECK(b.num_levels() == 2);
        CHECK(b.num_nodes() == 3);
        CHECK(b.level_end(0) - b.level_begin(0) == 1);
        CHECK(b.level_end(1) - b.level_begin(1) == 2);
        CHECK(is_reduced(b));
    }

    TEST_CASE("equality with full rhs is a chain")
    {
        const auto b = build_bdd(row({0, 1, 2}, {1, 1, 1}, Relation::equal, 3));
        CHECK(b.num_nodes() == 3);
        for (const auto& n : b.nodes) CHECK(n.lo == kBot);
        CHECK(b.nodes.back().hi == kTop);
        CHECK(enumerate_paths(b) == std::vector<std::vector<std::uint8_t>>{{1, 1, 1}});
    }

    TEST_CASE("infeasible row throws")
    {
        CHECK_THROWS_AS(build_bdd(row({0}, {1}, Relation::less_equal, -1)), InfeasibleError);
    }

    TEST_CASE("paths equal the feasible set")
    {
        std::mt19937_64 rng(11);
        for (int trial = 0; trial < 300; ++trial) {
            const auto r = random_row(rng);
            const auto b = build_bdd(r);
            auto paths = enumerate_paths(b);
            std::sort(paths.begin(), paths.end());
            CHECK(paths == brute_feasible(r));
            CHECK(is_reduced(b));
            CHECK(reduce(b) == b);
        }
    }

    TEST_CASE("custom level order")
    {
        const std::vector<double> coeffs{2, 1};
        const std::vector<std::uint32_t> order{1, 0};
        const auto b = build_bdd(coeffs, Relation::less_equal, 2, order);
        CHECK(b.vars == std::vector<std::uint32_t>{1, 0});
        auto paths = enumerate_paths(b);
        std::sort(paths.begin(), paths.end());
        // levels are (x1, x0): 2 x0 + x1 <= 2 excludes only x0 = x1 = 1
        CHECK(paths == std::vector<std::vector<std::uint8_t>>{{0, 0}, {0, 1}, {1, 0}});
    }

    TEST_CASE("shortest paths and min-marginals on the tiny subproblem")
    {
        const auto b = build_bdd(row({0, 1}, {1, 1}, Relation::less_equal, 1));
        const std::vector<double> hi{-1.0, -0.5}, lo{0.0, 0.0};
        const auto costs = compute_shortest_paths(b, hi, lo);
        CHECK(subproblem_value(costs) == -1.0);
        const auto mm = min_marginals(b, costs, 0, hi[0], lo[0]);
        CHECK(mm[0] == -0.5);
        CHECK(mm[1] == -1.0);

        const auto zero = compute_shortest_paths(b, std::vector<double>{0, 0}, std::vector<double>{0, 0});
        for (std::size_t v = 0; v < b.num_nodes(); ++v) CHECK(zero.from_root[v] == 0.0);
        const auto mz = min_marginals(b, zero, 1, 0.0, 0.0);
        CHECK(mz[0] == 0.0);
        CHECK(mz[1] == 0.0);

        const std::vector<double> pos{1.0, 1.0};
        const auto c = compute_shortest_paths(b, pos, lo);
        CHECK(subproblem_value(c) == 0.0);
        CHECK(optimal_assignment(b, c, pos, lo).x == std::vector<std::uint8_t>{0, 0});
    }

    TEST_CASE("forced variable")
    {
        const auto b = build_bdd(row({0}, {1}, Relation::equal, 1));
        const std::vector<double> hi{0.0}, lo{0.0};
        const auto costs = compute_shortest_paths(b, hi, lo);
        const auto mm = min_marginals(b, costs, 0, 0.0, 0.0);
        CHECK(mm[0] == kInf);
        CHECK(mm[1] == 0.0);
        CHECK(argmin_restricted(b, costs, hi, lo, 0, 1).x == std::vector<std::uint8_t>{1});
        CHECK_THROWS_AS(argmin_restricted(b, costs, hi, lo, 0, 0), InvalidArgument);
    }

    TEST_CASE("optimal and restricted assignments")
    {
        const auto b = build_bdd(row({0, 1}, {1, 1}, Relation::less_equal, 1));
        const std::vector<double> hi{-1.0, -0.5}, lo{0.0, 0.0};
        const auto costs = compute_shortest_paths(b, hi, lo);
        const auto best = optimal_assignment(b, costs, hi, lo);
        CHECK(best.x == std::vector<std::uint8_t>{1, 0});
        CHECK(best.value == -1.0);
        CHECK(argmin_restricted(b, costs, hi, lo, 0, 0).x == std::vector<std::uint8_t>{0, 1});

        const auto z = compute_shortest_paths(b, std::vector<double>{0, 0}, lo);
        const auto zero_best = optimal_assignment(b, z, std::vector<double>{0, 0}, lo);
        CHECK(zero_best.x == std::vector<std::uint8_t>{0, 0});
        CHECK(zero_best.value == 0.0);

        const auto e = build_bdd(row({0, 1}, {1, 1}, Relation::equal, 1));
        const std::vector<double> hi2{5.0, 1.0};
        const auto ce = compute_shortest_paths(e, hi2, lo);
        const auto pick = optimal_assignment(e, ce, hi2, lo);
        CHECK(pick.x == std::vector<std::uint8_t>{0, 1});
        CHECK(pick.value == 1.0);
    }

    TEST_CASE("min-marginals match enumeration")
    {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int trial = 0; trial < 200; ++trial) {
            const auto r = random_row(rng);
            const auto b = build_bdd(r);
            const auto k = r.vars.size();
            std::vector<double> hi(k), lo(k);
            for (std::size_t t = 0; t < k; ++t) {
                hi[t] = u(rng);
                lo[t] = u(rng);
            }
            const auto costs = compute_shortest_paths(b, hi, lo);
            const auto feas = brute_feasible(r);
            double best = kInf;
            for (const auto& x : feas) best = std::min(best, path_cost(x, hi, lo));
            CHECK(subproblem_value(costs) == doctest::Approx(best).epsilon(1e-12));
            const auto opt = optimal_assignment(b, costs, hi, lo);
            CHECK(path_cost(opt.x, hi, lo) == doctest::Approx(best).epsilon(1e-12));
            for (std::size_t t = 0; t < k; ++t) {
                double m[2] = {kInf, kInf};
                for (const auto& x : feas) m[x[t]] = std::min(m[x[t]], path_cost(x, hi, lo));
                const auto mm = min_marginals(b, costs, t, hi[t], lo[t]);
                for (int beta = 0; beta < 2; ++beta) {
                    if (m[beta] == kInf) {
                        CHECK(mm[beta] == kInf);
                        continue;
                    }
                    CHECK(mm[beta] == doctest::Approx(m[beta]).epsilon(1e-12));
                    const auto s = argmin_restricted(b, costs, hi, lo, t, beta);
                    CHECK(s.x[t] == beta);
                    CHECK(path_cost(s.x, hi, lo) == doctest::Approx(m[beta]).epsilon(1e-12));
                }
                CHECK(std::min(mm[0], mm[1]) == doctest::Approx(best).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("incremental refresh matches a full recompute")
    {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (int trial = 0; trial < 100; ++trial) {
            const auto r = random_row(rng);
            const auto b = build_bdd(r);
            const auto k = r.vars.size();
            std::vector<double> hi(k), lo(k);
            for (std::size_t t = 0; t < k; ++t) {
                hi[t] = u(rng);
                lo[t] = u(rng);
            }
            auto costs = compute_shortest_paths(b, hi, lo);
            const auto t = static_cast<std::size_t>(rng() % k);
            hi[t] = u(rng);
            lo[t] = u(rng);
            // forward refresh from level t onwards, then backward from t down
            for (std::size_t s = t; s < k; ++s) update_from_root(b, s, hi[s], lo[s], costs);
            for (std::size_t s = t + 1; s-- > 0;) update_to_top(b, s, hi[s], lo[s], costs);
            const auto full = compute_shortest_paths(b, hi, lo);
            CHECK(costs.from_root == full.from_root);
            CHECK(costs.to_top == full.to_top);
        }
    }

    TEST_CASE("dot export names the variables")
    {
        const auto b = build_bdd(row({0, 1}, {1, 1}, Relation::less_equal, 1));
        const auto dot = to_dot(b);
        CHECK(dot.find("digraph") != std::string::npos);
    }
}

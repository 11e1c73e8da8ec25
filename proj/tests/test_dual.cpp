#include "doge/checks.hpp"
#include "doge/dual.hpp"
#include "doge/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace doge;

namespace {

// Deferred min-marginal averaging on lambda directly: costs (lambda, 0) per level, snapshot of
// sum_k M_ik frozen per pass, lambda <- lambda - M_new + alpha * snapshot.
struct LambdaReference {
    const Problem& p;
    std::vector<double> lambda;
    std::vector<double> M;

    explicit LambdaReference(const Problem& problem) : p(problem), M(problem.num_edges(), 0.0)
    {
        const auto s = init_dual(problem);
        lambda = s.hi;
    }

    double diff(std::size_t e) const
    {
        const auto j = p.dec.edge_sub[e];
        const auto k = p.dec.subproblem_size(j);
        std::vector<double> hi(k), lo(k, 0.0);
        for (std::size_t t = 0; t < k; ++t) hi[t] = lambda[p.dec.sub_offset[j] + t];
        const auto costs = compute_shortest_paths(p.bdds[j], hi, lo);
        const auto t = p.dec.edge_level[e];
        const auto mm = min_marginals(p.bdds[j], costs, t, hi[t], lo[t]);
        if (std::isinf(mm[0]) || std::isinf(mm[1])) return 0.0;
        return mm[1] - mm[0];
    }

    void pass(const SolverParams& params, bool forward)
    {
        std::vector<double> snap(p.dec.num_vars(), 0.0);
        for (std::size_t e = 0; e < p.num_edges(); ++e) snap[p.dec.edge_var[e]] += M[e];
        const auto u = p.schedule.size();
        for (std::size_t b = 0; b < u; ++b) {
            const auto& block = p.schedule.blocks[forward ? b : u - 1 - b];
            std::vector<double> d(block.size());
            for (std::size_t q = 0; q < block.size(); ++q) d[q] = diff(block[q]);
            for (std::size_t q = 0; q < block.size(); ++q) {
                const auto e = block[q];
                const double m_new = params.omega[e] * d[q];
                lambda[e] += -m_new + params.alpha[e] * snap[p.dec.edge_var[e]];
                M[e] = m_new;
            }
        }
    }
};

std::vector<double> lambda_view(const DualState& s)
{
    std::vector<double> l(s.hi.size());
    for (std::size_t e = 0; e < l.size(); ++e) l[e] = s.hi[e] - s.lo[e];
    return l;
}

SolverParams random_params(const Problem& p, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.05, 1.0), w(0.01, 0.99);
    SolverParams params;
    params.alpha.resize(p.num_edges());
    params.omega.resize(p.num_edges());
    for (std::size_t i = 0; i < p.dec.num_vars(); ++i) {
        double sum = 0.0;
        for (auto e : p.dec.edges_of_var(i)) sum += params.alpha[e] = u(rng);
        for (auto e : p.dec.edges_of_var(i)) params.alpha[e] /= sum;
    }
    for (auto& o : params.omega) o = w(rng);
    normalize_params(p.dec, params);
    return params;
}

}  // namespace

TEST_SUITE("dual")
{
    TEST_CASE("init on tiny")
    {
        const auto p = make_problem(tiny_instance());
        const auto s = init_dual(p);
        CHECK(s.hi == std::vector<double>{-1.0, -0.5, -0.5, -1.0});
        CHECK(s.lo == std::vector<double>{0, 0, 0, 0});
        CHECK(s.M == std::vector<double>{0, 0, 0, 0});
        CHECK(dual_objective(p, s) == -2.0);
        CHECK(feasibility_residual(p, s) == 0.0);
    }

    TEST_CASE("single-subproblem degree gives hi = c")
    {
        IlpInstance inst;
        inst.num_vars = 3;
        inst.objective = {0.5, -2.0, 1.0};
        inst.constraints.push_back({{0, 1, 2}, {1, 1, 1}, Relation::less_equal, 2});
        const auto p = make_problem(inst);
        CHECK(init_dual(p).hi == inst.objective);
        CHECK(dual_objective(p, init_dual(p)) == enumerate_optimum(inst).value);
    }

    TEST_CASE("schedule")
    {
        const auto tiny = build_schedule(decompose(tiny_instance()));
        REQUIRE(tiny.size() == 2);
        CHECK(tiny.blocks[0] == std::vector<std::uint32_t>{0, 2});
        CHECK(tiny.blocks[1] == std::vector<std::uint32_t>{1, 3});

        IlpInstance one;
        one.num_vars = 4;
        one.objective.assign(4, 0.0);
        one.constraints.push_back({{0, 1, 2, 3}, {1, 1, 1, 1}, Relation::less_equal, 2});
        const auto s1 = build_schedule(decompose(one));
        CHECK(s1.size() == 4);
        for (const auto& b : s1.blocks) CHECK(b.size() == 1);

        IlpInstance two;
        two.num_vars = 4;
        two.objective.assign(4, 0.0);
        two.constraints.push_back({{0, 1}, {1, 1}, Relation::less_equal, 1});
        two.constraints.push_back({{2, 3}, {1, 1}, Relation::less_equal, 1});
        const auto s2 = build_schedule(decompose(two));
        CHECK(s2.size() == 2);
        for (const auto& b : s2.blocks) CHECK(b.size() == 2);
    }

    TEST_CASE("first block on tiny")
    {
        const auto p = make_problem(tiny_instance());
        auto s = init_dual(p);
        Workspace ws;
        const auto params = SolverParams::defaults(p.dec);
        refresh_costs(p, s, ws);
        take_snapshot(p, s, ws);
        block_update(p, s, ws, p.schedule.blocks[0], params, Direction::forward);
        CHECK(s.M[0] == -0.25);
        CHECK(s.lo[0] == -0.25);  // mass leaves the zero side
        CHECK(s.hi[0] == -1.0);
        CHECK(s.M[2] == 0.25);
        CHECK(s.hi[2] == -0.75);
        const auto l = lambda_view(s);
        CHECK(l[0] == -0.75);
        CHECK(l[2] == -0.75);
    }

    TEST_CASE("one sweep keeps the coupling identities")
    {
        const auto p = make_problem(tiny_instance());
        auto s = init_dual(p);
        Workspace ws;
        sweep(p, s, ws, SolverParams::defaults(p.dec));
        CHECK(feasibility_residual(p, s) <= feasibility_tolerance(p));
        // lambda-view sum for variable 2 plus its deferred mass equals c_2
        const double total = (s.hi[1] - s.lo[1]) + (s.hi[2] - s.lo[2]) + s.M[1] + s.M[2];
        CHECK(total == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(s.sweep_count == 1);
    }

    TEST_CASE("tiny converges to the optimum")
    {
        const auto p = make_problem(tiny_instance());
        auto s = init_dual(p);
        Workspace ws;
        const auto trace = run(p, s, ws, SolverParams::defaults(p.dec), 50);
        CHECK(trace.size() == 51);
        CHECK(std::abs(trace.back().lower_bound + 2.0) <= 1e-6);
    }

    TEST_CASE("zero sweeps return the initial bound only")
    {
        const auto p = make_problem(tiny_instance());
        auto s = init_dual(p);
        const auto before = s;
        Workspace ws;
        const auto trace = run(p, s, ws, SolverParams::defaults(p.dec), 0);
        REQUIRE(trace.size() == 1);
        CHECK(trace[0].lower_bound == -2.0);
        CHECK(s == before);
    }

    TEST_CASE("vanishing damping leaves the state in place")
    {
        const auto p = make_problem(random_instance(3, 8, 6));
        auto s = init_dual(p);
        const auto before = s;
        Workspace ws;
        auto params = SolverParams::defaults(p.dec, 1e-9);
        sweep(p, s, ws, params);
        for (std::size_t e = 0; e < p.num_edges(); ++e) {
            CHECK(std::abs(s.hi[e] - before.hi[e]) <= 1e-8);
            CHECK(std::abs(s.lo[e] - before.lo[e]) <= 1e-8);
        }
    }

    TEST_CASE("empty schedule is a no-op")
    {
        IlpInstance inst;
        inst.num_vars = 2;
        inst.objective = {-1.0, 2.0};
        const auto p = make_problem(inst);
        auto s = init_dual(p);
        Workspace ws;
        sweep(p, s, ws, SolverParams::defaults(p.dec));
        CHECK(s.hi.empty());
        CHECK(dual_objective(p, s) == -1.0);
    }

    TEST_CASE("zero costs give a zero objective")
    {
        IlpInstance inst;
        inst.num_vars = 3;
        inst.objective.assign(3, 0.0);
        inst.constraints.push_back({{0, 1}, {1, 1}, Relation::less_equal, 1});
        inst.constraints.push_back({{1, 2}, {1, 1}, Relation::equal, 1});
        const auto p = make_problem(inst);
        CHECK(dual_objective(p, init_dual(p)) == 0.0);
    }

    TEST_CASE("monotone and valid on random instances")
    {
        std::mt19937_64 rng(21);
        for (std::uint64_t seed = 1; seed <= 40; ++seed) {
            const auto inst = seed % 2 ? generate_independent_set(12, 0.25, seed) : random_instance(seed, 10, 8);
            const auto p = make_problem(inst);
            const double opt = enumerate_optimum(inst).value;
            const auto params = seed % 4 < 2 ? SolverParams::defaults(p.dec) : random_params(p, rng);
            auto s = init_dual(p);
            Workspace ws;
            double prev = dual_objective(p, s);
            for (int k = 0; k < 10; ++k) {
                for (auto dir : {Direction::forward, Direction::reverse}) {
                    directional_pass(p, s, ws, params, dir);
                    const double cur = dual_objective(p, s);
                    CHECK(cur >= prev - 1e-9 * (1.0 + std::abs(prev)));
                    CHECK(cur <= opt + 1e-9 * (1.0 + std::abs(opt)));
                    CHECK(feasibility_residual(p, s) <= feasibility_tolerance(p));
                    prev = cur;
                }
            }
        }
    }

    TEST_CASE("lambda view matches the unlifted update")
    {
        std::mt19937_64 rng(4);
        std::vector<IlpInstance> cases{tiny_instance()};
        for (std::uint64_t seed = 1; seed <= 6; ++seed) cases.push_back(random_instance(seed, 8, 6));
        for (const auto& inst : cases) {
            const auto p = make_problem(inst);
            const auto params = random_params(p, rng);
            auto s = init_dual(p);
            Workspace ws;
            LambdaReference ref(p);
            for (int k = 0; k < 5; ++k) {
                for (auto dir : {Direction::forward, Direction::reverse}) {
                    directional_pass(p, s, ws, params, dir);
                    ref.pass(params, dir == Direction::forward);
                    const auto l = lambda_view(s);
                    for (std::size_t e = 0; e < l.size(); ++e) {
                        CHECK(l[e] == doctest::Approx(ref.lambda[e]).epsilon(1e-10));
                        CHECK(s.M[e] == doctest::Approx(ref.M[e]).epsilon(1e-10));
                    }
                }
            }
        }
    }

    TEST_CASE("non-parametric update")
    {
        const auto p = make_problem(tiny_instance());
        auto s = init_dual(p);
        const auto before = s;
        nonparam_update(p, s, std::vector<double>{0, 0, 0, 0});
        CHECK(s == before);

        nonparam_update(p, s, std::vector<double>{0, 1, 0, 0});
        CHECK(s.hi[1] == before.hi[1] + 0.5);
        CHECK(s.hi[2] == before.hi[2] - 0.5);
        CHECK(s.hi[0] == before.hi[0]);
        CHECK(s.hi[3] == before.hi[3]);

        // variables 1 and 3 sit in one subproblem each
        auto t = before;
        nonparam_update(p, t, std::vector<double>{7, 0, 0, -3});
        CHECK(t == before);
        CHECK(feasibility_residual(p, s) <= feasibility_tolerance(p));
    }

    TEST_CASE("parameter validation")
    {
        const auto p = make_problem(tiny_instance());
        auto params = SolverParams::defaults(p.dec);
        params.omega[0] = 1.0;
        CHECK_THROWS_AS(normalize_params(p.dec, params), InvalidArgument);
        params = SolverParams::defaults(p.dec);
        params.alpha[1] = 0.7;
        CHECK_THROWS_AS(normalize_params(p.dec, params), InvalidArgument);
        params = SolverParams::defaults(p.dec);
        params.alpha[1] = -0.1;
        params.alpha[2] = 1.1;
        CHECK_THROWS_AS(normalize_params(p.dec, params), InvalidArgument);
    }

    TEST_CASE("thread count does not change the result")
    {
        const auto p = make_problem(generate_independent_set(40, 0.25, 3));
        std::mt19937_64 rng(8);
        const auto params = random_params(p, rng);
        DualState ref;
        for (int threads : {1, 2, 4}) {
            auto s = init_dual(p);
            Workspace ws;
            ws.threads = threads;
            run(p, s, ws, params, 15);
            if (threads == 1)
                ref = s;
            else
                CHECK(s == ref);
        }
    }
}

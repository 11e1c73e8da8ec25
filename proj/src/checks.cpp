#include "doge/checks.hpp"

#include "doge/error.hpp"
#include "doge/grad.hpp"
#include "doge/kernels.hpp"
#include "doge/net.hpp"
#include "doge/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace doge {

namespace {

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng)
{
    // Box-Muller keeps draws identical across standard libraries.
    const double u1 = 1.0 - uniform(rng);
    const double u2 = uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

SuiteResult make_result(std::string name, double value, double limit, std::string detail = {})
{
    SuiteResult r;
    r.name = std::move(name);
    r.value = value;
    r.limit = limit;
    r.passed = value <= limit;
    r.detail = std::move(detail);
    return r;
}

SolverParams random_params(const Decomposition& dec, std::mt19937_64& rng)
{
    SolverParams p;
    p.alpha.resize(dec.num_dual_vars);
    p.omega.resize(dec.num_dual_vars);
    for (std::size_t e = 0; e < dec.num_dual_vars; ++e) {
        p.alpha[e] = 0.01 + uniform(rng);
        p.omega[e] = 0.01 + 0.98 * uniform(rng);
    }
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        double sum = 0.0;
        for (auto e : dec.edges_of_var(i)) sum += p.alpha[e];
        for (auto e : dec.edges_of_var(i)) p.alpha[e] /= sum;
    }
    normalize_params(dec, p);
    return p;
}

std::vector<double> softmax_by_var(const Decomposition& dec, std::span<const double> logits)
{
    std::vector<double> a(logits.size(), 0.0);
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        const auto es = dec.edges_of_var(i);
        if (es.empty()) continue;
        double mx = -kInf;
        for (auto e : es) mx = std::max(mx, logits[e]);
        double sum = 0.0;
        for (auto e : es) sum += (a[e] = std::exp(logits[e] - mx));
        for (auto e : es) a[e] /= sum;
    }
    return a;
}

// Solver round as a function of (hi, lo, M, alpha logits, omega logits, theta).
struct SolverRound {
    const Problem* problem;
    std::size_t sweeps;
    Fault fault;

    std::size_t edges() const { return problem->num_edges(); }

    void unpack(std::span<const double> x, DualState& s, SolverParams& p, NetOutput& out, std::vector<double>& theta) const
    {
        const auto E = edges();
        s.hi.assign(x.begin(), x.begin() + E);
        s.lo.assign(x.begin() + E, x.begin() + 2 * E);
        s.M.assign(x.begin() + 2 * E, x.begin() + 3 * E);
        s.sweep_count = 0;
        out.alpha_logit.assign(x.begin() + 3 * E, x.begin() + 4 * E);
        out.omega_logit.assign(x.begin() + 4 * E, x.begin() + 5 * E);
        theta.assign(x.begin() + 5 * E, x.begin() + 6 * E);
        out.alpha = softmax_by_var(problem->dec, out.alpha_logit);
        out.omega.resize(E);
        for (std::size_t e = 0; e < E; ++e)
            out.omega[e] = std::clamp(1.0 / (1.0 + std::exp(-out.omega_logit[e])), kOmegaClamp, 1.0 - kOmegaClamp);
        p = to_solver_params(problem->dec, out);
    }

    double value(std::span<const double> x) const
    {
        DualState s;
        SolverParams p;
        NetOutput out;
        std::vector<double> theta;
        unpack(x, s, p, out, theta);
        nonparam_update(*problem, s, theta);
        Workspace ws;
        for (std::size_t k = 0; k < sweeps; ++k) sweep(*problem, s, ws, p);
        return dual_objective(*problem, s);
    }

    std::vector<double> gradient(std::span<const double> x) const
    {
        DualState s;
        SolverParams p;
        NetOutput out;
        std::vector<double> theta;
        unpack(x, s, p, out, theta);
        nonparam_update(*problem, s, theta);
        Workspace ws;
        ws.fault = fault;
        const auto tape = record_sweeps(*problem, s, ws, p, sweeps);
        const auto lg = loss_and_grad(*problem, tape.checkpoints.back());
        GradState g;
        g.resize(edges());
        g.d_hi = lg.d_hi;
        g.d_lo = lg.d_lo;
        round_backward(*problem, tape, g, ws);
        const auto d_theta = nonparam_backward(problem->dec, g.d_hi);
        const std::vector<double> zero(edges(), 0.0);
        const auto pre = transform_backward(problem->dec, out, g.d_alpha, g.d_omega, zero);
        std::vector<double> grad;
        grad.reserve(6 * edges());
        for (const auto& v : {g.d_hi, g.d_lo, g.d_M, pre.d_alpha_logit, pre.d_omega_logit, d_theta})
            grad.insert(grad.end(), v.begin(), v.end());
        return grad;
    }
};

}  // namespace

IlpInstance tiny_instance()
{
    IlpInstance inst;
    inst.num_vars = 3;
    inst.objective = {-1.0, -1.0, -1.0};
    inst.constraints.push_back({{0, 1}, {1.0, 1.0}, Relation::less_equal, 1.0});
    inst.constraints.push_back({{1, 2}, {1.0, 1.0}, Relation::less_equal, 1.0});
    return inst;
}

IlpInstance random_instance(std::uint64_t seed, std::size_t n, std::size_t m, std::size_t max_arity)
{
    if (n < 2 || max_arity < 2) throw InvalidArgument("random_instance: need n >= 2 and arity >= 2");
    std::mt19937_64 rng(seed);
    IlpInstance inst;
    inst.num_vars = n;
    inst.objective.resize(n);
    for (auto& c : inst.objective) c = 2.0 * uniform(rng) - 1.0;
    std::vector<std::uint8_t> point(n);
    for (auto& b : point) b = static_cast<std::uint8_t>(rng() & 1);
    for (std::size_t j = 0; j < m; ++j) {
        const auto arity = 2 + static_cast<std::size_t>(rng() % (std::min(max_arity, n) - 1));
        std::vector<std::uint32_t> vars(n);
        for (std::size_t i = 0; i < n; ++i) vars[i] = static_cast<std::uint32_t>(i);
        for (std::size_t k = 0; k < arity; ++k) std::swap(vars[k], vars[k + rng() % (n - k)]);
        vars.resize(arity);
        Constraint row;
        row.vars = vars;
        double lhs = 0.0;
        for (auto v : vars) {
            double a = 0.0;
            while (a == 0.0) a = static_cast<double>(static_cast<int>(rng() % 7) - 3);
            row.coeffs.push_back(a);
            lhs += a * point[v];
        }
        row.rel = rng() % 3 == 0 ? Relation::equal : Relation::less_equal;
        row.rhs = row.rel == Relation::equal ? lhs : lhs + static_cast<double>(rng() % 3);
        inst.constraints.push_back(std::move(row));
    }
    return inst;
}

std::vector<IlpInstance> invariant_suite(std::size_t count)
{
    std::vector<IlpInstance> out;
    out.push_back(tiny_instance());
    for (std::size_t s = 1; s <= count; ++s) out.push_back(generate_independent_set(12, 0.25, s));
    return out;
}

SuiteResult check_bdd_enumeration(const CheckConfig& config)
{
    std::mt19937_64 rng(config.seed);
    std::size_t mismatches = 0, tested = 0;
    for (std::size_t k = 0; k < 200; ++k) {
        const std::size_t arity = 1 + rng() % 10;
        std::vector<double> coeffs(arity);
        std::vector<std::uint32_t> order(arity);
        for (std::size_t t = 0; t < arity; ++t) {
            order[t] = static_cast<std::uint32_t>(t);
            coeffs[t] = static_cast<double>(static_cast<int>(rng() % 9) - 4);
        }
        const auto rel = rng() % 2 ? Relation::equal : Relation::less_equal;
        const double rhs = static_cast<double>(static_cast<int>(rng() % 9) - 3);
        std::set<std::vector<std::uint8_t>> expected;
        for (std::uint32_t mask = 0; mask < (1u << arity); ++mask) {
            std::vector<std::uint8_t> x(arity);
            double lhs = 0.0;
            for (std::size_t t = 0; t < arity; ++t) {
                x[t] = (mask >> (arity - 1 - t)) & 1u;
                lhs += coeffs[t] * x[t];
            }
            if (rel == Relation::equal ? lhs == rhs : lhs <= rhs) expected.insert(x);
        }
        ++tested;
        try {
            const auto bdd = build_bdd(coeffs, rel, rhs, order);
            const auto paths = enumerate_paths(bdd);
            const std::set<std::vector<std::uint8_t>> got(paths.begin(), paths.end());
            if (got != expected || got.size() != paths.size() || !is_reduced(bdd)) ++mismatches;
        } catch (const InfeasibleError&) {
            if (!expected.empty()) ++mismatches;
        }
    }
    return make_result("bdd-enumeration", static_cast<double>(mismatches), 0.0,
                       std::to_string(tested) + " random rows, mismatching path sets: " + std::to_string(mismatches));
}

SuiteResult check_feasibility(const CheckConfig& config)
{
    std::mt19937_64 rng(config.seed);
    double worst = 0.0;
    std::size_t checks = 0;
    for (const auto& inst : invariant_suite(config.suite_size)) {
        const auto problem = make_problem(inst);
        const double tol = feasibility_tolerance(problem);
        auto s = init_dual(problem);
        const auto params = SolverParams::defaults(problem.dec);
        Workspace ws;
        ws.fault = config.fault;
        auto note = [&] {
            worst = std::max(worst, feasibility_residual(problem, s) / tol);
            ++checks;
        };
        note();
        for (std::size_t k = 0; k < config.sweeps; ++k) {
            directional_pass(problem, s, ws, params, Direction::forward);
            note();
            directional_pass(problem, s, ws, params, Direction::reverse);
            note();
            std::vector<double> theta(problem.num_edges());
            for (auto& t : theta) t = normal(rng);
            nonparam_update(problem, s, theta);
            note();
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu states checked, worst residual %.3g x tolerance", checks, worst);
    return make_result("feasibility", worst, 1.0, buf);
}

SuiteResult check_monotonicity(const CheckConfig& config)
{
    std::mt19937_64 rng(config.seed + 1);
    double worst = 0.0;
    std::size_t passes = 0;
    const auto suite = invariant_suite(config.suite_size);
    for (std::size_t idx = 0; idx < suite.size(); ++idx) {
        const auto problem = make_problem(suite[idx]);
        auto run_params = [&](const SolverParams& params) {
            auto s = init_dual(problem);
            Workspace ws;
            ws.fault = config.fault;
            double prev = dual_objective(problem, s);
            for (std::size_t k = 0; k < config.sweeps; ++k) {
                for (auto dir : {Direction::forward, Direction::reverse}) {
                    directional_pass(problem, s, ws, params, dir);
                    const double cur = dual_objective(problem, s);
                    worst = std::max(worst, (prev - cur) / (1e-9 * (1.0 + std::abs(prev))));
                    prev = cur;
                    ++passes;
                }
            }
        };
        run_params(SolverParams::defaults(problem.dec));
        for (std::size_t d = 0; d < config.param_draws; ++d) run_params(random_params(problem.dec, rng));
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu passes, worst decrease %.3g x tolerance", passes, std::max(worst, 0.0));
    return make_result("monotonicity", worst, 1.0, buf);
}

SuiteResult check_bound_validity(const CheckConfig& config)
{
    std::mt19937_64 rng(config.seed + 2);
    double worst = 0.0;
    std::size_t bounds = 0;
    for (const auto& inst : invariant_suite(config.suite_size)) {
        const auto problem = make_problem(inst);
        const double opt = enumerate_optimum(inst).value;
        const double tol = 1e-9 * (1.0 + std::abs(opt));
        auto s = init_dual(problem);
        Workspace ws;
        const auto params = random_params(problem.dec, rng);
        auto note = [&] {
            worst = std::max(worst, (dual_objective(problem, s) - opt) / tol);
            ++bounds;
        };
        note();
        for (std::size_t k = 0; k < config.sweeps; ++k) {
            directional_pass(problem, s, ws, params, Direction::forward);
            note();
            directional_pass(problem, s, ws, params, Direction::reverse);
            note();
        }
    }
    // One constraint over every variable: the initial bound is the optimum.
    std::size_t exact_mismatch = 0;
    for (std::size_t k = 0; k < 20; ++k) {
        IlpInstance inst;
        inst.num_vars = 3 + rng() % 8;
        Constraint row;
        for (std::uint32_t i = 0; i < inst.num_vars; ++i) {
            inst.objective.push_back(static_cast<double>(static_cast<int>(rng() % 21) - 10));
            row.vars.push_back(i);
            row.coeffs.push_back(static_cast<double>(1 + rng() % 5));
        }
        row.rhs = static_cast<double>(rng() % (2 * inst.num_vars));
        inst.constraints.push_back(row);
        const auto problem = make_problem(inst);
        if (dual_objective(problem, init_dual(problem)) != enumerate_optimum(inst).value) ++exact_mismatch;
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu bounds, worst excess %.3g x tolerance; single-row init mismatches %zu/20", bounds,
                  std::max(worst, 0.0), exact_mismatch);
    auto r = make_result("bound-validity", worst, 1.0, buf);
    r.passed = r.passed && exact_mismatch == 0;
    return r;
}

SuiteResult check_convergence(const CheckConfig& config)
{
    const auto problem = make_problem(tiny_instance());
    auto s = init_dual(problem);
    Workspace ws;
    ws.fault = config.fault;
    const auto trace = run(problem, s, ws, SolverParams::defaults(problem.dec), 50);
    const double err = std::abs(trace.back().lower_bound + 2.0);
    char buf[120];
    std::snprintf(buf, sizeof buf, "TINY after 50 sweeps: %.17g (optimum -2)", trace.back().lower_bound);
    return make_result("convergence", err, 1e-6, buf);
}

SuiteResult check_solver_gradients(const CheckConfig& config)
{
    std::mt19937_64 rng(config.seed + 3);
    double worst = 0.0;
    std::size_t ok = 0, resampled = 0;
    std::uint64_t inst_seed = config.seed * 1000;
    while (ok < config.grad_instances && resampled < 50 * config.grad_instances) {
        const auto problem = make_problem(random_instance(++inst_seed, 8, 5, 4));
        const auto E = problem.num_edges();
        auto s = init_dual(problem);
        Workspace ws;
        const auto defaults = SolverParams::defaults(problem.dec);
        sweep(problem, s, ws, defaults);
        sweep(problem, s, ws, defaults);
        std::vector<double> x;
        x.insert(x.end(), s.hi.begin(), s.hi.end());
        x.insert(x.end(), s.lo.begin(), s.lo.end());
        x.insert(x.end(), s.M.begin(), s.M.end());
        for (std::size_t e = 0; e < E; ++e) x.push_back(0.5 * normal(rng));
        for (std::size_t e = 0; e < E; ++e) x.push_back(normal(rng));
        for (std::size_t e = 0; e < E; ++e) x.push_back(0.1 * normal(rng));
        std::vector<std::vector<double>> dirs(config.grad_directions, std::vector<double>(x.size()));
        for (auto& d : dirs) {
            for (auto& v : d) v = normal(rng);
            for (std::size_t e = 0; e < E; ++e)
                if (s.M[e] == 0.0) d[2 * E + e] = 0.0;  // max(M, 0) has a kink there
        }
        SolverRound f{&problem, 2, config.fault};
        const auto grad = f.gradient(x);
        try {
            const double err = finite_difference_check([&](std::span<const double> p) { return f.value(p); }, x, grad,
                                                       1e-5, dirs);
            worst = std::max(worst, err);
            ++ok;
        } catch (const DegeneratePoint&) {
            ++resampled;
        }
    }
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu instances x %zu directions (hi, lo, M, alpha-pre, omega-pre, theta), %zu resampled",
                  ok, config.grad_directions, resampled);
    auto r = make_result("solver-gradient", worst, 1e-4, buf);
    r.passed = r.passed && ok == config.grad_instances;
    return r;
}

SuiteResult check_network_gradients(const CheckConfig& config)
{
    double worst = 0.0;
    std::size_t checked = 0, resampled = 0, missing = 0;
    for (auto arch : {Arch::doge, Arch::doge_m}) {
        for (std::size_t inst = 0; inst < config.grad_instances; ++inst) {
            bool done = false;
            for (std::uint64_t attempt = 0; attempt < 10 && !done; ++attempt) {
                const std::uint64_t key = config.seed + 1000 * inst + attempt;
                std::mt19937_64 rng(key * 17 + static_cast<std::uint64_t>(arch));
                const auto problem = make_problem(random_instance(key + 100, 4, 3, 3));
                const auto E = problem.num_edges();
                const auto n = problem.dec.num_vars();
                auto s = init_dual(problem);
                Workspace ws;
                sweep(problem, s, ws, SolverParams::defaults(problem.dec));
                FeatureHistory hist;
                const auto feats = compute_features(problem, s, hist);
                auto w = init_weights(arch, key);
                for (auto& v : w.values) v += 0.1 * normal(rng);
                auto prev = zero_lstm_state(n);
                for (auto& v : prev.h) v = 0.5 * normal(rng);
                for (auto& v : prev.c) v = 0.5 * normal(rng);
                std::vector<double> r1(E), r2(E), r3(E);
                for (std::size_t e = 0; e < E; ++e) {
                    r1[e] = normal(rng);
                    r2[e] = normal(rng);
                    r3[e] = normal(rng);
                }
                LstmState r_state = zero_lstm_state(n);
                for (auto& v : r_state.h) v = normal(rng);
                for (auto& v : r_state.c) v = normal(rng);
                auto value = [&](const GnnWeights& weights, const LstmState& p) {
                    const auto out = gnn_forward(weights, problem.dec, feats, p);
                    double v = 0.0;
                    for (std::size_t e = 0; e < E; ++e) v += r1[e] * out.alpha[e] + r2[e] * out.omega[e] + r3[e] * out.theta[e];
                    for (std::size_t k = 0; k < out.state.h.size(); ++k)
                        v += r_state.h[k] * out.state.h[k] + r_state.c[k] * out.state.c[k];
                    return v;
                };
                NetCache cache;
                const auto out = gnn_forward(w, problem.dec, feats, prev, &cache);
                const auto pre = transform_backward(problem.dec, out, r1, r2, r3);
                std::vector<double> dw;
                const auto d_prev = gnn_backward(w, problem.dec, cache, pre,
                                                 arch == Arch::doge_m ? r_state : LstmState{}, dw);
                try {
                    auto fw = [&](std::span<const double> x) {
                        GnnWeights tmp{arch, std::vector<double>(x.begin(), x.end())};
                        return value(tmp, prev);
                    };
                    double err = finite_difference_check(fw, w.values, dw, 1e-6);
                    if (arch == Arch::doge_m) {
                        std::vector<double> px(prev.h);
                        px.insert(px.end(), prev.c.begin(), prev.c.end());
                        std::vector<double> pg(d_prev.h);
                        pg.insert(pg.end(), d_prev.c.begin(), d_prev.c.end());
                        auto fs = [&](std::span<const double> x) {
                            LstmState p;
                            p.h.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n * kLstmDim));
                            p.c.assign(x.begin() + static_cast<std::ptrdiff_t>(n * kLstmDim), x.end());
                            return value(w, p);
                        };
                        err = std::max(err, finite_difference_check(fs, px, pg, 1e-6));
                    }
                    worst = std::max(worst, err);
                    checked += w.values.size();
                    done = true;
                } catch (const DegeneratePoint&) {
                    ++resampled;
                }
            }
            if (!done) ++missing;
        }
    }
    const auto detail = std::to_string(config.grad_instances) + " instances per architecture, " + std::to_string(checked) +
                        " weights checked coordinate-wise, " + std::to_string(resampled) + " resampled, " +
                        std::to_string(missing) + " without a non-degenerate point";
    auto r = make_result("network-gradient", worst, 1e-4, detail);
    r.passed = r.passed && missing == 0;
    return r;
}

SuiteResult check_zero_network(const CheckConfig& config)
{
    std::size_t mismatches = 0, compared = 0;
    const std::size_t T = 5, R = 6;
    for (const auto& inst : invariant_suite(config.suite_size)) {
        const auto problem = make_problem(inst);
        for (auto arch : {Arch::doge, Arch::doge_m}) {
            const auto res = inference(problem, zero_nets(arch), {T, R, 1e-6, 0});
            auto s = init_dual(problem);
            Workspace ws;
            const auto ref = run(problem, s, ws, SolverParams::defaults(problem.dec), res.rounds * T);
            ++compared;
            bool same = ref.size() == res.trace.size() && s == res.state;
            for (std::size_t k = 0; same && k < ref.size(); ++k)
                same = ref[k].lower_bound == res.trace[k].lower_bound;
            if (!same) ++mismatches;
        }
    }
    return make_result("zero-network", static_cast<double>(mismatches), 0.0,
                       std::to_string(compared) + " runs compared bit-for-bit, " + std::to_string(mismatches) + " differ");
}

SuiteResult check_kernels(const CheckConfig& config)
{
    if (!kernels::supported(kernels::Isa::avx2))
        return make_result("kernels", 0.0, 1e-12, "avx2 not available; scalar kernels only");
    const auto& a = kernels::table(kernels::Isa::scalar);
    const auto& b = kernels::table(kernels::Isa::avx2);
    std::mt19937_64 rng(config.seed + 5);
    double worst = 0.0;
    auto rel = [](double x, double y) { return std::abs(x - y) / (1.0 + std::abs(x)); };
    for (std::size_t rows = 1; rows <= 13; rows += 3) {
        for (std::size_t cols = 1; cols <= 70; cols += 7) {
            std::vector<double> W(rows * cols), x(cols), y(rows);
            for (auto* v : {&W, &x, &y})
                for (auto& t : *v) t = normal(rng);
            worst = std::max(worst, rel(a.dot(W.data(), x.data(), cols), b.dot(W.data(), x.data(), cols)));
            auto y1 = y, y2 = y;
            a.gemv(W.data(), x.data(), y1.data(), rows, cols);
            b.gemv(W.data(), x.data(), y2.data(), rows, cols);
            for (std::size_t k = 0; k < rows; ++k) worst = std::max(worst, rel(y1[k], y2[k]));
            auto x1 = x, x2 = x;
            a.gemv_t(W.data(), y.data(), x1.data(), rows, cols);
            b.gemv_t(W.data(), y.data(), x2.data(), rows, cols);
            for (std::size_t k = 0; k < cols; ++k) worst = std::max(worst, rel(x1[k], x2[k]));
            auto W1 = W, W2 = W;
            a.ger(W1.data(), y.data(), x.data(), rows, cols);
            b.ger(W2.data(), y.data(), x.data(), rows, cols);
            for (std::size_t k = 0; k < W.size(); ++k) worst = std::max(worst, rel(W1[k], W2[k]));
        }
    }
    return make_result("kernels", worst, 1e-12, "scalar vs avx2 on dot, gemv, gemv_t, ger");
}

std::vector<SuiteResult> run_all_checks(const CheckConfig& config)
{
    return {check_bdd_enumeration(config), check_feasibility(config),     check_monotonicity(config),
            check_bound_validity(config),  check_convergence(config),     check_solver_gradients(config),
            check_network_gradients(config), check_zero_network(config), check_kernels(config)};
}

void print_report(std::ostream& out, const std::vector<SuiteResult>& results)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-18s %-6s %12s %12s  %s\n", "suite", "result", "value", "limit", "detail");
    out << buf;
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%-18s %-6s %12.4g %12.4g  ", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.value,
                      r.limit);
        out << buf << r.detail << '\n';
    }
}

}  // namespace doge

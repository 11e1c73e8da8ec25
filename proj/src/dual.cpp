#include "doge/dual.hpp"

#include "doge/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include <omp.h>

namespace doge {

namespace {

// Below this many edges a block runs serially; thread start-up dominates.
constexpr std::size_t kParallelBlock = 512;

inline void apply_edge(const Problem& problem, DualState& state, Workspace& ws, std::uint32_t e,
                       const SolverParams& params, Direction dir, PassRecord* record)
{
    const auto& dec = problem.dec;
    const auto j = dec.edge_sub[e];
    const auto t = dec.edge_level[e];
    const auto i = dec.edge_var[e];
    const auto& bdd = problem.bdds[j];
    auto& costs = ws.costs[j];
    const auto off = dec.sub_offset[j];

    const auto m = min_marginals(bdd, costs, t, state.hi[e], state.lo[e]);
    const bool finite = std::isfinite(m[0]) && std::isfinite(m[1]);
    // A variable fixed by its constraint has nothing to redistribute.
    const double diff = finite ? m[1] - m[0] : 0.0;
    if (record) {
        record->diff[e] = diff;
        record->finite[e] = finite;
        if (finite) {
            std::span<const double> hi(state.hi.data() + off, bdd.num_levels());
            std::span<const double> lo(state.lo.data() + off, bdd.num_levels());
            const auto s1 = argmin_restricted(bdd, costs, hi, lo, t, 1);
            const auto s0 = argmin_restricted(bdd, costs, hi, lo, t, 0);
            std::copy(s1.x.begin(), s1.x.end(), record->path1.begin() + static_cast<std::ptrdiff_t>(problem.path_offset[e]));
            std::copy(s0.x.begin(), s0.x.end(), record->path0.begin() + static_cast<std::ptrdiff_t>(problem.path_offset[e]));
        }
    }
    const double m_new = params.omega[e] * diff;
    if (diff > 0.0)
        state.hi[e] -= m_new;
    else if (diff < 0.0)
        state.lo[e] += m_new;
    state.hi[e] += params.alpha[e] * ws.snapshot_pos[i];
    state.lo[e] += params.alpha[e] * ws.snapshot_neg[i];
    state.M[e] = m_new;

    if (dir == Direction::forward)
        update_from_root(bdd, t, state.hi[e], state.lo[e], costs);
    else
        update_to_top(bdd, t, state.hi[e], state.lo[e], costs);
}

}  // namespace

BlockSchedule build_schedule(const Decomposition& dec)
{
    BlockSchedule sched;
    for (std::size_t j = 0; j < dec.num_subproblems(); ++j) {
        const auto len = dec.subproblem_size(j);
        if (sched.blocks.size() < len) sched.blocks.resize(len);
        for (std::size_t t = 0; t < len; ++t) sched.blocks[t].push_back(static_cast<std::uint32_t>(dec.sub_offset[j] + t));
    }
    return sched;
}

Problem make_problem(IlpInstance instance, std::ostream* warnings)
{
    Problem p;
    p.dec = decompose(instance, warnings);
    p.instance = std::move(instance);
    p.bdds.reserve(p.dec.num_subproblems());
    for (std::size_t j = 0; j < p.dec.num_subproblems(); ++j) {
        const auto& row = p.instance.constraints[j];
        try {
            p.bdds.push_back(build_bdd(row));
        } catch (const InfeasibleError&) {
            throw InfeasibleError("constraint " + std::to_string(j + 1) + " admits no 0-1 assignment");
        }
    }
    p.schedule = build_schedule(p.dec);
    for (auto i : p.dec.isolated_vars) p.constant += std::min(p.instance.objective[i], 0.0);
    for (double c : p.instance.objective) p.cost_scale = std::max(p.cost_scale, std::abs(c));
    p.path_offset.resize(p.num_edges() + 1, 0);
    for (std::size_t e = 0; e < p.num_edges(); ++e)
        p.path_offset[e + 1] = p.path_offset[e] + p.dec.subproblem_size(p.dec.edge_sub[e]);
    return p;
}

SolverParams SolverParams::defaults(const Decomposition& dec, double omega)
{
    SolverParams params;
    params.alpha.resize(dec.num_dual_vars);
    params.omega.assign(dec.num_dual_vars, omega);
    for (std::size_t e = 0; e < dec.num_dual_vars; ++e)
        params.alpha[e] = 1.0 / static_cast<double>(dec.degree(dec.edge_var[e]));
    // Same rounding as predicted weights, which are normalized before use.
    normalize_params(dec, params);
    return params;
}

void normalize_params(const Decomposition& dec, SolverParams& params)
{
    if (params.alpha.size() != dec.num_dual_vars || params.omega.size() != dec.num_dual_vars)
        throw InvalidArgument("solver parameters must have one entry per dual variable");
    for (double w : params.omega)
        if (!(w > 0.0 && w < 1.0)) throw InvalidArgument("omega must lie in (0, 1)");
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        double sum = 0.0;
        for (auto e : dec.edges_of_var(i)) {
            if (!(params.alpha[e] >= 0.0)) throw InvalidArgument("alpha must be non-negative");
            sum += params.alpha[e];
        }
        if (dec.degree(i) == 0) continue;
        if (std::abs(sum - 1.0) > 1e-6) throw InvalidArgument("alpha of variable " + std::to_string(i + 1) + " sums to " + std::to_string(sum));
        for (auto e : dec.edges_of_var(i)) params.alpha[e] /= sum;
    }
}

DualState init_dual(const Problem& problem)
{
    const auto& dec = problem.dec;
    DualState s;
    s.hi.resize(dec.num_dual_vars);
    s.lo.assign(dec.num_dual_vars, 0.0);
    s.M.assign(dec.num_dual_vars, 0.0);
    for (std::size_t e = 0; e < dec.num_dual_vars; ++e) {
        const auto i = dec.edge_var[e];
        s.hi[e] = problem.instance.objective[i] / static_cast<double>(dec.degree(i));
    }
    return s;
}

void refresh_costs(const Problem& problem, const DualState& state, Workspace& ws)
{
    const auto m = problem.dec.num_subproblems();
    ws.costs.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto off = problem.dec.sub_offset[j];
        const auto len = problem.dec.subproblem_size(j);
        compute_shortest_paths(problem.bdds[j], std::span(state.hi.data() + off, len), std::span(state.lo.data() + off, len),
                               ws.costs[j]);
    }
}

void take_snapshot(const Problem& problem, const DualState& state, Workspace& ws)
{
    const auto& dec = problem.dec;
    ws.snapshot_pos.assign(dec.num_vars(), 0.0);
    ws.snapshot_neg.assign(dec.num_vars(), 0.0);
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        double pos = 0.0, neg = 0.0;
        for (auto e : dec.edges_of_var(i)) {
            pos += std::max(state.M[e], 0.0);
            neg -= std::min(state.M[e], 0.0);
        }
        ws.snapshot_pos[i] = pos;
        ws.snapshot_neg[i] = neg;
    }
}

void block_update(const Problem& problem, DualState& state, Workspace& ws, std::span<const std::uint32_t> block,
                  const SolverParams& params, Direction dir, PassRecord* record)
{
    if (ws.fault == Fault::no_snapshot_freeze) take_snapshot(problem, state, ws);
    const auto count = static_cast<std::ptrdiff_t>(block.size());
    if (block.size() >= kParallelBlock) {
        const int threads = ws.threads > 0 ? ws.threads : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::ptrdiff_t k = 0; k < count; ++k) apply_edge(problem, state, ws, block[k], params, dir, record);
    } else {
        for (std::ptrdiff_t k = 0; k < count; ++k) apply_edge(problem, state, ws, block[k], params, dir, record);
    }
}

void directional_pass(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                      Direction dir, PassRecord* record)
{
    const auto& blocks = problem.schedule.blocks;
    if (blocks.empty()) return;
    refresh_costs(problem, state, ws);
    take_snapshot(problem, state, ws);
    if (record) {
        const auto edges = problem.num_edges();
        record->diff.assign(edges, 0.0);
        record->finite.assign(edges, 0);
        record->path1.assign(problem.path_offset[edges], 0);
        record->path0.assign(problem.path_offset[edges], 0);
    }
    if (dir == Direction::forward) {
        for (const auto& block : blocks) block_update(problem, state, ws, block, params, dir, record);
    } else {
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) block_update(problem, state, ws, *it, params, dir, record);
    }
}

void sweep(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params)
{
    directional_pass(problem, state, ws, params, Direction::forward);
    directional_pass(problem, state, ws, params, Direction::reverse);
    ++state.sweep_count;
}

std::vector<BoundRecord> run(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                             std::size_t sweeps)
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    std::vector<BoundRecord> trace;
    trace.push_back({state.sweep_count, 0.0, dual_objective(problem, state)});
    for (std::size_t k = 0; k < sweeps; ++k) {
        sweep(problem, state, ws, params);
        const double secs = std::chrono::duration<double>(clock::now() - start).count();
        trace.push_back({state.sweep_count, secs, dual_objective(problem, state)});
    }
    return trace;
}

std::vector<double> subproblem_values(const Problem& problem, const DualState& state)
{
    const auto m = problem.dec.num_subproblems();
    std::vector<double> values(m);
    NodeCosts costs;
    for (std::size_t j = 0; j < m; ++j) {
        const auto off = problem.dec.sub_offset[j];
        const auto len = problem.dec.subproblem_size(j);
        compute_shortest_paths(problem.bdds[j], std::span(state.hi.data() + off, len), std::span(state.lo.data() + off, len),
                               costs);
        values[j] = subproblem_value(costs);
    }
    return values;
}

double dual_objective(const Problem& problem, const DualState& state)
{
    double total = problem.constant;
    for (double v : subproblem_values(problem, state)) total += v;
    return total;
}

void subproblem_minimizers(const Problem& problem, const DualState& state, std::vector<std::uint8_t>& bits,
                           std::vector<double>& values)
{
    const auto m = problem.dec.num_subproblems();
    bits.assign(problem.num_edges(), 0);
    values.resize(m);
    NodeCosts costs;
    for (std::size_t j = 0; j < m; ++j) {
        const auto off = problem.dec.sub_offset[j];
        const auto len = problem.dec.subproblem_size(j);
        std::span<const double> hi(state.hi.data() + off, len), lo(state.lo.data() + off, len);
        compute_shortest_paths(problem.bdds[j], hi, lo, costs);
        const auto path = optimal_assignment(problem.bdds[j], costs, hi, lo);
        std::copy(path.x.begin(), path.x.end(), bits.begin() + static_cast<std::ptrdiff_t>(off));
        values[j] = path.value;
    }
}

void nonparam_update(const Problem& problem, DualState& state, std::span<const double> theta)
{
    const auto& dec = problem.dec;
    if (theta.size() != dec.num_dual_vars) throw InvalidArgument("theta must have one entry per dual variable");
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        const auto edges = dec.edges_of_var(i);
        if (edges.empty()) continue;
        double sum = 0.0;
        for (auto e : edges) sum += theta[e];
        const double mean = sum / static_cast<double>(edges.size());
        for (auto e : edges) {
            const double d = theta[e] - mean;
            if (d != 0.0) state.hi[e] += d;  // keeps -0.0 costs bit-identical under a zero update
        }
    }
}

double feasibility_residual(const Problem& problem, const DualState& state)
{
    const auto& dec = problem.dec;
    double worst = 0.0;
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        const auto edges = dec.edges_of_var(i);
        if (edges.empty()) continue;
        double one = 0.0, zero = 0.0;
        for (auto e : edges) {
            one += state.hi[e] + std::max(state.M[e], 0.0);
            zero += state.lo[e] - std::min(state.M[e], 0.0);
        }
        worst = std::max({worst, std::abs(one - problem.instance.objective[i]), std::abs(zero)});
    }
    return worst;
}

double feasibility_tolerance(const Problem& problem) { return 1e-9 * (1.0 + problem.cost_scale); }

}  // namespace doge

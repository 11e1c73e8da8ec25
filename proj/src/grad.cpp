#include "doge/grad.hpp"

#include "doge/error.hpp"

#include <cmath>

#include <omp.h>

namespace doge {

void GradState::resize(std::size_t edges)
{
    d_hi.assign(edges, 0.0);
    d_lo.assign(edges, 0.0);
    d_M.assign(edges, 0.0);
    d_alpha.assign(edges, 0.0);
    d_omega.assign(edges, 0.0);
    d_theta.assign(edges, 0.0);
}

Tape record_sweeps(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                   std::size_t sweeps)
{
    Tape tape;
    tape.params = params;
    tape.checkpoints.reserve(2 * sweeps + 1);
    tape.checkpoints.push_back(state);
    for (std::size_t k = 0; k < sweeps; ++k) {
        directional_pass(problem, state, ws, params, Direction::forward);
        tape.checkpoints.push_back(state);
        directional_pass(problem, state, ws, params, Direction::reverse);
        ++state.sweep_count;
        tape.checkpoints.push_back(state);
    }
    return tape;
}

LossGrad loss_and_grad(const Problem& problem, const DualState& state)
{
    LossGrad out;
    std::vector<std::uint8_t> bits;
    std::vector<double> values;
    subproblem_minimizers(problem, state, bits, values);
    out.loss = problem.constant;
    for (double v : values) out.loss += v;
    out.d_hi.resize(bits.size());
    out.d_lo.resize(bits.size());
    for (std::size_t e = 0; e < bits.size(); ++e) {
        out.d_hi[e] = bits[e];
        out.d_lo[e] = 1.0 - bits[e];
    }
    return out;
}

namespace {

inline void edge_backward(const Problem& problem, const PassRecord& rec, const SolverParams& params,
                          const Workspace& ws, std::uint32_t e, GradState& grad, std::vector<double>& g_pos,
                          std::vector<double>& g_neg)
{
    const auto& dec = problem.dec;
    const auto i = dec.edge_var[e];
    const auto j = dec.edge_sub[e];
    const double gh = grad.d_hi[e];
    const double gl = grad.d_lo[e];
    const double diff = rec.diff[e];

    // hi_out = hi_in - [diff > 0] M_new + alpha P_i,  lo_out = lo_in + [diff < 0] M_new + alpha N_i
    double g_mnew = grad.d_M[e];
    if (diff > 0.0) g_mnew -= gh;
    if (diff < 0.0) g_mnew += gl;
    grad.d_alpha[e] += gh * ws.snapshot_pos[i] + gl * ws.snapshot_neg[i];
    g_pos[e] = params.alpha[e] * gh;
    g_neg[e] = params.alpha[e] * gl;
    grad.d_omega[e] += g_mnew * diff;
    grad.d_M[e] = 0.0;
    if (!rec.finite[e]) return;

    // M_new = omega (m1 - m0); each min-marginal is linear along its minimizer.
    const double g_diff = params.omega[e] * g_mnew;
    if (g_diff == 0.0) return;
    const auto off = dec.sub_offset[j];
    const auto len = dec.subproblem_size(j);
    const auto* s1 = rec.path1.data() + problem.path_offset[e];
    const auto* s0 = rec.path0.data() + problem.path_offset[e];
    for (std::size_t p = 0; p < len; ++p) {
        const double delta = static_cast<double>(s1[p]) - static_cast<double>(s0[p]);
        if (delta == 0.0) continue;
        grad.d_hi[off + p] += g_diff * delta;
        grad.d_lo[off + p] -= g_diff * delta;
    }
}

}  // namespace

void pass_backward(const Problem& problem, const DualState& in, const DualState& out, const SolverParams& params,
                   Direction dir, GradState& grad, Workspace& ws)
{
    const auto& blocks = problem.schedule.blocks;
    if (blocks.empty()) return;
    DualState replay = in;
    PassRecord rec;
    directional_pass(problem, replay, ws, params, dir, &rec);
    if (replay.hi != out.hi || replay.lo != out.lo || replay.M != out.M)
        throw Error("pass_backward: replay does not reproduce the checkpointed state");
    take_snapshot(problem, in, ws);

    const auto edges = problem.num_edges();
    std::vector<double> g_pos(edges, 0.0), g_neg(edges, 0.0);
    const int threads = ws.threads > 0 ? ws.threads : omp_get_max_threads();
    auto run_block = [&](const std::vector<std::uint32_t>& block) {
        const auto count = static_cast<std::ptrdiff_t>(block.size());
        if (block.size() >= 512) {
#pragma omp parallel for schedule(static) num_threads(threads)
            for (std::ptrdiff_t k = 0; k < count; ++k) edge_backward(problem, rec, params, ws, block[k], grad, g_pos, g_neg);
        } else {
            for (std::ptrdiff_t k = 0; k < count; ++k) edge_backward(problem, rec, params, ws, block[k], grad, g_pos, g_neg);
        }
    };
    if (dir == Direction::forward) {
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) run_block(*it);
    } else {
        for (const auto& block : blocks) run_block(block);
    }

    // The pass reads its input M only through the sign-split snapshot.
    const auto& dec = problem.dec;
    const double sign = ws.fault == Fault::flip_snapshot_adjoint ? -1.0 : 1.0;
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        double gp = 0.0, gn = 0.0;
        for (auto e : dec.edges_of_var(i)) {
            gp += g_pos[e];
            gn += g_neg[e];
        }
        for (auto e : dec.edges_of_var(i)) {
            double g = 0.0;
            if (in.M[e] > 0.0) g = gp;
            if (in.M[e] < 0.0) g = -gn;
            grad.d_M[e] = sign * g;
        }
    }
}

void round_backward(const Problem& problem, const Tape& tape, GradState& grad, Workspace& ws)
{
    for (std::size_t k = tape.passes(); k-- > 0;) {
        const auto dir = k % 2 == 0 ? Direction::forward : Direction::reverse;
        pass_backward(problem, tape.checkpoints[k], tape.checkpoints[k + 1], tape.params, dir, grad, ws);
    }
}

std::vector<double> nonparam_backward(const Decomposition& dec, std::span<const double> d_hi)
{
    std::vector<double> d_theta(dec.num_dual_vars, 0.0);
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        const auto edges = dec.edges_of_var(i);
        if (edges.empty()) continue;
        double sum = 0.0;
        for (auto e : edges) sum += d_hi[e];
        const double mean = sum / static_cast<double>(edges.size());
        for (auto e : edges) d_theta[e] = d_hi[e] - mean;
    }
    return d_theta;
}

double finite_difference_check(const ScalarFunction& f, std::span<const double> point, std::span<const double> grad,
                               double step, std::span<const std::vector<double>> directions, double kink_tolerance)
{
    if (grad.size() != point.size()) throw InvalidArgument("finite_difference_check: gradient size mismatch");
    const auto n = point.size();
    std::vector<double> x(point.begin(), point.end());
    const double f0 = f(x);
    double worst = 0.0;
    // eval(h) = f(point + h * dir), dir given as a coordinate or a dense vector
    auto probe = [&](auto&& eval, double analytic) {
        const double fp = eval(step);
        const double fm = eval(-step);
        const double fd = (fp - fm) / (2.0 * step);
        const double forward = (fp - f0) / step;
        const double backward = (f0 - fm) / step;
        if (std::abs(forward - backward) > kink_tolerance * (1.0 + std::abs(fd)))
            throw DegeneratePoint("finite_difference_check: one-sided slopes differ, kink within one step");
        worst = std::max(worst, std::abs(fd - analytic) / (1.0 + std::abs(fd)));
    };
    if (directions.empty()) {
        for (std::size_t k = 0; k < n; ++k) {
            probe(
                [&](double h) {
                    x[k] = point[k] + h;
                    const double v = f(x);
                    x[k] = point[k];
                    return v;
                },
                grad[k]);
        }
    } else {
        for (const auto& d : directions) {
            if (d.size() != n) throw InvalidArgument("finite_difference_check: direction size mismatch");
            double analytic = 0.0;
            for (std::size_t k = 0; k < n; ++k) analytic += grad[k] * d[k];
            probe(
                [&](double h) {
                    for (std::size_t k = 0; k < n; ++k) x[k] = point[k] + h * d[k];
                    return f(x);
                },
                analytic);
        }
    }
    return worst;
}

}  // namespace doge

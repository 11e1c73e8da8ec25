#pragma once

#include "doge/bdd.hpp"
#include "doge/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace doge {

// B_t = {(i,j) : i is the t-th variable of I_j}; each block touches every
// subproblem at most once.
struct BlockSchedule {
    std::vector<std::vector<std::uint32_t>> blocks;  // dual variable (edge) ids

    std::size_t size() const { return blocks.size(); }
};

BlockSchedule build_schedule(const Decomposition& dec);

// Everything about an instance that stays fixed while its dual is optimized.
struct Problem {
    IlpInstance instance;
    Decomposition dec;
    std::vector<Bdd> bdds;
    BlockSchedule schedule;
    double constant = 0.0;    // sum over isolated variables of min(c_i, 0)
    double cost_scale = 0.0;  // ||c||_inf
    std::vector<std::size_t> path_offset;  // per edge, into per-pass minimizer storage

    std::size_t num_edges() const { return dec.num_dual_vars; }
    std::span<const std::uint32_t> vars_of(std::size_t j) const { return dec.subproblem_vars[j]; }
};

// Decomposes, builds one diagram per constraint. Throws InfeasibleError if a
// single constraint has no 0-1 solution.
Problem make_problem(IlpInstance instance, std::ostream* warnings = nullptr);

// Lifted dual: hi / lo are the one- and zero-arc costs of each dual variable,
// M the deferred min-marginal differences.
struct DualState {
    std::vector<double> hi;
    std::vector<double> lo;
    std::vector<double> M;
    std::size_t sweep_count = 0;

    bool operator==(const DualState&) const = default;
};

struct SolverParams {
    std::vector<double> alpha;  // per edge, sums to one over J_i
    std::vector<double> omega;  // per edge, in (0, 1)

    static SolverParams defaults(const Decomposition& dec, double omega = 0.5);
};

// Throws InvalidArgument unless alpha >= 0, |sum_j alpha_ij - 1| <= 1e-6 and
// omega in (0, 1); then rescales alpha so each variable's weights sum to one.
void normalize_params(const Decomposition& dec, SolverParams& params);

enum class Direction { forward, reverse };

// Test-only fault switches exercised by the check suites.
enum class Fault : std::uint8_t {
    none,
    no_snapshot_freeze,   // re-snapshot deferred mass before every block
    flip_snapshot_adjoint // negate the deferred-mass adjoint in the backward pass
};

// Per-edge quantities a pass produces for the backward replay.
struct PassRecord {
    std::vector<double> diff;           // m1 - m0 (0 where a branch is infeasible)
    std::vector<std::uint8_t> finite;   // 1 if both min-marginals were finite
    std::vector<std::uint8_t> path1;    // s(i, 1) over the levels of the edge's subproblem
    std::vector<std::uint8_t> path0;    // s(i, 0)
};

// Mutable scratch of one solve: shortest paths per subproblem and the
// sweep-start snapshot of deferred mass split by sign.
struct Workspace {
    std::vector<NodeCosts> costs;
    std::vector<double> snapshot_pos;  // sum_k max(M_ik, 0)
    std::vector<double> snapshot_neg;  // -sum_k min(M_ik, 0)
    Fault fault = Fault::none;
    int threads = 0;                   // 0: OpenMP default
};

DualState init_dual(const Problem& problem);

void refresh_costs(const Problem& problem, const DualState& state, Workspace& ws);
void take_snapshot(const Problem& problem, const DualState& state, Workspace& ws);

// One BlockUpdate. Expects refresh_costs/take_snapshot at pass start and the
// previous blocks of this pass applied in order.
void block_update(const Problem& problem, DualState& state, Workspace& ws, std::span<const std::uint32_t> block,
                  const SolverParams& params, Direction dir, PassRecord* record = nullptr);

void directional_pass(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                      Direction dir, PassRecord* record = nullptr);

// Forward pass over B_1..B_u, then reverse pass over B_u..B_1.
void sweep(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params);

struct BoundRecord {
    std::size_t sweep = 0;
    double seconds = 0.0;
    double lower_bound = 0.0;
};

// Runs T sweeps and records the initial bound plus one bound per sweep.
std::vector<BoundRecord> run(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                             std::size_t sweeps);

// Sum of subproblem optima plus the isolated-variable constant.
double dual_objective(const Problem& problem, const DualState& state);
std::vector<double> subproblem_values(const Problem& problem, const DualState& state);

// Optimal assignment bit per edge (lo-preferring tie-break) and E^j.
void subproblem_minimizers(const Problem& problem, const DualState& state, std::vector<std::uint8_t>& bits,
                           std::vector<double>& values);

// hi_ij += theta_ij - mean_{k in J_i} theta_ik.
void nonparam_update(const Problem& problem, DualState& state, std::span<const double> theta);

// Max violation of the lifted coupling identities
//   sum_j hi_ij + sum_j max(M_ij, 0) = c_i,   sum_j lo_ij - sum_j min(M_ij, 0) = 0.
double feasibility_residual(const Problem& problem, const DualState& state);
double feasibility_tolerance(const Problem& problem);

}  // namespace doge

#pragma once

#include "doge/dual.hpp"
#include "doge/error.hpp"

#include <functional>
#include <span>
#include <vector>

namespace doge {

// Adjoints of the loss. d_alpha / d_omega are taken w.r.t. the
// post-transform parameters and accumulate over all passes of a round.
struct GradState {
    std::vector<double> d_hi;
    std::vector<double> d_lo;
    std::vector<double> d_M;
    std::vector<double> d_alpha;
    std::vector<double> d_omega;
    std::vector<double> d_theta;

    void resize(std::size_t edges);
};

// Dual states at every directional-pass boundary of a round (2T + 1 states);
// block internals are recomputed from them during the backward pass.
struct Tape {
    std::vector<DualState> checkpoints;
    SolverParams params;

    std::size_t passes() const { return checkpoints.empty() ? 0 : checkpoints.size() - 1; }
};

// Runs `sweeps` sweeps from `state` and records checkpoints.
Tape record_sweeps(const Problem& problem, DualState& state, Workspace& ws, const SolverParams& params,
                   std::size_t sweeps);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> d_hi;
    std::vector<double> d_lo;
};

// L = sum_j E^j (plus the isolated-variable constant); the supergradient puts
// the minimizer bit on the one side and its complement on the zero side.
LossGrad loss_and_grad(const Problem& problem, const DualState& state);

// Backpropagates one directional pass. grad.d_hi / d_lo / d_M hold the
// adjoints of the pass output on entry and of its input on exit; d_alpha and
// d_omega accumulate. Throws Error if the replay does not reproduce `out`.
void pass_backward(const Problem& problem, const DualState& in, const DualState& out, const SolverParams& params,
                   Direction dir, GradState& grad, Workspace& ws);

// Reverse of all passes stored in the tape.
void round_backward(const Problem& problem, const Tape& tape, GradState& grad, Workspace& ws);

// d_theta_ij = g_ij - mean_{k in J_i} g_ik for g = d_hi.
std::vector<double> nonparam_backward(const Decomposition& dec, std::span<const double> d_hi);

// Raised when one-sided differences disagree, i.e. a kink lies within one step.
class DegeneratePoint : public Error {
public:
    using Error::Error;
};

using ScalarFunction = std::function<double(std::span<const double>)>;

// Max over the probed directions (coordinates when `directions` is empty) of
// |fd - analytic| / (1 + |fd|) using central differences.
double finite_difference_check(const ScalarFunction& f, std::span<const double> point, std::span<const double> grad,
                               double step, std::span<const std::vector<double>> directions = {},
                               double kink_tolerance = 1e-3);

}  // namespace doge

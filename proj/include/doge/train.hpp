#pragma once

#include "doge/grad.hpp"
#include "doge/net.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace doge {

struct TrainConfig {
    std::size_t rounds = 20;          // R
    std::size_t sweeps = 20;          // T
    double lr = 1e-3;
    std::size_t batch = 4;
    std::size_t iters = 100;
    std::uint64_t seed = 0;
    Arch arch = Arch::doge;
    double clip = 50.0;
    std::size_t backprop_rounds = 0;  // 0: 1 for doge, 3 for doge-m
    int threads = 0;

    void validate() const;
    std::size_t tracked_rounds() const;
};

// 1-based round k runs the early network iff k <= ceil(R / 2).
bool is_early_round(std::size_t k, std::size_t rounds);

struct NetPair {
    GnnWeights early;
    GnnWeights late;

    const GnnWeights& for_round(std::size_t k, std::size_t rounds) const
    {
        return is_early_round(k, rounds) ? early : late;
    }
};

// Random init with the output layer zeroed (predictions start at defaults).
NetPair init_nets(Arch arch, std::uint64_t seed);
NetPair zero_nets(Arch arch);
void save_nets(const std::string& path, const NetPair& nets);
NetPair load_nets(const std::string& path);

// Dual state plus everything carried from one round to the next.
struct Session {
    const Problem* problem = nullptr;
    DualState state;
    Workspace ws;
    FeatureHistory history;
    LstmState lstm;
};

Session start_session(const Problem& problem, int threads = 0);

// What the backward pass needs from one tracked round.
struct RoundRecord {
    NetCache cache;
    Tape tape;
    const GnnWeights* net = nullptr;
    bool early = true;
};

// Features -> network -> non-parametric update -> T sweeps. Appends one bound
// per sweep to `trace` when given; records the round when `record` is given.
void run_round(Session& session, const GnnWeights& net, std::size_t sweeps, RoundRecord* record = nullptr,
               std::vector<BoundRecord>* trace = nullptr);

// L2-norm clip of the concatenated gradient; returns the norm before clipping.
double clip_gradient(std::vector<double>& grad, double max_norm);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Bias-corrected Adam ascent step on `weights` (the loss is maximized). The
// gradient is clipped to `clip` in l2 norm first.
void adam_step(std::vector<double>& weights, std::vector<double> grad, AdamState& state, double lr, double clip);

struct InstanceGrad {
    double loss = 0.0;       // bound after the last round
    double objective = 0.0;  // what the gradient ascends (sum over tracked rounds for doge-m)
    bool early = true;       // stage of the sampled round count
    std::vector<double> grad;
};

// Runs r rounds on one instance, backpropagates through the tracked suffix
// and returns the gradient for the sampled stage's network.
InstanceGrad instance_gradient(const Problem& problem, const NetPair& nets, const TrainConfig& config, std::size_t r);

struct StepResult {
    double loss = 0.0;       // batch mean of the final bounds
    double grad_norm = 0.0;  // largest pre-clip norm of the applied gradients
    bool finite = true;      // false: step skipped
};

struct Trainer {
    TrainConfig config;
    NetPair nets;
    AdamState adam_early;
    AdamState adam_late;
    std::mt19937_64 rng;
    std::size_t iteration = 0;

    explicit Trainer(const TrainConfig& cfg);
    Trainer(const TrainConfig& cfg, NetPair start);

    // Samples r per instance, averages the gradients per stage, one Adam step each.
    StepResult step(const std::vector<const Problem*>& batch);
    std::vector<std::size_t> sample_rounds(std::size_t count);
};

// Runs config.iters steps over batches drawn from `data`; one CSV row per step.
NetPair train(const std::vector<Problem>& data, const TrainConfig& config, std::ostream* log = nullptr);

struct InferenceConfig {
    std::size_t sweeps = 20;
    std::size_t max_rounds = 20;
    double improvement_tol = 1e-6;
    int threads = 0;
    bool stop_on_plateau = true;  // false: keep the late network until max_rounds
};

struct InferenceResult {
    DualState state;
    std::vector<BoundRecord> trace;  // initial bound, then one per sweep
    std::size_t rounds = 0;
    std::size_t switch_round = 0;    // first late-stage round, 0 if never switched
};

// Early network until a round improves the bound by a relative amount below
// the tolerance, then the late network until that happens again (when
// stop_on_plateau) or the cap.
InferenceResult inference(const Problem& problem, const NetPair& nets, const InferenceConfig& config);

// g = min((d* - d) / (d* - d_init), 1), clamped at 0 from below.
double relative_gap(double d, double d_star, double d_init);

struct RunMetrics {
    std::vector<double> time;
    std::vector<double> bound;
    std::vector<double> reported;  // best bound up to each sample; g is taken from it
    std::vector<double> gap;
    double d_init = 0.0;
    double d_star = 0.0;
    double gap_integral = 0.0;
    double best = 0.0;
    double t_best = 0.0;
    bool degenerate = false;  // d* <= d_init: gap reported as 0
};

// g(t) uses the best bound reported up to t. Gap integral by the trapezoidal
// rule over samples with time >= t_start;
// when horizon exceeds the last sample the final gap is held until horizon.
RunMetrics compute_metrics(const std::vector<double>& time, const std::vector<double>& bound, double d_star,
                           double d_init, double t_start, double horizon = 0.0);

struct NamedProblem {
    std::string name;
    Problem problem;
};

// All .json / .lp files of a directory in name order.
std::vector<NamedProblem> load_dataset(const std::string& dir);

}  // namespace doge

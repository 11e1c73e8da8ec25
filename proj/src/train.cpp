#include "doge/train.hpp"

#include "doge/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>

#include <omp.h>

namespace doge {

void TrainConfig::validate() const
{
    if (rounds < 2) throw InvalidArgument("rounds must be at least 2 (early and late stage)");
    if (sweeps < 1) throw InvalidArgument("sweeps must be at least 1");
    if (!(clip > 0.0)) throw InvalidArgument("clip norm must be positive");
    if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (batch < 1) throw InvalidArgument("batch must be at least 1");
}

std::size_t TrainConfig::tracked_rounds() const
{
    if (backprop_rounds > 0) return backprop_rounds;
    return arch == Arch::doge_m ? 3 : 1;
}

bool is_early_round(std::size_t k, std::size_t rounds) { return k <= (rounds + 1) / 2; }

NetPair init_nets(Arch arch, std::uint64_t seed)
{
    NetPair p{init_weights(arch, seed), init_weights(arch, seed + 1)};
    zero_output_layer(p.early);
    zero_output_layer(p.late);
    return p;
}

NetPair zero_nets(Arch arch) { return {zero_weights(arch), zero_weights(arch)}; }

void save_nets(const std::string& path, const NetPair& nets) { save_weights(path, {nets.early, nets.late}); }

NetPair load_nets(const std::string& path)
{
    auto nets = load_weights(path);
    if (nets.size() != 2) throw ParseError(path + ": expected an early and a late network");
    if (nets[0].arch != nets[1].arch) throw ParseError(path + ": early and late networks differ in architecture");
    return {std::move(nets[0]), std::move(nets[1])};
}

Session start_session(const Problem& problem, int threads)
{
    Session s;
    s.problem = &problem;
    s.state = init_dual(problem);
    s.ws.threads = threads;
    return s;
}

void run_round(Session& session, const GnnWeights& net, std::size_t sweeps, RoundRecord* record,
               std::vector<BoundRecord>* trace)
{
    const auto& problem = *session.problem;
    const auto features = compute_features(problem, session.state, session.history);
    NetCache* cache = record ? &record->cache : nullptr;
    auto out = gnn_forward(net, problem.dec, features, session.lstm, cache);
    nonparam_update(problem, session.state, out.theta);
    observe_nonparam(problem, session.state, session.history);
    const auto params = to_solver_params(problem.dec, out);
    if (net.arch == Arch::doge_m) session.lstm = std::move(out.state);
    if (record) {
        record->net = &net;
        record->tape = record_sweeps(problem, session.state, session.ws, params, sweeps);
        if (trace)
            for (std::size_t k = 2; k < record->tape.checkpoints.size(); k += 2)
                trace->push_back({record->tape.checkpoints[k].sweep_count, 0.0, dual_objective(problem, record->tape.checkpoints[k])});
        return;
    }
    for (std::size_t k = 0; k < sweeps; ++k) {
        sweep(problem, session.state, session.ws, params);
        if (trace) trace->push_back({session.state.sweep_count, 0.0, dual_objective(problem, session.state)});
    }
}

double clip_gradient(std::vector<double>& grad, double max_norm)
{
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (double& g : grad) g *= s;
    }
    return norm;
}

void adam_step(std::vector<double>& weights, std::vector<double> grad, AdamState& state, double lr, double clip)
{
    if (grad.size() != weights.size()) throw InvalidArgument("adam_step: gradient size mismatch");
    clip_gradient(grad, clip);
    if (state.m.empty()) {
        state.m.assign(weights.size(), 0.0);
        state.v.assign(weights.size(), 0.0);
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < weights.size(); ++k) {
        state.m[k] = kAdamBeta1 * state.m[k] + (1.0 - kAdamBeta1) * grad[k];
        state.v[k] = kAdamBeta2 * state.v[k] + (1.0 - kAdamBeta2) * grad[k] * grad[k];
        const double mh = state.m[k] / c1;
        const double vh = state.v[k] / c2;
        weights[k] += lr * mh / (std::sqrt(vh) + kAdamEps);
    }
}

InstanceGrad instance_gradient(const Problem& problem, const NetPair& nets, const TrainConfig& config, std::size_t r)
{
    const auto R = config.rounds;
    const auto tracked = std::min(r, config.tracked_rounds());
    const bool sum_losses = config.arch == Arch::doge_m;
    InstanceGrad result;
    result.early = is_early_round(r, R);
    const auto& target = result.early ? nets.early : nets.late;
    result.grad.assign(target.values.size(), 0.0);

    auto session = start_session(problem, 1);
    for (std::size_t k = 1; k + tracked <= r; ++k) run_round(session, nets.for_round(k, R), config.sweeps);
    std::vector<RoundRecord> records(tracked);
    for (std::size_t t = 0; t < tracked; ++t) {
        const auto k = r - tracked + 1 + t;
        records[t].early = is_early_round(k, R);
        run_round(session, nets.for_round(k, R), config.sweeps, &records[t]);
    }

    GradState g;
    g.resize(problem.num_edges());
    LstmState d_lstm;
    std::vector<double> scratch;
    for (std::size_t t = tracked; t-- > 0;) {
        if (t + 1 == tracked || sum_losses) {
            const auto lg = loss_and_grad(problem, records[t].tape.checkpoints.back());
            if (t + 1 == tracked) result.loss = lg.loss;
            result.objective += lg.loss;
            for (std::size_t e = 0; e < lg.d_hi.size(); ++e) {
                g.d_hi[e] += lg.d_hi[e];
                g.d_lo[e] += lg.d_lo[e];
            }
        }
        std::fill(g.d_alpha.begin(), g.d_alpha.end(), 0.0);
        std::fill(g.d_omega.begin(), g.d_omega.end(), 0.0);
        round_backward(problem, records[t].tape, g, session.ws);
        g.d_theta = nonparam_backward(problem.dec, g.d_hi);
        const auto pre = transform_backward(problem.dec, records[t].cache.out, g.d_alpha, g.d_omega, g.d_theta);
        // Rounds run by the other stage's network pass the state adjoint on
        // but do not update it.
        auto& sink = records[t].early == result.early ? result.grad : scratch;
        if (&sink == &scratch) scratch.assign(records[t].net->values.size(), 0.0);
        d_lstm = gnn_backward(*records[t].net, problem.dec, records[t].cache, pre, d_lstm, sink);
    }
    return result;
}

Trainer::Trainer(const TrainConfig& cfg) : Trainer(cfg, init_nets(cfg.arch, cfg.seed)) {}

Trainer::Trainer(const TrainConfig& cfg, NetPair start) : config(cfg), nets(std::move(start)), rng(cfg.seed)
{
    config.validate();
    if (nets.early.arch != config.arch || nets.late.arch != config.arch)
        throw InvalidArgument("initial networks do not match the configured architecture");
}

std::vector<std::size_t> Trainer::sample_rounds(std::size_t count)
{
    std::vector<std::size_t> r(count);
    for (auto& x : r) x = 1 + static_cast<std::size_t>(rng() % config.rounds);
    return r;
}

StepResult Trainer::step(const std::vector<const Problem*>& batch)
{
    const auto rs = sample_rounds(batch.size());
    std::vector<InstanceGrad> grads(batch.size());
    const int threads = config.threads > 0 ? config.threads : omp_get_max_threads();
    const auto count = static_cast<std::ptrdiff_t>(batch.size());
    std::vector<std::string> errors(batch.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::ptrdiff_t b = 0; b < count; ++b) {
        try {
            grads[b] = instance_gradient(*batch[b], nets, config, rs[b]);
        } catch (const std::exception& e) {
            errors[b] = e.what();
        }
    }
    for (const auto& e : errors)
        if (!e.empty()) throw Error("train step failed: " + e);

    StepResult res;
    std::vector<double> ge(nets.early.values.size(), 0.0), gl(nets.late.values.size(), 0.0);
    bool any_early = false, any_late = false;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& g : grads) {
        res.loss += g.loss * scale;
        auto& dst = g.early ? ge : gl;
        (g.early ? any_early : any_late) = true;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.grad[k] * scale;
    }
    auto finite = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    res.finite = std::isfinite(res.loss) && finite(ge) && finite(gl);
    ++iteration;
    if (!res.finite) return res;
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    if (any_early) {
        res.grad_norm = std::max(res.grad_norm, norm(ge));
        adam_step(nets.early.values, std::move(ge), adam_early, config.lr, config.clip);
    }
    if (any_late) {
        res.grad_norm = std::max(res.grad_norm, norm(gl));
        adam_step(nets.late.values, std::move(gl), adam_late, config.lr, config.clip);
    }
    return res;
}

NetPair train(const std::vector<Problem>& data, const TrainConfig& config, std::ostream* log)
{
    if (data.empty()) throw InvalidArgument("training set is empty");
    Trainer trainer(config);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    if (log) *log << "iter,loss,grad_norm,finite\n";
    char buf[128];
    for (std::size_t it = 0; it < config.iters; ++it) {
        std::vector<const Problem*> batch;
        while (batch.size() < std::min(config.batch, data.size())) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), trainer.rng);
                cursor = 0;
            }
            batch.push_back(&data[order[cursor++]]);
        }
        const auto res = trainer.step(batch);
        if (log) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d\n", it + 1, res.loss, res.grad_norm, res.finite ? 1 : 0);
            *log << buf;
        }
    }
    return trainer.nets;
}

InferenceResult inference(const Problem& problem, const NetPair& nets, const InferenceConfig& config)
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    InferenceResult res;
    auto session = start_session(problem, config.threads);
    res.trace.push_back({0, 0.0, dual_objective(problem, session.state)});
    bool early = true;
    double prev = res.trace.back().lower_bound;
    for (std::size_t k = 1; k <= config.max_rounds; ++k) {
        const auto before = res.trace.size();
        const double t0 = std::chrono::duration<double>(clock::now() - start).count();
        run_round(session, early ? nets.early : nets.late, config.sweeps, nullptr, &res.trace);
        const double t1 = std::chrono::duration<double>(clock::now() - start).count();
        // Sweeps of one round share the network cost; spread the round's time evenly.
        const auto count = res.trace.size() - before;
        for (std::size_t idx = 0; idx < count; ++idx)
            res.trace[before + idx].seconds = t0 + (t1 - t0) * static_cast<double>(idx + 1) / static_cast<double>(count);
        res.rounds = k;
        const double cur = res.trace.back().lower_bound;
        const double rel = (cur - prev) / std::max(std::abs(prev), kFeatureEps);
        prev = cur;
        if (rel < config.improvement_tol) {
            if (!early) {
                if (config.stop_on_plateau) break;
                continue;
            }
            early = false;
            res.switch_round = k + 1;
        }
    }
    res.state = std::move(session.state);
    return res;
}

double relative_gap(double d, double d_star, double d_init)
{
    if (!(d_star > d_init)) return 0.0;
    return std::clamp((d_star - d) / (d_star - d_init), 0.0, 1.0);
}

RunMetrics compute_metrics(const std::vector<double>& time, const std::vector<double>& bound, double d_star,
                           double d_init, double t_start, double horizon)
{
    if (time.size() != bound.size() || time.empty()) throw InvalidArgument("compute_metrics: empty or mismatched trace");
    RunMetrics m;
    m.time = time;
    m.bound = bound;
    m.d_init = d_init;
    m.d_star = d_star;
    m.degenerate = !(d_star > d_init);
    m.reported.resize(bound.size());
    m.gap.resize(bound.size());
    for (std::size_t k = 0; k < bound.size(); ++k) {
        m.reported[k] = k == 0 ? bound[0] : std::max(m.reported[k - 1], bound[k]);
        m.gap[k] = relative_gap(m.reported[k], d_star, d_init);
    }
    m.best = bound[0];
    m.t_best = time[0];
    for (std::size_t k = 1; k < bound.size(); ++k)
        if (bound[k] > m.best) {
            m.best = bound[k];
            m.t_best = time[k];
        }
    bool have = false;
    double t_prev = 0.0, g_prev = 0.0;
    for (std::size_t k = 0; k < time.size(); ++k) {
        if (time[k] < t_start) continue;
        if (have) m.gap_integral += 0.5 * (m.gap[k] + g_prev) * (time[k] - t_prev);
        have = true;
        t_prev = time[k];
        g_prev = m.gap[k];
    }
    if (have && horizon > t_prev) m.gap_integral += g_prev * (horizon - t_prev);
    return m;
}

std::vector<NamedProblem> load_dataset(const std::string& dir)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ParseError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension().string();
        if (ext == ".json" || ext == ".lp") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<NamedProblem> out;
    for (const auto& f : files) {
        if (f.filename() == "manifest.json") continue;
        out.push_back({f.stem().string(), make_problem(read_instance(f.string()))});
    }
    if (out.empty()) throw ParseError("no instances (.json or .lp) in " + dir);
    return out;
}

}  // namespace doge

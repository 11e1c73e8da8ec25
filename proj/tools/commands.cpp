#include "commands.hpp"

#include "doge/bdd.hpp"
#include "doge/checks.hpp"
#include "doge/error.hpp"
#include "doge/kernels.hpp"
#include "doge/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <omp.h>

namespace doge::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void set_threads(int threads)
{
    if (threads < 0) throw InvalidArgument("--threads must be >= 0");
    if (threads > 0) omp_set_num_threads(threads);
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path + " for writing");
    return f;
}

struct GenArgs {
    std::size_t count = 1;
    std::size_t n = 10;
    double p = 0.25;
    std::uint64_t seed = 1;
    std::string out_dir;
    std::string format = "json";
};

int cmd_gen(const GenArgs& a, std::ostream& out, std::ostream& err)
{
    out << "# gen count=" << a.count << " n=" << a.n << " p=" << fmt(a.p) << " seed=" << a.seed << " out=" << a.out_dir
        << " format=" << a.format << '\n';
    fs::create_directories(a.out_dir);
    nlohmann::ordered_json manifest;
    manifest["generator"] = "independent_set";
    manifest["n"] = a.n;
    manifest["p"] = a.p;
    manifest["seed"] = a.seed;
    manifest["instances"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < a.count; ++k) {
        const std::uint64_t seed = a.seed + k;
        const auto inst = generate_independent_set(a.n, a.p, seed);
        char name[64];
        std::snprintf(name, sizeof name, "is_%04zu.%s", k, a.format.c_str());
        auto f = open_out((fs::path(a.out_dir) / name).string());
        if (a.format == "lp")
            write_lp(f, inst);
        else
            f << write_json(inst) << '\n';
        nlohmann::ordered_json entry;
        entry["file"] = name;
        entry["seed"] = seed;
        entry["constraints"] = inst.constraints.size();
        if (inst.constraints.empty()) {
            entry["flag"] = "no constraints";
            err << "warning: " << name << " has no constraints\n";
        }
        manifest["instances"].push_back(entry);
    }
    auto f = open_out((fs::path(a.out_dir) / "manifest.json").string());
    f << manifest.dump(2) << '\n';
    out << "wrote " << a.count << " instances to " << a.out_dir << '\n';
    return ok;
}

struct SolveArgs {
    std::string instance;
    std::size_t max_sweeps = 100;
    double omega = 0.5;
    std::string alpha = "uniform";
    double tol = 0.0;
    std::string log;
    int threads = 0;
};

int cmd_solve(const SolveArgs& a, std::ostream& out, std::ostream& err)
{
    out << "# solve instance=" << a.instance << " max-sweeps=" << a.max_sweeps << " omega=" << fmt(a.omega)
        << " alpha=" << a.alpha << " tol=" << fmt(a.tol) << " log=" << (a.log.empty() ? "-" : a.log)
        << " threads=" << a.threads << '\n';
    set_threads(a.threads);
    const auto problem = make_problem(read_instance(a.instance), &err);
    auto params = SolverParams::defaults(problem.dec, a.omega);
    if (a.alpha != "uniform") {
        std::ifstream f(a.alpha);
        if (!f) throw ParseError("cannot open alpha file " + a.alpha);
        std::vector<double> values;
        double v;
        while (f >> v) values.push_back(v);
        if (!f.eof()) throw ParseError("alpha file " + a.alpha + ": not a list of numbers");
        if (values.size() != problem.num_edges())
            throw ParseError("alpha file has " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(problem.num_edges()));
        params.alpha = values;
    }
    normalize_params(problem.dec, params);

    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    auto state = init_dual(problem);
    Workspace ws;
    ws.threads = a.threads;
    std::vector<BoundRecord> trace{{0, 0.0, dual_objective(problem, state)}};
    for (std::size_t k = 0; k < a.max_sweeps; ++k) {
        sweep(problem, state, ws, params);
        const double secs = std::chrono::duration<double>(clock::now() - start).count();
        trace.push_back({state.sweep_count, secs, dual_objective(problem, state)});
        const double prev = trace[trace.size() - 2].lower_bound, cur = trace.back().lower_bound;
        if (a.tol > 0.0 && (cur - prev) / std::max(std::abs(prev), 1e-9) < a.tol) break;
    }
    if (!a.log.empty()) {
        auto f = open_out(a.log);
        f << "sweep,seconds,lower_bound\n";
        for (const auto& r : trace) f << r.sweep << ',' << fmt(r.seconds) << ',' << fmt(r.lower_bound) << '\n';
    }
    out << "sweeps " << state.sweep_count << '\n';
    out << "lower_bound " << fmt(trace.back().lower_bound) << '\n';
    return ok;
}

struct TrainArgs {
    std::string data;
    std::string arch = "doge";
    std::size_t rounds = 20;
    std::size_t sweeps = 20;
    double lr = 1e-3;
    std::size_t batch = 4;
    std::size_t iters = 100;
    std::uint64_t seed = 0;
    std::string out_path = "weights.bin";
    std::string log;
    double clip = 50.0;
    std::size_t backprop_rounds = 0;
    int threads = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream&)
{
    TrainConfig cfg;
    cfg.arch = parse_arch(a.arch);
    cfg.rounds = a.rounds;
    cfg.sweeps = a.sweeps;
    cfg.lr = a.lr;
    cfg.batch = a.batch;
    cfg.iters = a.iters;
    cfg.seed = a.seed;
    cfg.clip = a.clip;
    cfg.backprop_rounds = a.backprop_rounds;
    cfg.threads = a.threads;
    cfg.validate();
    out << "# train data=" << a.data << " arch=" << a.arch << " rounds=" << a.rounds << " sweeps=" << a.sweeps
        << " lr=" << fmt(a.lr) << " batch=" << a.batch << " iters=" << a.iters << " seed=" << a.seed
        << " clip=" << fmt(a.clip) << " backprop-rounds=" << cfg.tracked_rounds() << " out=" << a.out_path
        << " log=" << (a.log.empty() ? "-" : a.log) << " threads=" << a.threads << '\n';
    set_threads(a.threads);
    auto named = load_dataset(a.data);
    std::vector<Problem> data;
    for (auto& np : named) data.push_back(std::move(np.problem));
    std::ofstream log_file;
    if (!a.log.empty()) log_file = open_out(a.log);
    const auto nets = train(data, cfg, a.log.empty() ? nullptr : &log_file);
    save_nets(a.out_path, nets);
    out << "trained on " << data.size() << " instances, " << parameter_count(cfg.arch) << " parameters per network, wrote "
        << a.out_path << '\n';
    return ok;
}

struct EvalArgs {
    std::string data;
    std::string weights;
    std::size_t rounds = 20;
    std::size_t sweeps = 20;
    std::size_t warmup = 1;
    std::string clock = "sweeps";
    std::string out_path;
    double improvement_tol = 1e-6;
    std::size_t reference_factor = 4;
    int threads = 0;
    bool stop_early = false;
};

struct MethodRun {
    std::string method;
    std::vector<double> time;
    std::vector<double> bound;
    double start = 0.0;  // time at which the gap integral starts
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&)
{
    if (a.clock != "sweeps" && a.clock != "wall") throw InvalidArgument("--clock must be sweeps or wall");
    if (a.sweeps < 1) throw InvalidArgument("--sweeps must be >= 1");
    out << "# eval data=" << a.data << " weights=" << (a.weights.empty() ? "-" : a.weights) << " rounds=" << a.rounds
        << " sweeps=" << a.sweeps << " warmup=" << a.warmup << " clock=" << a.clock
        << " improvement-tol=" << fmt(a.improvement_tol) << " stop-early=" << a.stop_early
        << " reference-factor=" << a.reference_factor << " out=" << (a.out_path.empty() ? "-" : a.out_path) << " threads=" << a.threads << '\n';
    set_threads(a.threads);
    const bool wall = a.clock == "wall";
    const auto data = load_dataset(a.data);
    NetPair nets;
    const bool learned = !a.weights.empty();
    if (learned) nets = load_nets(a.weights);
    const std::size_t budget = a.rounds * a.sweeps;
    const double warm_sweeps = static_cast<double>(a.warmup * a.sweeps);

    std::ostringstream csv;
    csv << "instance,method,E,t_best,g_I\n";
    struct Sum {
        double E = 0, t = 0, g = 0;
        std::size_t count = 0;
    };
    std::vector<std::pair<std::string, Sum>> sums;
    auto sum_for = [&](const std::string& m) -> Sum& {
        for (auto& s : sums)
            if (s.first == m) return s.second;
        sums.push_back({m, Sum{}});
        return sums.back().second;
    };

    for (const auto& np : data) {
        const auto& problem = np.problem;
        std::vector<MethodRun> runs;
        {
            auto s = init_dual(problem);
            Workspace ws;
            ws.threads = a.threads;
            const auto trace = run(problem, s, ws, SolverParams::defaults(problem.dec), budget);
            MethodRun r{"fastdog", {}, {}, 0.0};
            for (const auto& b : trace) {
                r.time.push_back(wall ? b.seconds : static_cast<double>(b.sweep));
                r.bound.push_back(b.lower_bound);
            }
            runs.push_back(std::move(r));
        }
        if (learned) {
            const auto res = inference(problem, nets, {a.sweeps, a.rounds, a.improvement_tol, a.threads, a.stop_early});
            MethodRun r{"doge", {}, {}, 0.0};
            for (const auto& b : res.trace) {
                r.time.push_back(wall ? b.seconds : static_cast<double>(b.sweep));
                r.bound.push_back(b.lower_bound);
            }
            runs.push_back(std::move(r));
        }
        for (auto& r : runs) {
            const auto at = std::min<std::size_t>(a.warmup * a.sweeps, r.time.size() - 1);
            r.start = wall ? r.time[at] : std::min(warm_sweeps, r.time.back());
        }
        double d_star;
        if (problem.instance.num_vars <= 25) {
            d_star = enumerate_optimum(problem.instance).value;
        } else {
            auto s = init_dual(problem);
            Workspace ws;
            const auto ref = run(problem, s, ws, SolverParams::defaults(problem.dec), a.reference_factor * budget);
            d_star = ref.back().lower_bound;
            for (const auto& b : ref) d_star = std::max(d_star, b.lower_bound);
            for (const auto& r : runs)
                for (double b : r.bound) d_star = std::max(d_star, b);
        }
        const double d_init = runs.front().bound.front();
        for (const auto& r : runs) {
            const double horizon = wall ? 0.0 : static_cast<double>(budget);
            const auto m = compute_metrics(r.time, r.bound, d_star, d_init, r.start, horizon);
            csv << np.name << ',' << r.method << ',' << fmt(m.best) << ',' << fmt(m.t_best) << ',' << fmt(m.gap_integral)
                << '\n';
            auto& s = sum_for(r.method);
            s.E += m.best;
            s.t += m.t_best;
            s.g += m.gap_integral;
            ++s.count;
        }
    }
    for (const auto& [method, s] : sums) {
        const double k = static_cast<double>(s.count);
        csv << "summary," << method << ',' << fmt(s.E / k) << ',' << fmt(s.t / k) << ',' << fmt(s.g / k) << '\n';
    }
    if (a.out_path.empty()) {
        out << csv.str();
    } else {
        auto f = open_out(a.out_path);
        f << csv.str();
        out << "wrote " << a.out_path << '\n';
    }
    return ok;
}

struct CheckArgs {
    std::string inject = "none";
    std::string dot_instance;
    std::size_t constraint = 0;
    std::uint64_t seed = 1;
    bool quick = false;
    int threads = 0;
};

int cmd_check(const CheckArgs& a, std::ostream& out, std::ostream&)
{
    out << "# check inject=" << a.inject << " seed=" << a.seed << " quick=" << (a.quick ? 1 : 0)
        << " kernels=" << kernels::name(kernels::active_isa()) << " threads=" << a.threads << '\n';
    set_threads(a.threads);
    if (!a.dot_instance.empty()) {
        const auto inst = read_instance(a.dot_instance);
        if (a.constraint < 1 || a.constraint > inst.constraints.size())
            throw InvalidArgument("--constraint must lie in 1.." + std::to_string(inst.constraints.size()));
        out << to_dot(build_bdd(inst.constraints[a.constraint - 1]), &inst);
        return ok;
    }
    CheckConfig cfg;
    cfg.seed = a.seed;
    if (a.inject == "sign-flip")
        cfg.fault = Fault::flip_snapshot_adjoint;
    else if (a.inject == "no-snapshot")
        cfg.fault = Fault::no_snapshot_freeze;
    else if (a.inject != "none")
        throw InvalidArgument("--inject must be none, sign-flip or no-snapshot");
    if (a.quick) {
        cfg.suite_size = 20;
        cfg.param_draws = 5;
        cfg.grad_instances = 5;
    }
    const auto results = run_all_checks(cfg);
    print_report(out, results);
    const bool all = std::all_of(results.begin(), results.end(), [](const SuiteResult& r) { return r.passed; });
    out << (all ? "all suites passed" : "FAILED") << '\n';
    return all ? ok : internal_error;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Learned Lagrange-decomposition dual solver for 0-1 ILPs", "doge"};
    app.require_subcommand(0, 1);
    app.set_version_flag("--version", std::string("doge ") + DOGE_VERSION + " (kernels: " +
                                          kernels::name(kernels::active_isa()) + ", " + __DATE__ + ")");

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate random independent set instances");
    g->add_option("--count", gen.count, "number of instances")->check(CLI::PositiveNumber);
    g->add_option("--n", gen.n, "vertices per graph")->check(CLI::PositiveNumber);
    g->add_option("--p", gen.p, "edge probability")->check(CLI::Range(0.0, 1.0));
    g->add_option("--seed", gen.seed, "seed of the first instance (instance k uses seed + k)");
    g->add_option("--out", gen.out_dir, "output directory")->required();
    g->add_option("--format", gen.format, "json or lp")->check(CLI::IsMember({"json", "lp"}));

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "run the default-parameter dual solver");
    s->add_option("instance", solve.instance, "instance file (.lp or .json)")->required();
    s->add_option("--max-sweeps", solve.max_sweeps, "number of sweeps");
    s->add_option("--omega", solve.omega, "damping in (0, 1)");
    s->add_option("--alpha", solve.alpha, "uniform, or a file with one weight per dual variable");
    s->add_option("--tol", solve.tol, "stop when a sweep improves the bound by less than this (relative); 0 disables");
    s->add_option("--log", solve.log, "convergence CSV (sweep,seconds,lower_bound)");
    s->add_option("--threads", solve.threads, "worker threads, 0 = all cores");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train the parameter-prediction networks");
    t->add_option("--data", tr.data, "directory of training instances")->required();
    t->add_option("--arch", tr.arch, "doge or doge-m")->check(CLI::IsMember({"doge", "doge-m"}));
    t->add_option("--rounds", tr.rounds, "max rounds R per instance");
    t->add_option("--sweeps", tr.sweeps, "sweeps T per round");
    t->add_option("--lr", tr.lr, "Adam learning rate");
    t->add_option("--batch", tr.batch, "instances per step");
    t->add_option("--iters", tr.iters, "optimizer steps");
    t->add_option("--seed", tr.seed, "seed for init and sampling");
    t->add_option("--out", tr.out_path, "weight file");
    t->add_option("--log", tr.log, "per-step CSV (iter,loss,grad_norm,finite)");
    t->add_option("--clip", tr.clip, "gradient l2 clip norm");
    t->add_option("--backprop-rounds", tr.backprop_rounds, "rounds to backpropagate through (0: 1 for doge, 3 for doge-m)");
    t->add_option("--threads", tr.threads, "worker threads, 0 = all cores");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "compare the learned solver with the default solver");
    e->add_option("--data", ev.data, "directory of test instances")->required();
    e->add_option("--weights", ev.weights, "weight file from train (omit to evaluate the default solver only)");
    e->add_option("--rounds", ev.rounds, "round cap R; the default solver gets R * T sweeps");
    e->add_option("--sweeps", ev.sweeps, "sweeps T per round");
    e->add_option("--warmup", ev.warmup, "rounds before the gap integral starts");
    e->add_option("--clock", ev.clock, "time axis: sweeps (deterministic) or wall")->check(CLI::IsMember({"sweeps", "wall"}));
    e->add_option("--improvement-tol", ev.improvement_tol, "relative round improvement that switches / stops");
    e->add_flag("--stop-early", ev.stop_early, "stop the learned solver on its second plateau instead of using the full budget");
    e->add_option("--reference-factor", ev.reference_factor, "budget multiple of the reference run used for d* when n > 25");
    e->add_option("--out", ev.out_path, "CSV path (default stdout)");
    e->add_option("--threads", ev.threads, "worker threads, 0 = all cores");

    CheckArgs ck;
    auto* c = app.add_subcommand("check", "run the invariant and gradient suites");
    c->add_option("--inject", ck.inject, "fault to inject: none, sign-flip, no-snapshot")
        ->check(CLI::IsMember({"none", "sign-flip", "no-snapshot"}));
    c->add_option("--dot", ck.dot_instance, "print the diagram of one constraint of this instance as DOT");
    c->add_option("--constraint", ck.constraint, "1-based constraint index for --dot");
    c->add_option("--seed", ck.seed, "seed of the random suites");
    c->add_flag("--quick", ck.quick, "smaller suites");
    c->add_option("--threads", ck.threads, "worker threads, 0 = all cores");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? ok : bad_input;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out, err);
        if (s->parsed()) return cmd_solve(solve, out, err);
        if (t->parsed()) return cmd_train(tr, out, err);
        if (e->parsed()) return cmd_eval(ev, out, err);
        if (c->parsed()) return cmd_check(ck, out, err);
        out << app.help();
        return ok;
    } catch (const ParseError& ex) {
        err << "error: " << ex.what() << '\n';
        return bad_input;
    } catch (const InfeasibleError& ex) {
        err << "error: " << ex.what() << '\n';
        return bad_input;
    } catch (const InvalidArgument& ex) {
        err << "error: " << ex.what() << '\n';
        return bad_input;
    } catch (const std::exception& ex) {
        err << "internal error: " << ex.what() << '\n';
        return internal_error;
    }
}

}  // namespace doge::cli

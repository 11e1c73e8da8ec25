#include "doge/bdd.hpp"

#include "doge/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace doge {

namespace {

double child_cost(std::uint32_t child, const NodeCosts& costs)
{
    if (child == kTop) return 0.0;
    if (child == kBot) return kInf;
    return costs.to_top[child];
}

}  // namespace

Bdd build_bdd(std::span<const double> coeffs, Relation rel, double rhs, std::span<const std::uint32_t> order)
{
    if (coeffs.size() != order.size()) throw InvalidArgument("build_bdd: coefficient and order sizes differ");
    const std::size_t levels = order.size();
    if (levels == 0) throw InvalidArgument("build_bdd: empty constraint");

    std::vector<double> suffix_min(levels + 1, 0.0), suffix_max(levels + 1, 0.0);
    double scale = std::abs(rhs);
    for (std::size_t k = levels; k-- > 0;) {
        suffix_min[k] = suffix_min[k + 1] + std::min(coeffs[k], 0.0);
        suffix_max[k] = suffix_max[k + 1] + std::max(coeffs[k], 0.0);
        scale += std::abs(coeffs[k]);
    }
    const double tol = 1e-9 * (1.0 + scale);
    const bool le = rel == Relation::less_equal;

    // Partial-sum states per level. For <= rows every state whose worst
    // completion still fits collapses onto one saturated key.
    constexpr double saturated = -kInf;
    auto dead = [&](double s, std::size_t t) {
        if (s == saturated) return false;
        if (s + suffix_min[t] > rhs + tol) return true;
        return !le && s + suffix_max[t] < rhs - tol;
    };
    auto canonical = [&](double s, std::size_t t) {
        if (le && s != saturated && s + suffix_max[t] <= rhs + tol) return saturated;
        return s;
    };

    Bdd raw;
    raw.vars.assign(order.begin(), order.end());
    raw.level_offset.push_back(0);
    std::map<double, std::uint32_t> current;
    const double root = canonical(0.0, 0);
    if (dead(root, 0)) throw InfeasibleError("constraint admits no 0-1 assignment");
    current.emplace(root, 0);
    raw.nodes.resize(1);
    raw.level_offset.push_back(1);
    for (std::size_t t = 0; t < levels; ++t) {
        std::map<double, std::uint32_t> next;
        const bool last = t + 1 == levels;
        auto child = [&](double s) -> std::uint32_t {
            if (last) {
                if (s == saturated) return kTop;
                const bool ok = le ? s <= rhs + tol : std::abs(s - rhs) <= tol;
                return ok ? kTop : kBot;
            }
            s = canonical(s, t + 1);
            if (dead(s, t + 1)) return kBot;
            auto [it, inserted] = next.try_emplace(s, 0u);
            if (inserted) {
                it->second = static_cast<std::uint32_t>(raw.nodes.size());
                raw.nodes.emplace_back();
            }
            return it->second;
        };
        for (auto [s, id] : current) {
            const auto lo = child(s);
            const auto hi = child(s == saturated ? s : s + coeffs[t]);
            raw.nodes[id] = BddNode{lo, hi};
        }
        if (!last) raw.level_offset.push_back(static_cast<std::uint32_t>(raw.nodes.size()));
        current = std::move(next);
    }
    try {
        return reduce(raw);
    } catch (const InfeasibleError&) {
        throw InfeasibleError("constraint admits no 0-1 assignment");
    }
}

Bdd build_bdd(const Constraint& row)
{
    std::vector<std::size_t> perm(row.vars.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(), [&](auto a, auto b) { return row.vars[a] < row.vars[b]; });
    std::vector<double> coeffs;
    std::vector<std::uint32_t> order;
    for (auto k : perm) {
        coeffs.push_back(row.coeffs[k]);
        order.push_back(row.vars[k]);
    }
    return build_bdd(coeffs, row.rel, row.rhs, order);
}

Bdd reduce(const Bdd& bdd)
{
    const std::size_t levels = bdd.num_levels();
    // Bottom-up: class representative per node (a node index) or kBot.
    std::vector<std::uint32_t> cls(bdd.num_nodes(), kBot);
    auto map_child = [&](std::uint32_t c) { return (c == kTop || c == kBot) ? c : cls[c]; };
    for (std::size_t t = levels; t-- > 0;) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> table;
        for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
            const auto lo = map_child(bdd.nodes[v].lo);
            const auto hi = map_child(bdd.nodes[v].hi);
            if (lo == kBot && hi == kBot) continue;
            cls[v] = table.try_emplace({lo, hi}, v).first->second;
        }
    }
    if (cls[0] == kBot) throw InfeasibleError("diagram has no root-to-top path");

    // Top-down renumbering in visit order, zero arcs first.
    Bdd out;
    out.vars = bdd.vars;
    out.level_offset.push_back(0);
    std::vector<std::uint32_t> frontier{cls[0]};
    std::vector<std::uint32_t> new_id(bdd.num_nodes(), kBot);
    new_id[cls[0]] = 0;
    out.level_offset.push_back(1);
    out.nodes.resize(1);
    for (std::size_t t = 0; t < levels; ++t) {
        std::vector<std::uint32_t> next;
        const bool last = t + 1 == levels;
        const auto base = static_cast<std::uint32_t>(out.nodes.size());
        for (std::size_t k = 0; k < frontier.size(); ++k) {
            const auto rep = frontier[k];
            BddNode node;
            auto assign = [&](std::uint32_t c) -> std::uint32_t {
                c = map_child(c);
                if (c == kTop || c == kBot) return c;
                if (new_id[c] == kBot) {
                    new_id[c] = base + static_cast<std::uint32_t>(next.size());
                    next.push_back(c);
                }
                return new_id[c];
            };
            node.lo = assign(bdd.nodes[rep].lo);
            node.hi = assign(bdd.nodes[rep].hi);
            out.nodes[out.level_offset[t] + k] = node;
        }
        if (!last) {
            out.nodes.resize(base + next.size());
            out.level_offset.push_back(static_cast<std::uint32_t>(out.nodes.size()));
        }
        frontier = std::move(next);
    }
    return out;
}

bool is_reduced(const Bdd& bdd)
{
    for (std::size_t t = 0; t < bdd.num_levels(); ++t) {
        std::vector<BddNode> seen;
        for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
            const auto& node = bdd.nodes[v];
            if (node.lo == kBot && node.hi == kBot) return false;
            if (std::find(seen.begin(), seen.end(), node) != seen.end()) return false;
            seen.push_back(node);
        }
    }
    return true;
}

NodeCosts compute_shortest_paths(const Bdd& bdd, std::span<const double> hi, std::span<const double> lo)
{
    NodeCosts costs;
    compute_shortest_paths(bdd, hi, lo, costs);
    return costs;
}

void compute_shortest_paths(const Bdd& bdd, std::span<const double> hi, std::span<const double> lo, NodeCosts& costs)
{
    const std::size_t levels = bdd.num_levels();
    costs.from_root.assign(bdd.num_nodes(), kInf);
    costs.to_top.assign(bdd.num_nodes(), kInf);
    costs.from_root[0] = 0.0;
    for (std::size_t t = 0; t + 1 < levels; ++t) update_from_root(bdd, t, hi[t], lo[t], costs);
    for (std::size_t t = levels; t-- > 0;) update_to_top(bdd, t, hi[t], lo[t], costs);
}

void update_from_root(const Bdd& bdd, std::size_t t, double hi_t, double lo_t, NodeCosts& costs)
{
    if (t + 1 >= bdd.num_levels()) return;
    for (auto w = bdd.level_begin(t + 1); w < bdd.level_end(t + 1); ++w) costs.from_root[w] = kInf;
    for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
        const double base = costs.from_root[v];
        const auto& node = bdd.nodes[v];
        if (node.lo < kBot) costs.from_root[node.lo] = std::min(costs.from_root[node.lo], base + lo_t);
        if (node.hi < kBot) costs.from_root[node.hi] = std::min(costs.from_root[node.hi], base + hi_t);
    }
}

void update_to_top(const Bdd& bdd, std::size_t t, double hi_t, double lo_t, NodeCosts& costs)
{
    for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
        const auto& node = bdd.nodes[v];
        costs.to_top[v] = std::min(lo_t + child_cost(node.lo, costs), hi_t + child_cost(node.hi, costs));
    }
}

std::array<double, 2> min_marginals(const Bdd& bdd, const NodeCosts& costs, std::size_t t, double hi_t, double lo_t)
{
    std::array<double, 2> m{kInf, kInf};
    for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
        const auto& node = bdd.nodes[v];
        const double r = costs.from_root[v];
        m[0] = std::min(m[0], r + lo_t + child_cost(node.lo, costs));
        m[1] = std::min(m[1], r + hi_t + child_cost(node.hi, costs));
    }
    if (m[0] == kInf && m[1] == kInf) throw Error("min_marginals: both branches infinite, corrupt diagram");
    return m;
}

double subproblem_value(const NodeCosts& costs) { return costs.to_top.empty() ? 0.0 : costs.to_top[0]; }

namespace {

// Follows shortest completions from node v on level t down to top.
void trace_down(const Bdd& bdd, const NodeCosts& costs, std::span<const double> hi, std::span<const double> lo,
                std::uint32_t v, std::size_t t, std::vector<std::uint8_t>& x)
{
    for (; t < bdd.num_levels(); ++t) {
        const auto& node = bdd.nodes[v];
        const double c0 = lo[t] + child_cost(node.lo, costs);
        const double c1 = hi[t] + child_cost(node.hi, costs);
        const bool take_hi = c1 < c0;
        x[t] = take_hi ? 1 : 0;
        v = take_hi ? node.hi : node.lo;
    }
}

}  // namespace

PathAssignment optimal_assignment(const Bdd& bdd, const NodeCosts& costs, std::span<const double> hi,
                                  std::span<const double> lo)
{
    PathAssignment out;
    out.x.assign(bdd.num_levels(), 0);
    out.value = costs.to_top[0];
    trace_down(bdd, costs, hi, lo, 0, 0, out.x);
    return out;
}

PathAssignment argmin_restricted(const Bdd& bdd, const NodeCosts& costs, std::span<const double> hi,
                                 std::span<const double> lo, std::size_t t, int beta)
{
    PathAssignment out;
    out.x.assign(bdd.num_levels(), 0);
    std::uint32_t best = kBot;
    for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
        const auto& node = bdd.nodes[v];
        const double val = costs.from_root[v] + (beta ? hi[t] + child_cost(node.hi, costs) : lo[t] + child_cost(node.lo, costs));
        if (val < out.value) {
            out.value = val;
            best = v;
        }
    }
    if (best == kBot) throw InvalidArgument("argmin_restricted: branch x = " + std::to_string(beta) + " is infeasible");
    out.x[t] = static_cast<std::uint8_t>(beta);
    const auto child = beta ? bdd.nodes[best].hi : bdd.nodes[best].lo;
    if (t + 1 < bdd.num_levels()) trace_down(bdd, costs, hi, lo, child, t + 1, out.x);

    // Walk back up: pick a predecessor realizing from_root exactly,
    // zero arcs first, then smaller node index.
    std::uint32_t w = best;
    for (std::size_t s = t; s-- > 0;) {
        std::uint32_t pred = kBot;
        std::uint8_t bit = 0;
        for (int b = 0; b < 2 && pred == kBot; ++b) {
            for (auto u = bdd.level_begin(s); u < bdd.level_end(s); ++u) {
                const auto& node = bdd.nodes[u];
                const auto c = b ? node.hi : node.lo;
                if (c != w) continue;
                if (costs.from_root[u] + (b ? hi[s] : lo[s]) == costs.from_root[w]) {
                    pred = u;
                    bit = static_cast<std::uint8_t>(b);
                    break;
                }
            }
        }
        if (pred == kBot) throw Error("argmin_restricted: inconsistent shortest path distances");
        out.x[s] = bit;
        w = pred;
    }
    return out;
}

std::vector<std::vector<std::uint8_t>> enumerate_paths(const Bdd& bdd)
{
    std::vector<std::vector<std::uint8_t>> paths;
    std::vector<std::uint8_t> x(bdd.num_levels(), 0);
    auto rec = [&](auto&& self, std::uint32_t v, std::size_t t) -> void {
        if (v == kBot) return;
        if (v == kTop) {
            paths.push_back(x);
            return;
        }
        x[t] = 0;
        self(self, bdd.nodes[v].lo, t + 1);
        x[t] = 1;
        self(self, bdd.nodes[v].hi, t + 1);
    };
    rec(rec, 0, 0);
    return paths;
}

std::string to_dot(const Bdd& bdd, const IlpInstance* instance)
{
    std::ostringstream out;
    out << "digraph bdd {\n  top [shape=box,label=\"T\"];\n  bot [shape=box,label=\"F\"];\n";
    auto name = [](std::uint32_t c) {
        if (c == kTop) return std::string("top");
        if (c == kBot) return std::string("bot");
        return "n" + std::to_string(c);
    };
    for (std::size_t t = 0; t < bdd.num_levels(); ++t) {
        const auto var = bdd.vars[t];
        const auto label = instance ? instance->var_name(var) : "x" + std::to_string(var + 1);
        for (auto v = bdd.level_begin(t); v < bdd.level_end(t); ++v) {
            out << "  n" << v << " [label=\"" << label << "\"];\n";
            out << "  n" << v << " -> " << name(bdd.nodes[v].lo) << " [style=dashed];\n";
            out << "  n" << v << " -> " << name(bdd.nodes[v].hi) << ";\n";
        }
    }
    out << "}\n";
    return out.str();
}

}  // namespace doge

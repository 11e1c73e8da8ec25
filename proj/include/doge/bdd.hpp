#pragma once

#include "doge/model.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace doge {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Terminal markers stored in BddNode::lo / BddNode::hi.
inline constexpr std::uint32_t kTop = 0xFFFFFFFFu;
inline constexpr std::uint32_t kBot = 0xFFFFFFFEu;

struct BddNode {
    std::uint32_t lo = kBot;  // child for x = 0: node index on the next level, kTop or kBot
    std::uint32_t hi = kBot;  // child for x = 1

    bool operator==(const BddNode&) const = default;
};

// Layered (quasi-reduced) decision diagram: every root-to-top path visits one
// node per level. Nodes are stored level by level; node 0 is the root.
struct Bdd {
    std::vector<std::uint32_t> vars;        // variable of each level
    std::vector<BddNode> nodes;
    std::vector<std::uint32_t> level_offset; // size levels + 1

    std::size_t num_levels() const { return vars.size(); }
    std::size_t num_nodes() const { return nodes.size(); }
    std::uint32_t level_begin(std::size_t t) const { return level_offset[t]; }
    std::uint32_t level_end(std::size_t t) const { return level_offset[t + 1]; }

    bool operator==(const Bdd&) const = default;
};

// Shortest path distances per node; +inf where no path exists.
struct NodeCosts {
    std::vector<double> from_root;
    std::vector<double> to_top;
};

// Builds the reduced diagram of sum_k coeffs[k] x_{order[k]} (rel) rhs with
// levels in the given order. Throws InfeasibleError when no 0-1 point exists.
Bdd build_bdd(std::span<const double> coeffs, Relation rel, double rhs, std::span<const std::uint32_t> order);

// Same, with levels in increasing variable index.
Bdd build_bdd(const Constraint& row);

// Merges nodes with identical children bottom-up, drops nodes whose children
// are both bottom, renumbers top-down (lo before hi). Idempotent.
Bdd reduce(const Bdd& bdd);
bool is_reduced(const Bdd& bdd);

// hi[t] / lo[t]: cost of the one / zero arcs on level t.
NodeCosts compute_shortest_paths(const Bdd& bdd, std::span<const double> hi, std::span<const double> lo);
void compute_shortest_paths(const Bdd& bdd, std::span<const double> hi, std::span<const double> lo, NodeCosts& costs);

// Incremental refresh after the costs of level t changed: from_root of level t + 1
// (forward) or to_top of level t (backward).
void update_from_root(const Bdd& bdd, std::size_t t, double hi_t, double lo_t, NodeCosts& costs);
void update_to_top(const Bdd& bdd, std::size_t t, double hi_t, double lo_t, NodeCosts& costs);

// Optimal value with the level-t variable fixed: {m0, m1}.
std::array<double, 2> min_marginals(const Bdd& bdd, const NodeCosts& costs, std::size_t t, double hi_t, double lo_t);

double subproblem_value(const NodeCosts& costs);

struct PathAssignment {
    std::vector<std::uint8_t> x;  // one bit per level
    double value = kInf;
};

// Shortest root-to-top path; ties prefer the zero arc.
PathAssignment optimal_assignment(const Bdd& bdd, const NodeCosts& costs, std::span<const double> hi,
                                  std::span<const double> lo);

// Shortest path forced through a beta-arc on level t. Ties prefer the smaller
// node on level t, then zero arcs elsewhere. Throws InvalidArgument when the
// branch is infeasible.
PathAssignment argmin_restricted(const Bdd& bdd, const NodeCosts& costs, std::span<const double> hi,
                                 std::span<const double> lo, std::size_t t, int beta);

// All root-to-top paths as 0-1 vectors (test helper; exponential).
std::vector<std::vector<std::uint8_t>> enumerate_paths(const Bdd& bdd);

std::string to_dot(const Bdd& bdd, const IlpInstance* instance = nullptr);

}  // namespace doge

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace doge {

enum class Relation : std::uint8_t { less_equal, equal };

struct Constraint {
    std::vector<std::uint32_t> vars;
    std::vector<double> coeffs;
    Relation rel = Relation::less_equal;
    double rhs = 0.0;

    bool operator==(const Constraint&) const = default;
};

// min <c, x> s.t. every constraint holds, x in {0,1}^n.
struct IlpInstance {
    std::size_t num_vars = 0;
    std::vector<double> objective;
    std::vector<Constraint> constraints;
    std::vector<std::string> names;  // empty or one per variable

    // Throws InvalidArgument on out-of-range indices, duplicates within a
    // row, size mismatches or non-finite numbers.
    void validate() const;
    std::string var_name(std::size_t i) const;

    bool operator==(const IlpInstance&) const = default;
};

// One subproblem per constraint. Dual variables (i,j) are laid out contiguously
// per subproblem: edge e = sub_offset[j] + t where i is the t-th variable of I_j.
struct Decomposition {
    std::vector<std::vector<std::uint32_t>> subproblem_vars;  // I_j, sorted
    std::vector<std::vector<std::uint32_t>> var_subproblems;  // J_i, increasing j
    std::vector<std::uint32_t> isolated_vars;                 // |J_i| == 0
    std::size_t num_dual_vars = 0;

    std::vector<std::size_t> sub_offset;  // size m + 1
    std::vector<std::uint32_t> edge_var;
    std::vector<std::uint32_t> edge_sub;
    std::vector<std::uint32_t> edge_level;
    std::vector<std::size_t> var_offset;  // CSR over var_edges, size n + 1
    std::vector<std::uint32_t> var_edges; // edges of variable i in J_i order

    std::size_t num_subproblems() const { return subproblem_vars.size(); }
    std::size_t num_vars() const { return var_subproblems.size(); }
    std::size_t subproblem_size(std::size_t j) const { return sub_offset[j + 1] - sub_offset[j]; }
    std::span<const std::uint32_t> edges_of_var(std::size_t i) const
    {
        return {var_edges.data() + var_offset[i], var_offset[i + 1] - var_offset[i]};
    }
    std::size_t degree(std::size_t i) const { return var_offset[i + 1] - var_offset[i]; }
};

struct ExactSolution {
    std::vector<std::uint8_t> assignment;
    double value = 0.0;
};

// LP-format subset: Minimize/Maximize, Subject To, Binary, End; '\' comments.
IlpInstance parse_lp(std::istream& in);
IlpInstance parse_lp(std::string_view text);
void write_lp(std::ostream& out, const IlpInstance& instance);

// {"n":..,"c":[..],"constraints":[{"vars":[..],"coeffs":[..],"rel":"le"|"eq","rhs":..}]}
IlpInstance parse_json(std::string_view text);
std::string write_json(const IlpInstance& instance);

// Dispatches on extension: .lp or .json.
IlpInstance read_instance(const std::string& path);

// Erdős–Rényi G(n, p) independent set: c = -1, x_u + x_v <= 1 per edge.
// Pairs (u, v), u < v, are visited in lexicographic order; each draws one
// 53-bit uniform from mt19937_64(seed) and becomes an edge iff it is < p.
IlpInstance generate_independent_set(std::size_t n, double p, std::uint64_t seed);

// Variables outside every constraint land in isolated_vars; a warning is
// written to `warnings` when it is non-null.
Decomposition decompose(const IlpInstance& instance, std::ostream* warnings = nullptr);

bool is_feasible(const IlpInstance& instance, std::span<const std::uint8_t> x);
double objective_value(const IlpInstance& instance, std::span<const std::uint8_t> x);

// Brute force over all 2^n assignments (n <= 25). Ties go to the
// lexicographically smallest assignment. Throws InfeasibleError.
ExactSolution enumerate_optimum(const IlpInstance& instance);

}  // namespace doge

#include "doge/model.hpp"

#include "doge/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace doge {

namespace {

bool row_holds(const Constraint& row, std::span<const std::uint8_t> x)
{
    double lhs = 0.0;
    for (std::size_t k = 0; k < row.vars.size(); ++k)
        if (x[row.vars[k]]) lhs += row.coeffs[k];
    const double tol = 1e-9 * (1.0 + std::abs(row.rhs));
    if (row.rel == Relation::equal) return std::abs(lhs - row.rhs) <= tol;
    return lhs <= row.rhs + tol;
}

}  // namespace

void IlpInstance::validate() const
{
    if (objective.size() != num_vars)
        throw InvalidArgument("objective has " + std::to_string(objective.size()) + " entries, expected " +
                              std::to_string(num_vars));
    if (!names.empty() && names.size() != num_vars) throw InvalidArgument("names must be empty or one per variable");
    for (double c : objective)
        if (!std::isfinite(c)) throw InvalidArgument("non-finite objective coefficient");
    std::vector<std::size_t> seen(num_vars, std::numeric_limits<std::size_t>::max());
    for (std::size_t j = 0; j < constraints.size(); ++j) {
        const auto& row = constraints[j];
        if (row.vars.size() != row.coeffs.size()) throw InvalidArgument("constraint " + std::to_string(j) + ": vars/coeffs size mismatch");
        if (row.vars.empty()) throw InvalidArgument("constraint " + std::to_string(j) + " has no variables");
        if (!std::isfinite(row.rhs)) throw InvalidArgument("constraint " + std::to_string(j) + ": non-finite rhs");
        for (std::size_t k = 0; k < row.vars.size(); ++k) {
            const auto i = row.vars[k];
            if (i >= num_vars) throw InvalidArgument("constraint " + std::to_string(j) + ": variable index out of range");
            if (!std::isfinite(row.coeffs[k])) throw InvalidArgument("constraint " + std::to_string(j) + ": non-finite coefficient");
            if (seen[i] == j) throw InvalidArgument("constraint " + std::to_string(j) + ": duplicate variable " + var_name(i));
            seen[i] = j;
        }
    }
}

std::string IlpInstance::var_name(std::size_t i) const
{
    if (i < names.size()) return names[i];
    return "x" + std::to_string(i + 1);
}

IlpInstance parse_json(std::string_view text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("json: ") + e.what());
    }
    IlpInstance inst;
    try {
        inst.num_vars = doc.at("n").get<std::size_t>();
        inst.objective = doc.at("c").get<std::vector<double>>();
        if (doc.contains("names")) inst.names = doc.at("names").get<std::vector<std::string>>();
        for (const auto& row : doc.at("constraints")) {
            Constraint con;
            con.vars = row.at("vars").get<std::vector<std::uint32_t>>();
            con.coeffs = row.at("coeffs").get<std::vector<double>>();
            const auto rel = row.at("rel").get<std::string>();
            if (rel == "le")
                con.rel = Relation::less_equal;
            else if (rel == "eq")
                con.rel = Relation::equal;
            else
                throw ParseError("json: unsupported relation '" + rel + "'");
            con.rhs = row.at("rhs").get<double>();
            inst.constraints.push_back(std::move(con));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("json: ") + e.what());
    }
    try {
        inst.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(e.what());
    }
    return inst;
}

std::string write_json(const IlpInstance& instance)
{
    nlohmann::ordered_json doc;
    doc["n"] = instance.num_vars;
    doc["c"] = instance.objective;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : instance.constraints) {
        nlohmann::ordered_json r;
        r["vars"] = row.vars;
        r["coeffs"] = row.coeffs;
        r["rel"] = row.rel == Relation::equal ? "eq" : "le";
        r["rhs"] = row.rhs;
        rows.push_back(std::move(r));
    }
    doc["constraints"] = std::move(rows);
    if (!instance.names.empty()) doc["names"] = instance.names;
    return doc.dump() + "\n";
}

IlpInstance read_instance(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const auto text = buf.str();
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "json") return parse_json(text);
    if (ext == "lp") return parse_lp(std::string_view(text));
    throw ParseError("unknown instance extension for " + path + " (expected .lp or .json)");
}

IlpInstance generate_independent_set(std::size_t n, double p, std::uint64_t seed)
{
    if (n < 1) throw InvalidArgument("independent set: need n >= 1");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("independent set: p must lie in [0, 1]");
    IlpInstance inst;
    inst.num_vars = n;
    inst.objective.assign(n, -1.0);
    std::mt19937_64 rng(seed);
    for (std::uint32_t u = 0; u < n; ++u) {
        for (std::uint32_t v = u + 1; v < n; ++v) {
            const double draw = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            if (draw < p) inst.constraints.push_back(Constraint{{u, v}, {1.0, 1.0}, Relation::less_equal, 1.0});
        }
    }
    return inst;
}

Decomposition decompose(const IlpInstance& instance, std::ostream* warnings)
{
    instance.validate();
    Decomposition dec;
    const std::size_t n = instance.num_vars;
    const std::size_t m = instance.constraints.size();
    dec.subproblem_vars.resize(m);
    dec.var_subproblems.resize(n);
    dec.sub_offset.assign(m + 1, 0);
    for (std::size_t j = 0; j < m; ++j) {
        auto vars = instance.constraints[j].vars;
        std::sort(vars.begin(), vars.end());
        for (auto i : vars) dec.var_subproblems[i].push_back(static_cast<std::uint32_t>(j));
        dec.sub_offset[j + 1] = dec.sub_offset[j] + vars.size();
        dec.subproblem_vars[j] = std::move(vars);
    }
    dec.num_dual_vars = dec.sub_offset[m];
    dec.edge_var.resize(dec.num_dual_vars);
    dec.edge_sub.resize(dec.num_dual_vars);
    dec.edge_level.resize(dec.num_dual_vars);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t t = 0; t < dec.subproblem_vars[j].size(); ++t) {
            const auto e = dec.sub_offset[j] + t;
            dec.edge_var[e] = dec.subproblem_vars[j][t];
            dec.edge_sub[e] = static_cast<std::uint32_t>(j);
            dec.edge_level[e] = static_cast<std::uint32_t>(t);
        }
    }
    dec.var_offset.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) dec.var_offset[i + 1] = dec.var_offset[i] + dec.var_subproblems[i].size();
    dec.var_edges.resize(dec.num_dual_vars);
    {
        std::vector<std::size_t> fill(dec.var_offset.begin(), dec.var_offset.end() - 1);
        // increasing e visits each variable's subproblems in increasing j
        for (std::size_t e = 0; e < dec.num_dual_vars; ++e)
            dec.var_edges[fill[dec.edge_var[e]]++] = static_cast<std::uint32_t>(e);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (dec.var_subproblems[i].empty()) {
            dec.isolated_vars.push_back(static_cast<std::uint32_t>(i));
            if (warnings)
                *warnings << "warning: variable " << instance.var_name(i)
                          << " appears in no constraint; excluded from the dual, fixed by the sign of its cost\n";
        }
    }
    return dec;
}

bool is_feasible(const IlpInstance& instance, std::span<const std::uint8_t> x)
{
    for (const auto& row : instance.constraints)
        if (!row_holds(row, x)) return false;
    return true;
}

double objective_value(const IlpInstance& instance, std::span<const std::uint8_t> x)
{
    double v = 0.0;
    for (std::size_t i = 0; i < instance.num_vars; ++i)
        if (x[i]) v += instance.objective[i];
    return v;
}

ExactSolution enumerate_optimum(const IlpInstance& instance)
{
    instance.validate();
    const std::size_t n = instance.num_vars;
    if (n > 25) throw InvalidArgument("enumerate_optimum: n = " + std::to_string(n) + " exceeds 25");
    ExactSolution best;
    bool found = false;
    std::vector<std::uint8_t> x(n, 0);
    const std::uint64_t count = std::uint64_t{1} << n;
    // Variable 0 is the most significant bit, so increasing masks visit
    // assignments in lexicographic order and the first minimizer wins ties.
    for (std::uint64_t mask = 0; mask < count; ++mask) {
        for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<std::uint8_t>((mask >> (n - 1 - i)) & 1u);
        if (!is_feasible(instance, x)) continue;
        const double v = objective_value(instance, x);
        if (!found || v < best.value) {
            best.assignment = x;
            best.value = v;
            found = true;
        }
    }
    if (!found) throw InfeasibleError("instance has no feasible 0-1 assignment");
    return best;
}

}  // namespace doge

#pragma once

#include "doge/dual.hpp"
#include "doge/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace doge {

// min -x1 - x2 - x3  s.t.  x1 + x2 <= 1,  x2 + x3 <= 1
IlpInstance tiny_instance();

// Random costs in [-1, 1], m rows over 2..max_arity distinct variables with
// small integer coefficients; each rhs is chosen so a random point satisfies it.
IlpInstance random_instance(std::uint64_t seed, std::size_t n, std::size_t m, std::size_t max_arity = 4);

// TINY followed by `count` independent set graphs (n = 12, p = 0.25, seeds 1..count).
std::vector<IlpInstance> invariant_suite(std::size_t count);

struct SuiteResult {
    std::string name;
    bool passed = false;
    double value = 0.0;  // worst observed error or violation
    double limit = 0.0;
    std::string detail;
};

struct CheckConfig {
    Fault fault = Fault::none;
    std::size_t suite_size = 200;     // independent set graphs in the invariant suites
    std::size_t param_draws = 50;     // random (alpha, omega) draws for monotonicity
    std::size_t sweeps = 10;
    std::size_t grad_instances = 20;
    std::size_t grad_directions = 20;
    std::uint64_t seed = 1;
};

SuiteResult check_bdd_enumeration(const CheckConfig& config);
SuiteResult check_feasibility(const CheckConfig& config);
SuiteResult check_monotonicity(const CheckConfig& config);
SuiteResult check_bound_validity(const CheckConfig& config);
SuiteResult check_convergence(const CheckConfig& config);
SuiteResult check_solver_gradients(const CheckConfig& config);
SuiteResult check_network_gradients(const CheckConfig& config);
SuiteResult check_zero_network(const CheckConfig& config);
SuiteResult check_kernels(const CheckConfig& config);

std::vector<SuiteResult> run_all_checks(const CheckConfig& config);
void print_report(std::ostream& out, const std::vector<SuiteResult>& results);

}  // namespace doge

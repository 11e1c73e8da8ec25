#include "doge/net.hpp"

#include <algorithm>
#include <cmath>

namespace doge {

FeatureSet compute_features(const Problem& problem, const DualState& state, FeatureHistory& history)
{
    const auto& dec = problem.dec;
    const auto& inst = problem.instance;
    const auto n = dec.num_vars();
    const auto m = dec.num_subproblems();
    const auto edges = problem.num_edges();

    std::vector<std::uint8_t> bits;
    std::vector<double> E;
    subproblem_minimizers(problem, state, bits, E);

    FeatureSet f;
    f.f_I.resize(n * kVarFeatures);
    const double c_norm = std::max(problem.cost_scale, kFeatureEps);
    const double mean_degree = std::max(static_cast<double>(edges) / static_cast<double>(std::max<std::size_t>(n, 1)), 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        f.f_I[i * kVarFeatures + 0] = inst.objective[i] / c_norm;
        f.f_I[i * kVarFeatures + 1] = static_cast<double>(dec.degree(i)) / mean_degree;
    }
    f.dual_scale = c_norm / mean_degree;

    if (!history.started) {
        history.started = true;
        double total = 0.0;
        for (double v : E) total += std::abs(v);
        history.value_scale = std::max(total / static_cast<double>(std::max<std::size_t>(m, 1)), kFeatureEps);
        history.last_E = E;
        history.last_delta.assign(m, 0.0);
        history.ema_d1.assign(m, 0.0);
        history.ema_d2.assign(m, 0.0);
        history.nonparam_delta.assign(m, 0.0);
        history.ema_bit.assign(bits.begin(), bits.end());
    } else {
        for (std::size_t j = 0; j < m; ++j) {
            const double d1 = E[j] - history.last_E[j];
            const double d2 = d1 - history.last_delta[j];
            history.ema_d1[j] = kEmaFactor * history.ema_d1[j] + (1.0 - kEmaFactor) * d1;
            history.ema_d2[j] = kEmaFactor * history.ema_d2[j] + (1.0 - kEmaFactor) * d2;
            history.last_delta[j] = d1;
        }
        for (std::size_t e = 0; e < edges; ++e)
            history.ema_bit[e] = kEmaFactor * history.ema_bit[e] + (1.0 - kEmaFactor) * bits[e];
        history.last_E = E;
    }

    f.f_J.resize(m * kSubFeatures);
    const double vs = history.value_scale;
    for (std::size_t j = 0; j < m; ++j) {
        const auto& row = inst.constraints[j];
        double* x = f.f_J.data() + j * kSubFeatures;
        x[0] = static_cast<double>(dec.subproblem_size(j));
        x[1] = row.rhs;
        x[2] = row.rel == Relation::equal ? 1.0 : 0.0;
        x[3] = E[j] / vs;
        x[4] = history.ema_d1[j] / vs;
        x[5] = history.ema_d2[j] / vs;
        x[6] = history.nonparam_delta[j] / vs;
    }

    double scale = 0.0;
    for (std::size_t e = 0; e < edges; ++e) scale = std::max(scale, std::abs(state.hi[e] - state.lo[e] + state.M[e]));
    scale += kFeatureEps;
    f.f_E.resize(edges * kEdgeFeatures);
    for (std::size_t e = 0; e < edges; ++e) {
        const auto j = dec.edge_sub[e];
        double* x = f.f_E.data() + e * kEdgeFeatures;
        x[0] = bits[e];
        x[1] = history.ema_bit[e];
        const auto& row = inst.constraints[j];
        const auto pos = std::find(row.vars.begin(), row.vars.end(), dec.edge_var[e]) - row.vars.begin();
        x[2] = row.coeffs[static_cast<std::size_t>(pos)];
        x[3] = (state.hi[e] - state.lo[e]) / scale;
        x[4] = state.M[e] / scale;
    }
    return f;
}

void observe_nonparam(const Problem& problem, const DualState& state, FeatureHistory& history)
{
    const auto E = subproblem_values(problem, state);
    history.nonparam_delta.resize(E.size());
    for (std::size_t j = 0; j < E.size(); ++j) history.nonparam_delta[j] = E[j] - history.last_E[j];
}

}  // namespace doge

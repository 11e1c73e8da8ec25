#pragma once

#include "doge/dual.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace doge {

constexpr std::size_t kVarFeatures = 2;   // c_i / max(||c||_inf, eps), |J_i| / mean degree
constexpr std::size_t kSubFeatures = 7;   // |I_j|, b_j, is_eq; E^j, ema d1, ema d2, last nonparam change over the value scale
constexpr std::size_t kEdgeFeatures = 5;  // minimizer bit, its ema, A_ji, lambda / norm, M / norm
constexpr std::size_t kNodeDim = 16;
constexpr std::size_t kEdgeDim = 8;
constexpr std::size_t kLstmDim = 16;
constexpr std::size_t kPhiHidden = 32;
constexpr std::size_t kPhiInput = kVarFeatures + kNodeDim + kNodeDim + kSubFeatures + kNodeDim + kEdgeFeatures;
constexpr double kFeatureEps = 1e-9;
constexpr double kEmaFactor = 0.9;
constexpr double kThetaScale = 0.1;
constexpr double kOmegaClamp = 1e-6;

struct FeatureSet {
    std::vector<double> f_I;  // num_vars x kVarFeatures
    std::vector<double> f_J;  // num_subproblems x kSubFeatures
    std::vector<double> f_E;  // num_dual_vars x kEdgeFeatures
    double dual_scale = 1.0;  // typical |lambda|: ||c||_inf / mean degree
};

// Quantities carried between rounds for the moving-average features.
struct FeatureHistory {
    bool started = false;
    double value_scale = 1.0;  // mean |E^j| at the first observation
    std::vector<double> last_E;
    std::vector<double> last_delta;
    std::vector<double> ema_d1;
    std::vector<double> ema_d2;
    std::vector<double> ema_bit;
    std::vector<double> nonparam_delta;
};

// Observes E^j and the subproblem minimizers at `state` and advances the
// history. Averages start at the first observation; the first change is 0.
// Degrees are divided by the mean degree and subproblem values by the
// history's value scale so inputs stay in range across instance sizes.
FeatureSet compute_features(const Problem& problem, const DualState& state, FeatureHistory& history);

// Records E^j(after) - E^j(before) for the update applied since the last
// compute_features call.
void observe_nonparam(const Problem& problem, const DualState& state, FeatureHistory& history);

enum class Arch : std::uint32_t { doge = 0, doge_m = 1 };

Arch parse_arch(const std::string& text);
const char* arch_name(Arch arch);

// Offsets of one affine map y = W x (+ b) into the flat parameter vector.
struct Affine {
    std::size_t w = 0;
    std::size_t b = 0;
    std::size_t in = 0;
    std::size_t out = 0;
    bool has_bias = true;
};

// Transformer-style attention from source nodes onto destination nodes,
// followed by layer normalization and ReLU.
struct MpLayout {
    Affine query;       // dst -> key space
    Affine key;         // src -> key space
    Affine key_edge;    // edge embedding -> key space
    Affine value;       // src -> node dim
    Affine value_edge;  // edge embedding -> node dim
    Affine skip;        // dst -> node dim
    std::size_t ln_gamma = 0;
    std::size_t ln_beta = 0;
};

struct Layout {
    Affine edge_encoder;
    MpLayout to_sub;  // variables -> subproblems
    MpLayout to_var;  // subproblems -> variables
    Affine lstm_input;
    Affine lstm_hidden;
    Affine phi[4];
    std::size_t size = 0;
};

Layout make_layout(Arch arch);

struct GnnWeights {
    Arch arch = Arch::doge;
    std::vector<double> values;

    bool operator==(const GnnWeights&) const = default;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)) per affine block, zero biases,
// unit layer-norm scale, LSTM forget-gate bias 1.
GnnWeights init_weights(Arch arch, std::uint64_t seed);
GnnWeights zero_weights(Arch arch);
// Zeroes the predictor's output layer so predictions start at the defaults.
void zero_output_layer(GnnWeights& weights);
std::size_t parameter_count(Arch arch);

// Versioned little-endian binary holding one or more networks. Throws
// ParseError on a bad magic, version or truncated file.
void save_weights(std::ostream& out, const std::vector<GnnWeights>& nets);
std::vector<GnnWeights> load_weights(std::istream& in);
void save_weights(const std::string& path, const std::vector<GnnWeights>& nets);
std::vector<GnnWeights> load_weights(const std::string& path);

// LSTM state of the variable nodes (unused by the plain variant).
struct LstmState {
    std::vector<double> h;  // num_vars x kLstmDim
    std::vector<double> c;

    bool empty() const { return h.empty(); }
    bool operator==(const LstmState&) const = default;
};

LstmState zero_lstm_state(std::size_t num_vars);

struct NetOutput {
    std::vector<double> alpha_logit;  // pre-transform outputs
    std::vector<double> omega_logit;
    std::vector<double> alpha;        // softmax over J_i
    std::vector<double> omega;        // sigmoid, clamped to [1e-6, 1 - 1e-6]
    std::vector<double> theta;        // theta_scale * raw output
    double theta_scale = kThetaScale; // kThetaScale * dual_scale of the features
    LstmState state;
};

// Forward activations needed by the backward pass.
struct NetCache {
    FeatureSet features;
    std::vector<double> edge_h;  // edge embeddings after ReLU
    struct Mp {
        std::vector<double> q, k, v, attn, pre, xhat, inv_std, out;
    } to_sub, to_var;
    std::vector<double> var_src;  // [f_J, h_J] per subproblem
    LstmState prev;
    std::vector<double> gates;    // activated i, f, g, o per variable
    std::vector<double> tanh_c;
    std::vector<double> phi_in;   // per edge kPhiInput
    std::vector<double> phi_act[3];
    NetOutput out;
};

SolverParams to_solver_params(const Decomposition& dec, const NetOutput& out);

// `prev` may be empty (zero state). Fills `cache` when given.
NetOutput gnn_forward(const GnnWeights& weights, const Decomposition& dec, const FeatureSet& features,
                      const LstmState& prev, NetCache* cache = nullptr);

struct PreTransformGrad {
    std::vector<double> d_alpha_logit;
    std::vector<double> d_omega_logit;
    std::vector<double> d_theta_raw;
};

// Chains post-transform gradients through softmax, sigmoid (zero where
// clamped) and the theta scale.
PreTransformGrad transform_backward(const Decomposition& dec, const NetOutput& out, std::span<const double> d_alpha,
                                    std::span<const double> d_omega, std::span<const double> d_theta);

// Accumulates weight gradients into `d_weights` (resized if empty) and
// returns the adjoint of the incoming LSTM state. `d_state` is the adjoint of
// the outgoing LSTM state and may be empty.
LstmState gnn_backward(const GnnWeights& weights, const Decomposition& dec, const NetCache& cache,
                       const PreTransformGrad& grad, const LstmState& d_state, std::vector<double>& d_weights);

}  // namespace doge

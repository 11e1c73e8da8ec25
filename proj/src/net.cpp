#include "doge/net.hpp"

#include "doge/error.hpp"
#include "doge/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

namespace doge {

namespace {

constexpr double kLnEps = 1e-5;
constexpr char kMagic[8] = {'D', 'O', 'G', 'E', 'W', 'T', 'S', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "weight files are written in host order");

struct Allocator {
    std::size_t next = 0;

    Affine affine(std::size_t in, std::size_t out, bool bias = true)
    {
        Affine a;
        a.in = in;
        a.out = out;
        a.has_bias = bias;
        a.w = next;
        next += in * out;
        a.b = next;
        if (bias) next += out;
        return a;
    }
    std::size_t vec(std::size_t len)
    {
        const auto at = next;
        next += len;
        return at;
    }
};

MpLayout mp_layout(Allocator& alloc, std::size_t dst_dim, std::size_t src_dim)
{
    MpLayout l;
    l.query = alloc.affine(dst_dim, kNodeDim);
    l.key = alloc.affine(src_dim, kNodeDim);
    l.key_edge = alloc.affine(kEdgeDim, kNodeDim, false);
    l.value = alloc.affine(src_dim, kNodeDim);
    l.value_edge = alloc.affine(kEdgeDim, kNodeDim, false);
    l.skip = alloc.affine(dst_dim, kNodeDim);
    l.ln_gamma = alloc.vec(kNodeDim);
    l.ln_beta = alloc.vec(kNodeDim);
    return l;
}

// y += W x (+ b)
inline void apply(const double* P, const Affine& a, const double* x, double* y)
{
    const auto& k = kernels::active();
    if (a.has_bias) k.axpy(1.0, P + a.b, y, a.out);
    k.gemv(P + a.w, x, y, a.out, a.in);
}

// dW += dy x^T, db += dy, dx += W^T dy (dx may be null)
inline void apply_backward(const double* P, double* dP, const Affine& a, const double* x, const double* dy, double* dx)
{
    const auto& k = kernels::active();
    k.ger(dP + a.w, dy, x, a.out, a.in);
    if (a.has_bias) k.axpy(1.0, dy, dP + a.b, a.out);
    if (dx) k.gemv_t(P + a.w, dy, dx, a.out, a.in);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Destination-major edge lists: for destination d, edges[offset[d]..offset[d+1]).
struct Incidence {
    std::vector<std::size_t> offset;
    std::vector<std::uint32_t> edge;
    std::vector<std::uint32_t> src;
};

Incidence sub_incidence(const Decomposition& dec)
{
    Incidence inc;
    inc.offset = dec.sub_offset;
    inc.edge.resize(dec.num_dual_vars);
    inc.src.resize(dec.num_dual_vars);
    for (std::size_t e = 0; e < dec.num_dual_vars; ++e) {
        inc.edge[e] = static_cast<std::uint32_t>(e);
        inc.src[e] = dec.edge_var[e];
    }
    return inc;
}

Incidence var_incidence(const Decomposition& dec)
{
    Incidence inc;
    inc.offset = dec.var_offset;
    inc.edge = dec.var_edges;
    inc.src.resize(dec.var_edges.size());
    for (std::size_t k = 0; k < dec.var_edges.size(); ++k) inc.src[k] = dec.edge_sub[dec.var_edges[k]];
    return inc;
}

void mp_forward(const double* P, const MpLayout& l, const Incidence& inc, const double* X, std::size_t dst_dim,
                const double* Y, std::size_t src_dim, const double* H, NetCache::Mp& c)
{
    const auto nd = inc.offset.size() - 1;
    const auto ne = inc.edge.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(kNodeDim));
    c.q.assign(nd * kNodeDim, 0.0);
    c.k.assign(ne * kNodeDim, 0.0);
    c.v.assign(ne * kNodeDim, 0.0);
    c.attn.assign(ne, 0.0);
    c.pre.assign(nd * kNodeDim, 0.0);
    c.xhat.assign(nd * kNodeDim, 0.0);
    c.inv_std.assign(nd, 0.0);
    c.out.assign(nd * kNodeDim, 0.0);
    const auto& kern = kernels::active();
    // k, v are stored per incidence slot, not per edge id.
    for (std::size_t s = 0; s < ne; ++s) {
        const double* y = Y + inc.src[s] * src_dim;
        const double* h = H + static_cast<std::size_t>(inc.edge[s]) * kEdgeDim;
        apply(P, l.key, y, &c.k[s * kNodeDim]);
        apply(P, l.key_edge, h, &c.k[s * kNodeDim]);
        apply(P, l.value, y, &c.v[s * kNodeDim]);
        apply(P, l.value_edge, h, &c.v[s * kNodeDim]);
    }
    const double* gamma = P + l.ln_gamma;
    const double* beta = P + l.ln_beta;
    for (std::size_t d = 0; d < nd; ++d) {
        const double* x = X + d * dst_dim;
        double* q = &c.q[d * kNodeDim];
        double* pre = &c.pre[d * kNodeDim];
        apply(P, l.query, x, q);
        apply(P, l.skip, x, pre);
        const auto b = inc.offset[d], e = inc.offset[d + 1];
        if (b < e) {
            double mx = -std::numeric_limits<double>::infinity();
            for (auto s = b; s < e; ++s) {
                c.attn[s] = scale * kern.dot(q, &c.k[s * kNodeDim], kNodeDim);
                mx = std::max(mx, c.attn[s]);
            }
            double sum = 0.0;
            for (auto s = b; s < e; ++s) {
                c.attn[s] = std::exp(c.attn[s] - mx);
                sum += c.attn[s];
            }
            for (auto s = b; s < e; ++s) {
                c.attn[s] /= sum;
                kern.axpy(c.attn[s], &c.v[s * kNodeDim], pre, kNodeDim);
            }
        }
        double mean = 0.0;
        for (std::size_t k = 0; k < kNodeDim; ++k) mean += pre[k];
        mean /= kNodeDim;
        double var = 0.0;
        for (std::size_t k = 0; k < kNodeDim; ++k) var += (pre[k] - mean) * (pre[k] - mean);
        var /= kNodeDim;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        c.inv_std[d] = inv;
        for (std::size_t k = 0; k < kNodeDim; ++k) {
            const double xh = (pre[k] - mean) * inv;
            c.xhat[d * kNodeDim + k] = xh;
            c.out[d * kNodeDim + k] = std::max(gamma[k] * xh + beta[k], 0.0);
        }
    }
}

// d_out is consumed; adds into dX (may be null), dY, dH and dP.
void mp_backward(const double* P, double* dP, const MpLayout& l, const Incidence& inc, const double* X,
                 std::size_t dst_dim, const double* Y, std::size_t src_dim, const double* H, const NetCache::Mp& c,
                 const double* d_out, double* dX, double* dY, double* dH)
{
    const auto nd = inc.offset.size() - 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(kNodeDim));
    const auto& kern = kernels::active();
    const double* gamma = P + l.ln_gamma;
    double dz[kNodeDim], dxh[kNodeDim], dpre[kNodeDim], dq[kNodeDim], dk[kNodeDim], dv[kNodeDim];
    for (std::size_t d = 0; d < nd; ++d) {
        const double* xhat = &c.xhat[d * kNodeDim];
        const double* out = &c.out[d * kNodeDim];
        bool any = false;
        for (std::size_t k = 0; k < kNodeDim; ++k) {
            dz[k] = out[k] > 0.0 ? d_out[d * kNodeDim + k] : 0.0;
            any = any || dz[k] != 0.0;
        }
        if (!any) continue;
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t k = 0; k < kNodeDim; ++k) {
            dP[l.ln_gamma + k] += dz[k] * xhat[k];
            dP[l.ln_beta + k] += dz[k];
            dxh[k] = dz[k] * gamma[k];
            m1 += dxh[k];
            m2 += dxh[k] * xhat[k];
        }
        m1 /= kNodeDim;
        m2 /= kNodeDim;
        for (std::size_t k = 0; k < kNodeDim; ++k) dpre[k] = c.inv_std[d] * (dxh[k] - m1 - xhat[k] * m2);

        const double* x = X + d * dst_dim;
        apply_backward(P, dP, l.skip, x, dpre, dX ? dX + d * dst_dim : nullptr);

        const auto b = inc.offset[d], e = inc.offset[d + 1];
        if (b == e) continue;
        // attention: pre += sum_s a_s v_s, a = softmax(scale q.k_s)
        double weighted = 0.0;
        for (auto s = b; s < e; ++s) weighted += c.attn[s] * kern.dot(dpre, &c.v[s * kNodeDim], kNodeDim);
        std::fill(dq, dq + kNodeDim, 0.0);
        const double* q = &c.q[d * kNodeDim];
        for (auto s = b; s < e; ++s) {
            const double a = c.attn[s];
            const double da = kern.dot(dpre, &c.v[s * kNodeDim], kNodeDim);
            const double dscore = a * (da - weighted) * scale;
            for (std::size_t k = 0; k < kNodeDim; ++k) {
                dv[k] = a * dpre[k];
                dk[k] = dscore * q[k];
                dq[k] += dscore * c.k[s * kNodeDim + k];
            }
            const double* y = Y + inc.src[s] * src_dim;
            const double* h = H + static_cast<std::size_t>(inc.edge[s]) * kEdgeDim;
            double* dy = dY + inc.src[s] * src_dim;
            double* dh = dH + static_cast<std::size_t>(inc.edge[s]) * kEdgeDim;
            apply_backward(P, dP, l.key, y, dk, dy);
            apply_backward(P, dP, l.key_edge, h, dk, dh);
            apply_backward(P, dP, l.value, y, dv, dy);
            apply_backward(P, dP, l.value_edge, h, dv, dh);
        }
        apply_backward(P, dP, l.query, x, dq, dX ? dX + d * dst_dim : nullptr);
    }
}

void glorot(std::vector<double>& values, const Affine& a, std::mt19937_64& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(a.in + a.out));
    for (std::size_t k = 0; k < a.in * a.out; ++k) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        values[a.w + k] = (2.0 * u - 1.0) * bound;
    }
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

template <typename T>
T read_pod(std::istream& in)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("weight file truncated");
    return v;
}

}  // namespace

Arch parse_arch(const std::string& text)
{
    if (text == "doge") return Arch::doge;
    if (text == "doge-m") return Arch::doge_m;
    throw InvalidArgument("unknown architecture '" + text + "' (expected doge or doge-m)");
}

const char* arch_name(Arch arch) { return arch == Arch::doge_m ? "doge-m" : "doge"; }

Layout make_layout(Arch arch)
{
    Allocator alloc;
    Layout l;
    l.edge_encoder = alloc.affine(kEdgeFeatures, kEdgeDim);
    l.to_sub = mp_layout(alloc, kSubFeatures, kVarFeatures);
    l.to_var = mp_layout(alloc, kVarFeatures, kSubFeatures + kNodeDim);
    if (arch == Arch::doge_m) {
        l.lstm_input = alloc.affine(kNodeDim, 4 * kLstmDim);
        l.lstm_hidden = alloc.affine(kLstmDim, 4 * kLstmDim, false);
    }
    l.phi[0] = alloc.affine(kPhiInput, kPhiHidden);
    l.phi[1] = alloc.affine(kPhiHidden, kPhiHidden);
    l.phi[2] = alloc.affine(kPhiHidden, kPhiHidden);
    l.phi[3] = alloc.affine(kPhiHidden, 3);
    l.size = alloc.next;
    return l;
}

std::size_t parameter_count(Arch arch) { return make_layout(arch).size; }

GnnWeights zero_weights(Arch arch)
{
    GnnWeights w;
    w.arch = arch;
    w.values.assign(parameter_count(arch), 0.0);
    return w;
}

GnnWeights init_weights(Arch arch, std::uint64_t seed)
{
    const auto l = make_layout(arch);
    GnnWeights w = zero_weights(arch);
    std::mt19937_64 rng(seed);
    glorot(w.values, l.edge_encoder, rng);
    for (const MpLayout* mp : {&l.to_sub, &l.to_var}) {
        for (const Affine* a : {&mp->query, &mp->key, &mp->key_edge, &mp->value, &mp->value_edge, &mp->skip})
            glorot(w.values, *a, rng);
        std::fill_n(w.values.begin() + static_cast<std::ptrdiff_t>(mp->ln_gamma), kNodeDim, 1.0);
    }
    if (arch == Arch::doge_m) {
        glorot(w.values, l.lstm_input, rng);
        glorot(w.values, l.lstm_hidden, rng);
        // gate order i, f, g, o
        std::fill_n(w.values.begin() + static_cast<std::ptrdiff_t>(l.lstm_input.b + kLstmDim), kLstmDim, 1.0);
    }
    for (const auto& a : l.phi) glorot(w.values, a, rng);
    return w;
}

void zero_output_layer(GnnWeights& weights)
{
    const auto l = make_layout(weights.arch);
    const auto& a = l.phi[3];
    std::fill(weights.values.begin() + static_cast<std::ptrdiff_t>(a.w),
              weights.values.begin() + static_cast<std::ptrdiff_t>(a.b + a.out), 0.0);
}

void save_weights(std::ostream& out, const std::vector<GnnWeights>& nets)
{
    out.write(kMagic, sizeof kMagic);
    write_u32(out, kFormatVersion);
    write_u32(out, static_cast<std::uint32_t>(nets.size()));
    for (const auto& w : nets) {
        write_u32(out, static_cast<std::uint32_t>(w.arch));
        write_u64(out, w.values.size());
        out.write(reinterpret_cast<const char*>(w.values.data()), static_cast<std::streamsize>(w.values.size() * sizeof(double)));
    }
    if (!out) throw Error("failed to write weights");
}

std::vector<GnnWeights> load_weights(std::istream& in)
{
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError("not a weight file (bad magic)");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw ParseError("unsupported weight file version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(in);
    std::vector<GnnWeights> nets;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto arch = read_pod<std::uint32_t>(in);
        if (arch > static_cast<std::uint32_t>(Arch::doge_m)) throw ParseError("weight file: unknown architecture");
        GnnWeights w;
        w.arch = static_cast<Arch>(arch);
        const auto size = read_pod<std::uint64_t>(in);
        if (size != parameter_count(w.arch)) throw ParseError("weight file: parameter count does not match architecture");
        w.values.resize(size);
        if (!in.read(reinterpret_cast<char*>(w.values.data()), static_cast<std::streamsize>(size * sizeof(double))))
            throw ParseError("weight file truncated");
        for (double v : w.values)
            if (!std::isfinite(v)) throw ParseError("weight file contains non-finite values");
        nets.push_back(std::move(w));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("weight file has trailing bytes");
    return nets;
}

void save_weights(const std::string& path, const std::vector<GnnWeights>& nets)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    save_weights(out, nets);
}

std::vector<GnnWeights> load_weights(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    return load_weights(in);
}

LstmState zero_lstm_state(std::size_t num_vars)
{
    LstmState s;
    s.h.assign(num_vars * kLstmDim, 0.0);
    s.c.assign(num_vars * kLstmDim, 0.0);
    return s;
}

SolverParams to_solver_params(const Decomposition& dec, const NetOutput& out)
{
    SolverParams p;
    p.alpha = out.alpha;
    p.omega = out.omega;
    normalize_params(dec, p);
    return p;
}

NetOutput gnn_forward(const GnnWeights& weights, const Decomposition& dec, const FeatureSet& features,
                      const LstmState& prev, NetCache* cache)
{
    const auto l = make_layout(weights.arch);
    if (weights.values.size() != l.size) throw InvalidArgument("gnn_forward: weight vector does not match layout");
    const auto n = dec.num_vars();
    const auto m = dec.num_subproblems();
    const auto edges = dec.num_dual_vars;
    if (features.f_I.size() != n * kVarFeatures || features.f_J.size() != m * kSubFeatures ||
        features.f_E.size() != edges * kEdgeFeatures)
        throw InvalidArgument("gnn_forward: feature dimensions do not match the decomposition");
    const double* P = weights.values.data();

    NetCache local;
    NetCache& c = cache ? *cache : local;
    c.features = features;

    c.edge_h.assign(edges * kEdgeDim, 0.0);
    for (std::size_t e = 0; e < edges; ++e) {
        double* h = &c.edge_h[e * kEdgeDim];
        apply(P, l.edge_encoder, &features.f_E[e * kEdgeFeatures], h);
        for (std::size_t k = 0; k < kEdgeDim; ++k) h[k] = std::max(h[k], 0.0);
    }

    const auto sub_inc = sub_incidence(dec);
    const auto var_inc = var_incidence(dec);
    mp_forward(P, l.to_sub, sub_inc, features.f_J.data(), kSubFeatures, features.f_I.data(), kVarFeatures,
               c.edge_h.data(), c.to_sub);
    const auto& h_J = c.to_sub.out;

    constexpr std::size_t src_dim = kSubFeatures + kNodeDim;
    c.var_src.resize(m * src_dim);
    for (std::size_t j = 0; j < m; ++j) {
        std::copy_n(&features.f_J[j * kSubFeatures], kSubFeatures, &c.var_src[j * src_dim]);
        std::copy_n(&h_J[j * kNodeDim], kNodeDim, &c.var_src[j * src_dim + kSubFeatures]);
    }
    mp_forward(P, l.to_var, var_inc, features.f_I.data(), kVarFeatures, c.var_src.data(), src_dim, c.edge_h.data(),
               c.to_var);
    const auto& h_I = c.to_var.out;

    NetOutput out;
    const double* z_I = h_I.data();
    if (weights.arch == Arch::doge_m) {
        c.prev = prev.empty() ? zero_lstm_state(n) : prev;
        if (c.prev.h.size() != n * kLstmDim) throw InvalidArgument("gnn_forward: LSTM state size mismatch");
        c.gates.assign(n * 4 * kLstmDim, 0.0);
        c.tanh_c.assign(n * kLstmDim, 0.0);
        out.state = zero_lstm_state(n);
        for (std::size_t i = 0; i < n; ++i) {
            double* g = &c.gates[i * 4 * kLstmDim];
            apply(P, l.lstm_input, &h_I[i * kNodeDim], g);
            apply(P, l.lstm_hidden, &c.prev.h[i * kLstmDim], g);
            for (std::size_t k = 0; k < kLstmDim; ++k) {
                const double ig = sigmoid(g[k]);
                const double fg = sigmoid(g[kLstmDim + k]);
                const double gg = std::tanh(g[2 * kLstmDim + k]);
                const double og = sigmoid(g[3 * kLstmDim + k]);
                g[k] = ig;
                g[kLstmDim + k] = fg;
                g[2 * kLstmDim + k] = gg;
                g[3 * kLstmDim + k] = og;
                const double cn = fg * c.prev.c[i * kLstmDim + k] + ig * gg;
                const double tc = std::tanh(cn);
                c.tanh_c[i * kLstmDim + k] = tc;
                out.state.c[i * kLstmDim + k] = cn;
                out.state.h[i * kLstmDim + k] = og * tc;
            }
        }
        z_I = out.state.h.data();
    }

    c.phi_in.assign(edges * kPhiInput, 0.0);
    for (int layer = 0; layer < 3; ++layer) c.phi_act[layer].assign(edges * kPhiHidden, 0.0);
    out.alpha_logit.resize(edges);
    out.omega_logit.resize(edges);
    out.theta.resize(edges);
    out.theta_scale = kThetaScale * features.dual_scale;
    out.omega.resize(edges);
    out.alpha.resize(edges);
    for (std::size_t e = 0; e < edges; ++e) {
        const auto i = dec.edge_var[e];
        const auto j = dec.edge_sub[e];
        double* u = &c.phi_in[e * kPhiInput];
        u = std::copy_n(&features.f_I[i * kVarFeatures], kVarFeatures, u);
        u = std::copy_n(&h_I[i * kNodeDim], kNodeDim, u);
        u = std::copy_n(z_I + i * kNodeDim, kNodeDim, u);
        u = std::copy_n(&features.f_J[j * kSubFeatures], kSubFeatures, u);
        u = std::copy_n(&h_J[j * kNodeDim], kNodeDim, u);
        std::copy_n(&features.f_E[e * kEdgeFeatures], kEdgeFeatures, u);

        const double* x = &c.phi_in[e * kPhiInput];
        for (int layer = 0; layer < 3; ++layer) {
            double* a = &c.phi_act[layer][e * kPhiHidden];
            apply(P, l.phi[layer], x, a);
            for (std::size_t k = 0; k < kPhiHidden; ++k) a[k] = std::max(a[k], 0.0);
            x = a;
        }
        double y[3] = {0.0, 0.0, 0.0};
        apply(P, l.phi[3], x, y);
        out.alpha_logit[e] = y[0];
        out.omega_logit[e] = y[1];
        out.omega[e] = std::clamp(sigmoid(y[1]), kOmegaClamp, 1.0 - kOmegaClamp);
        out.theta[e] = out.theta_scale * y[2];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto es = dec.edges_of_var(i);
        if (es.empty()) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (auto e : es) mx = std::max(mx, out.alpha_logit[e]);
        double sum = 0.0;
        for (auto e : es) {
            out.alpha[e] = std::exp(out.alpha_logit[e] - mx);
            sum += out.alpha[e];
        }
        for (auto e : es) out.alpha[e] /= sum;
    }
    if (cache) c.out = out;
    return out;
}

PreTransformGrad transform_backward(const Decomposition& dec, const NetOutput& out, std::span<const double> d_alpha,
                                    std::span<const double> d_omega, std::span<const double> d_theta)
{
    const auto edges = dec.num_dual_vars;
    PreTransformGrad g;
    g.d_alpha_logit.assign(edges, 0.0);
    g.d_omega_logit.assign(edges, 0.0);
    g.d_theta_raw.assign(edges, 0.0);
    for (std::size_t i = 0; i < dec.num_vars(); ++i) {
        const auto es = dec.edges_of_var(i);
        double dot = 0.0;
        for (auto e : es) dot += out.alpha[e] * d_alpha[e];
        for (auto e : es) g.d_alpha_logit[e] = out.alpha[e] * (d_alpha[e] - dot);
    }
    for (std::size_t e = 0; e < edges; ++e) {
        const double s = sigmoid(out.omega_logit[e]);
        const bool clamped = s <= kOmegaClamp || s >= 1.0 - kOmegaClamp;
        g.d_omega_logit[e] = clamped ? 0.0 : d_omega[e] * s * (1.0 - s);
        g.d_theta_raw[e] = out.theta_scale * d_theta[e];
    }
    return g;
}

LstmState gnn_backward(const GnnWeights& weights, const Decomposition& dec, const NetCache& cache,
                       const PreTransformGrad& grad, const LstmState& d_state, std::vector<double>& d_weights)
{
    const auto l = make_layout(weights.arch);
    const auto n = dec.num_vars();
    const auto m = dec.num_subproblems();
    const auto edges = dec.num_dual_vars;
    if (cache.phi_in.size() != edges * kPhiInput) throw InvalidArgument("gnn_backward: missing or stale forward cache");
    if (d_weights.empty()) d_weights.assign(l.size, 0.0);
    if (d_weights.size() != l.size) throw InvalidArgument("gnn_backward: gradient vector does not match layout");
    const double* P = weights.values.data();
    double* dP = d_weights.data();
    const auto& f = cache.features;
    const auto& kern = kernels::active();

    std::vector<double> d_hI(n * kNodeDim, 0.0), d_zI(n * kNodeDim, 0.0), d_hJ(m * kNodeDim, 0.0);
    double d_act[kPhiHidden], d_prev[kPhiInput];
    for (std::size_t e = 0; e < edges; ++e) {
        double dy[3] = {grad.d_alpha_logit[e], grad.d_omega_logit[e], grad.d_theta_raw[e]};
        if (dy[0] == 0.0 && dy[1] == 0.0 && dy[2] == 0.0) continue;
        const double* a2 = &cache.phi_act[2][e * kPhiHidden];
        std::fill(d_act, d_act + kPhiHidden, 0.0);
        apply_backward(P, dP, l.phi[3], a2, dy, d_act);
        for (int layer = 2; layer >= 0; --layer) {
            const double* a = &cache.phi_act[layer][e * kPhiHidden];
            for (std::size_t k = 0; k < kPhiHidden; ++k)
                if (a[k] <= 0.0) d_act[k] = 0.0;
            const double* x = layer == 0 ? &cache.phi_in[e * kPhiInput] : &cache.phi_act[layer - 1][e * kPhiHidden];
            const std::size_t in = layer == 0 ? kPhiInput : kPhiHidden;
            std::fill(d_prev, d_prev + in, 0.0);
            apply_backward(P, dP, l.phi[layer], x, d_act, d_prev);
            if (layer > 0) std::copy_n(d_prev, kPhiHidden, d_act);
        }
        // d_prev now holds the gradient of the predictor input.
        const auto i = dec.edge_var[e];
        const auto j = dec.edge_sub[e];
        const double* u = d_prev + kVarFeatures;
        kern.axpy(1.0, u, &d_hI[i * kNodeDim], kNodeDim);
        kern.axpy(1.0, u + kNodeDim, &d_zI[i * kNodeDim], kNodeDim);
        kern.axpy(1.0, u + 2 * kNodeDim + kSubFeatures, &d_hJ[j * kNodeDim], kNodeDim);
    }

    LstmState d_in;
    if (weights.arch == Arch::doge_m) {
        d_in = zero_lstm_state(n);
        const auto& h_I = cache.to_var.out;
        double dg[4 * kLstmDim];
        for (std::size_t i = 0; i < n; ++i) {
            const double* g = &cache.gates[i * 4 * kLstmDim];
            for (std::size_t k = 0; k < kLstmDim; ++k) {
                const auto at = i * kLstmDim + k;
                const double dh = d_zI[at] + (d_state.h.empty() ? 0.0 : d_state.h[at]);
                const double ig = g[k], fg = g[kLstmDim + k], gg = g[2 * kLstmDim + k], og = g[3 * kLstmDim + k];
                const double tc = cache.tanh_c[at];
                const double dc = (d_state.c.empty() ? 0.0 : d_state.c[at]) + dh * og * (1.0 - tc * tc);
                dg[k] = dc * gg * ig * (1.0 - ig);
                dg[kLstmDim + k] = dc * cache.prev.c[at] * fg * (1.0 - fg);
                dg[2 * kLstmDim + k] = dc * ig * (1.0 - gg * gg);
                dg[3 * kLstmDim + k] = dh * tc * og * (1.0 - og);
                d_in.c[at] = dc * fg;
            }
            apply_backward(P, dP, l.lstm_input, &h_I[i * kNodeDim], dg, &d_hI[i * kNodeDim]);
            apply_backward(P, dP, l.lstm_hidden, &cache.prev.h[i * kLstmDim], dg, &d_in.h[i * kLstmDim]);
        }
    } else {
        kern.axpy(1.0, d_zI.data(), d_hI.data(), d_hI.size());
    }

    constexpr std::size_t src_dim = kSubFeatures + kNodeDim;
    std::vector<double> d_src(m * src_dim, 0.0), d_H(edges * kEdgeDim, 0.0);
    const auto sub_inc = sub_incidence(dec);
    const auto var_inc = var_incidence(dec);
    mp_backward(P, dP, l.to_var, var_inc, f.f_I.data(), kVarFeatures, cache.var_src.data(), src_dim,
                cache.edge_h.data(), cache.to_var, d_hI.data(), nullptr, d_src.data(), d_H.data());
    for (std::size_t j = 0; j < m; ++j)
        kern.axpy(1.0, &d_src[j * src_dim + kSubFeatures], &d_hJ[j * kNodeDim], kNodeDim);
    std::vector<double> d_fI(n * kVarFeatures, 0.0);
    mp_backward(P, dP, l.to_sub, sub_inc, f.f_J.data(), kSubFeatures, f.f_I.data(), kVarFeatures, cache.edge_h.data(),
                cache.to_sub, d_hJ.data(), nullptr, d_fI.data(), d_H.data());

    for (std::size_t e = 0; e < edges; ++e) {
        double* dh = &d_H[e * kEdgeDim];
        const double* h = &cache.edge_h[e * kEdgeDim];
        for (std::size_t k = 0; k < kEdgeDim; ++k)
            if (h[k] <= 0.0) dh[k] = 0.0;
        apply_backward(P, dP, l.edge_encoder, &f.f_E[e * kEdgeFeatures], dh, nullptr);
    }
    return d_in;
}

}  // namespace doge

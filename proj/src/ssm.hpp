#pragma once

// Selective state-space backbone. Each block is
//
//   pre-RMSNorm -> in-proj (expand 2, split into x / gate) ->
//   causal depthwise conv (width 4) -> SiLU -> selective scan ->
//   * SiLU(gate) -> out-proj (zero-init) -> residual
//
// where the scan's input matrix B_t, output matrix C_t (both R^N, shared
// across channels) and per-channel step size dt_t are projected from the
// post-conv activations, and the diagonal state matrix is initialised to
// A[c][n] = -(n+1).
//
// Every layer carries two streams: the history stream over full tokens and a
// query stream whose position t is evaluated as a single branch step from the
// history state at t-1. The query stream is what the head reads, so training
// predictions are computed by exactly the code path a deployed model uses.
// The recurrent step/query implementation below is written as plain loops,
// independent of the fused training op, and doubles as its parity oracle.

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "scan_ops.hpp"
#include "tensor.hpp"

namespace ad {

// Diagonal state-matrix initialiser: channel-independent, entry n gets -(n+1).
template <class Real>
std::vector<Real> hippo_diag_init(int64_t n_state) {
    if (n_state < 1) throw ConfigError("hippo_diag_init: state size must be >= 1");
    std::vector<Real> v(n_state);
    for (int64_t n = 0; n < n_state; ++n) v[n] = -static_cast<Real>(n + 1);
    return v;
}

struct SsmConfig {
    int64_t token_dim = 0;
    int64_t act_dim = 0;
    int64_t embed_dim = 32;
    int64_t d_model = 128;
    int64_t n_layers = 4;
    int64_t state_dim = 16;   // N
    int64_t conv_width = 4;   // K
    int64_t expand = 2;
    int64_t dt_rank = 0;      // 0 -> ceil(d_model / 16)
    uint64_t init_seed = 1;

    int64_t resolved_dt_rank() const {
        return dt_rank > 0 ? dt_rank : (d_model + 15) / 16;
    }
    int64_t d_inner() const { return expand * d_model; }

    void validate() const {
        if (token_dim < 1 || act_dim < 1) throw ConfigError("ssm config: token/act dims must be >= 1");
        if (embed_dim < 1 || d_model < 1 || n_layers < 1 || state_dim < 1 || expand < 1)
            throw ConfigError("ssm config: all sizes must be >= 1");
        if (conv_width < 1) throw ConfigError("ssm config: conv width must be >= 1");
    }
};

template <class Real>
struct MambaBlockT {
    int64_t d_model = 0, d_inner = 0, N = 0, K = 0, dt_rank = 0;

    TensorT<Real> norm_gain;  // (d_model)
    TensorT<Real> w_in;       // (d_model, 2*d_inner)
    TensorT<Real> conv_w;     // (K, d_inner), row j = tap at lag j
    TensorT<Real> conv_b;     // (d_inner)
    TensorT<Real> w_b;        // (d_inner, N)
    TensorT<Real> w_c;        // (d_inner, N)
    TensorT<Real> w_dt_down;  // (d_inner, dt_rank)
    TensorT<Real> w_dt_up;    // (dt_rank, d_inner)
    TensorT<Real> dt_bias;    // (d_inner)
    TensorT<Real> a;          // (d_inner, N)
    TensorT<Real> d_skip;     // (d_inner)
    TensorT<Real> w_out;      // (d_inner, d_model), zero-init

    MambaBlockT() = default;

    MambaBlockT(const SsmConfig& cfg, Rng& rng) {
        d_model = cfg.d_model;
        d_inner = cfg.d_inner();
        N = cfg.state_dim;
        K = cfg.conv_width;
        dt_rank = cfg.resolved_dt_rank();

        auto normal = [&](Shape s, Real stddev) { return TensorT<Real>::randn(s, rng, stddev, true); };
        Real in_std = Real(1) / std::sqrt(static_cast<Real>(d_model));
        norm_gain = TensorT<Real>::full({d_model}, Real(1));
        norm_gain.set_requires_grad(true);
        w_in = normal({d_model, 2 * d_inner}, in_std);
        conv_w = normal({K, d_inner}, Real(1) / std::sqrt(static_cast<Real>(K)));
        conv_b = TensorT<Real>::zeros({d_inner}, true);
        Real xa_std = Real(1) / std::sqrt(static_cast<Real>(d_inner));
        w_b = normal({d_inner, N}, xa_std);
        w_c = normal({d_inner, N}, xa_std);
        w_dt_down = normal({d_inner, dt_rank}, xa_std);
        w_dt_up = normal({dt_rank, d_inner}, Real(1) / std::sqrt(static_cast<Real>(dt_rank)));

        // dt bias: softplus(bias) lands in [1e-3, 1e-1], log-uniform per channel.
        dt_bias = TensorT<Real>::zeros({d_inner}, true);
        for (int64_t c = 0; c < d_inner; ++c) {
            double dt0 = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            dt_bias.data()[c] = static_cast<Real>(std::log(std::expm1(dt0)));
        }

        a = TensorT<Real>::zeros({d_inner, N}, true);
        auto diag = hippo_diag_init<Real>(N);
        for (int64_t c = 0; c < d_inner; ++c)
            std::copy(diag.begin(), diag.end(), a.data().begin() + c * N);
        d_skip = TensorT<Real>::full({d_inner}, Real(1));
        d_skip.set_requires_grad(true);
        w_out = TensorT<Real>::zeros({d_inner, d_model}, true);
    }

    // Causal depthwise conv assembled from shifted views; shifted[j] holds the
    // hist activations delayed by j+1 steps (zero-padded at the start).
    std::vector<TensorT<Real>> shifted_views(const TensorT<Real>& xb) const {
        int64_t L = xb.rows();
        std::vector<TensorT<Real>> out;
        for (int64_t j = 1; j < K; ++j) {
            if (L > j) {
                auto pad = TensorT<Real>::zeros({j, d_inner});
                out.push_back(concat<Real>({pad, slice(xb, 0, 0, L - j)}, 0));
            } else {
                out.push_back(TensorT<Real>::zeros({L, d_inner}));
            }
        }
        return out;
    }

    TensorT<Real> conv_row(int64_t j) const { return slice(conv_w, 0, j, 1); }

    // (dt, B, C) projections from post-conv activations.
    struct ScanInputs {
        TensorT<Real> dt, b, c;
    };
    ScanInputs scan_inputs(const TensorT<Real>& xa) const {
        ScanInputs s;
        s.b = matmul(xa, w_b);
        s.c = matmul(xa, w_c);
        s.dt = softplus(add(matmul(matmul(xa, w_dt_down), w_dt_up), reshape(dt_bias, {1, d_inner})));
        return s;
    }

    // Two-stream forward: returns (hist, query) with residuals applied.
    std::pair<TensorT<Real>, TensorT<Real>> forward_pair(const TensorT<Real>& x_hist,
                                                         const TensorT<Real>& x_query) const {
        TensorT<Real> u = rmsnorm(x_hist, norm_gain);
        TensorT<Real> uq = rmsnorm(x_query, norm_gain);
        TensorT<Real> xz = matmul(u, w_in);
        TensorT<Real> xzq = matmul(uq, w_in);
        TensorT<Real> xb = slice(xz, 1, 0, d_inner);
        TensorT<Real> zb = slice(xz, 1, d_inner, d_inner);
        TensorT<Real> xbq = slice(xzq, 1, 0, d_inner);
        TensorT<Real> zbq = slice(xzq, 1, d_inner, d_inner);

        auto shifted = shifted_views(xb);
        TensorT<Real> bias_row = reshape(conv_b, {1, d_inner});
        TensorT<Real> xc = add(mul(xb, conv_row(0)), bias_row);
        TensorT<Real> xcq = add(mul(xbq, conv_row(0)), bias_row);
        for (int64_t j = 1; j < K; ++j) {
            TensorT<Real> term = mul(shifted[j - 1], conv_row(j));
            xc = add(xc, term);
            xcq = add(xcq, term);  // query sees the same past hist tokens
        }
        TensorT<Real> xa = silu(xc);
        TensorT<Real> xaq = silu(xcq);

        ScanInputs h = scan_inputs(xa);
        ScanInputs q = scan_inputs(xaq);
        TensorT<Real> pair =
            selective_scan_pair(h.dt, h.b, h.c, xa, q.dt, q.b, q.c, xaq, a, d_skip);
        TensorT<Real> y_hist = slice(pair, 1, 0, d_inner);
        TensorT<Real> y_query = slice(pair, 1, d_inner, d_inner);

        TensorT<Real> out_h = matmul(mul(y_hist, silu(zb)), w_out);
        TensorT<Real> out_q = matmul(mul(y_query, silu(zbq)), w_out);
        return {add(x_hist, out_h), add(x_query, out_q)};
    }

    // History-only forward (used where no predictions are needed).
    TensorT<Real> forward_hist(const TensorT<Real>& x_hist) const {
        TensorT<Real> u = rmsnorm(x_hist, norm_gain);
        TensorT<Real> xz = matmul(u, w_in);
        TensorT<Real> xb = slice(xz, 1, 0, d_inner);
        TensorT<Real> zb = slice(xz, 1, d_inner, d_inner);
        auto shifted = shifted_views(xb);
        TensorT<Real> xc = add(mul(xb, conv_row(0)), reshape(conv_b, {1, d_inner}));
        for (int64_t j = 1; j < K; ++j) xc = add(xc, mul(shifted[j - 1], conv_row(j)));
        TensorT<Real> xa = silu(xc);
        ScanInputs s = scan_inputs(xa);
        TensorT<Real> y = selective_scan(s.dt, s.b, s.c, xa, a, d_skip);
        return add(x_hist, matmul(mul(y, silu(zb)), w_out));
    }

    // --- recurrent path (plain loops, no tape) --------------------------------

    struct State {
        std::vector<Real> conv;  // (K-1, d_inner); row j-1 = input at lag j
        std::vector<Real> h;     // (d_inner, N)
    };

    State new_state() const {
        State s;
        s.conv.assign(static_cast<size_t>(std::max<int64_t>(K - 1, 0)) * d_inner, Real(0));
        s.h.assign(static_cast<size_t>(d_inner) * N, Real(0));
        return s;
    }

    // One full step: consumes x (d_model), mutates state, returns block output.
    std::vector<Real> step(State& st, std::span<const Real> x) const {
        std::vector<Real> xb(d_inner), zb(d_inner);
        split_branches(x, xb, zb);
        std::vector<Real> xa = conv_silu(st, xb);

        std::vector<Real> dt(d_inner), bvec(N), cvec(N);
        project_scan(xa, dt, bvec, cvec);
        std::vector<Real> y(d_inner);
        const Real* av = a.data().data();
        const Real* dv = d_skip.data().data();
        for (int64_t c = 0; c < d_inner; ++c) {
            Real* hc = st.h.data() + c * N;
            Real acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                hc[n] = std::exp(dt[c] * av[c * N + n]) * hc[n] + dt[c] * bvec[n] * xa[c];
                acc += cvec[n] * hc[n];
            }
            y[c] = acc + dv[c] * xa[c];
        }

        // push xb into the conv history (row 0 = most recent)
        if (K > 1) {
            std::memmove(st.conv.data() + d_inner, st.conv.data(),
                         sizeof(Real) * d_inner * (K - 2 > 0 ? K - 2 : 0));
            std::copy(xb.begin(), xb.end(), st.conv.begin());
        }
        return gate_out(x, y, zb);
    }

    // Branch evaluation from the current state without mutating it.
    std::vector<Real> query(const State& st, std::span<const Real> x) const {
        std::vector<Real> xb(d_inner), zb(d_inner);
        split_branches(x, xb, zb);
        std::vector<Real> xa = conv_silu(st, xb);
        std::vector<Real> dt(d_inner), bvec(N), cvec(N);
        project_scan(xa, dt, bvec, cvec);
        std::vector<Real> y(d_inner);
        const Real* av = a.data().data();
        const Real* dv = d_skip.data().data();
        for (int64_t c = 0; c < d_inner; ++c) {
            const Real* hc = st.h.data() + c * N;
            Real acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                Real hq = std::exp(dt[c] * av[c * N + n]) * hc[n] + dt[c] * bvec[n] * xa[c];
                acc += cvec[n] * hq;
            }
            y[c] = acc + dv[c] * xa[c];
        }
        return gate_out(x, y, zb);
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, TensorT<Real>>>& out) const {
        out.emplace_back(prefix + ".norm_gain", norm_gain);
        out.emplace_back(prefix + ".w_in", w_in);
        out.emplace_back(prefix + ".conv_w", conv_w);
        out.emplace_back(prefix + ".conv_b", conv_b);
        out.emplace_back(prefix + ".w_b", w_b);
        out.emplace_back(prefix + ".w_c", w_c);
        out.emplace_back(prefix + ".w_dt_down", w_dt_down);
        out.emplace_back(prefix + ".w_dt_up", w_dt_up);
        out.emplace_back(prefix + ".dt_bias", dt_bias);
        out.emplace_back(prefix + ".a", a);
        out.emplace_back(prefix + ".d_skip", d_skip);
        out.emplace_back(prefix + ".w_out", w_out);
    }

private:
    void split_branches(std::span<const Real> x, std::vector<Real>& xb,
                        std::vector<Real>& zb) const {
        // rmsnorm + in-proj on a single vector
        const Real* g = norm_gain.data().data();
        Real ms = 0;
        for (int64_t i = 0; i < d_model; ++i) ms += x[i] * x[i];
        Real inv = Real(1) / std::sqrt(ms / static_cast<Real>(d_model) + Real(1e-5));
        std::vector<Real> u(d_model);
        for (int64_t i = 0; i < d_model; ++i) u[i] = x[i] * inv * g[i];
        const Real* w = w_in.data().data();
        for (int64_t c = 0; c < d_inner; ++c) {
            Real accx = 0, accz = 0;
            for (int64_t i = 0; i < d_model; ++i) {
                accx += u[i] * w[i * 2 * d_inner + c];
                accz += u[i] * w[i * 2 * d_inner + d_inner + c];
            }
            xb[c] = accx;
            zb[c] = accz;
        }
    }

    std::vector<Real> conv_silu(const State& st, const std::vector<Real>& xb) const {
        std::vector<Real> xa(d_inner);
        const Real* w = conv_w.data().data();
        const Real* b = conv_b.data().data();
        for (int64_t c = 0; c < d_inner; ++c) {
            Real acc = w[c] * xb[c] + b[c];
            for (int64_t j = 1; j < K; ++j) acc += w[j * d_inner + c] * st.conv[(j - 1) * d_inner + c];
            xa[c] = acc * detail::sigmoid_scalar(acc);
        }
        return xa;
    }

    void project_scan(const std::vector<Real>& xa, std::vector<Real>& dt, std::vector<Real>& bvec,
                      std::vector<Real>& cvec) const {
        const Real* wb = w_b.data().data();
        const Real* wc = w_c.data().data();
        for (int64_t n = 0; n < N; ++n) {
            Real ab = 0, ac = 0;
            for (int64_t c = 0; c < d_inner; ++c) {
                ab += xa[c] * wb[c * N + n];
                ac += xa[c] * wc[c * N + n];
            }
            bvec[n] = ab;
            cvec[n] = ac;
        }
        std::vector<Real> low(dt_rank, Real(0));
        const Real* wd = w_dt_down.data().data();
        for (int64_t r = 0; r < dt_rank; ++r) {
            Real acc = 0;
            for (int64_t c = 0; c < d_inner; ++c) acc += xa[c] * wd[c * dt_rank + r];
            low[r] = acc;
        }
        const Real* wu = w_dt_up.data().data();
        const Real* bias = dt_bias.data().data();
        for (int64_t c = 0; c < d_inner; ++c) {
            Real acc = bias[c];
            for (int64_t r = 0; r < dt_rank; ++r) acc += low[r] * wu[r * d_inner + c];
            dt[c] = detail::softplus_scalar(acc);
        }
    }

    std::vector<Real> gate_out(std::span<const Real> x, const std::vector<Real>& y,
                               const std::vector<Real>& zb) const {
        std::vector<Real> out(d_model);
        const Real* w = w_out.data().data();
        std::vector<Real> gated(d_inner);
        for (int64_t c = 0; c < d_inner; ++c)
            gated[c] = y[c] * (zb[c] * detail::sigmoid_scalar(zb[c]));
        for (int64_t i = 0; i < d_model; ++i) {
            Real acc = x[i];
            for (int64_t c = 0; c < d_inner; ++c) acc += gated[c] * w[c * d_model + i];
            out[i] = acc;
        }
        return out;
    }
};

template <class Real>
class SsmModelT {
public:
    using Config = SsmConfig;

    explicit SsmModelT(const SsmConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg.init_seed, seed_domain::model_init);
        Real e_std = Real(1) / std::sqrt(static_cast<Real>(cfg.token_dim));
        w_embed_ = TensorT<Real>::randn({cfg.token_dim, cfg.embed_dim}, rng, e_std, true);
        b_embed_ = TensorT<Real>::zeros({cfg.embed_dim}, true);
        Real p_std = Real(1) / std::sqrt(static_cast<Real>(cfg.embed_dim));
        w_proj_ = TensorT<Real>::randn({cfg.embed_dim, cfg.d_model}, rng, p_std, true);
        b_proj_ = TensorT<Real>::zeros({cfg.d_model}, true);
        blocks_.reserve(cfg.n_layers);
        for (int64_t i = 0; i < cfg.n_layers; ++i) blocks_.emplace_back(cfg_, rng);
        final_norm_ = TensorT<Real>::full({cfg.d_model}, Real(1));
        final_norm_.set_requires_grad(true);
        w_head_ = TensorT<Real>::zeros({cfg.d_model, cfg.act_dim}, true);
        b_head_ = TensorT<Real>::zeros({cfg.act_dim}, true);
    }

    const SsmConfig& config() const { return cfg_; }

    // tokens/queries: (L, token_dim). Returns per-position predictions of the
    // action inside each token, (L, act_dim), computed on the query stream.
    TensorT<Real> forward(const TensorT<Real>& tokens, const TensorT<Real>& queries) const {
        if (tokens.rank() != 2 || tokens.cols() != cfg_.token_dim)
            throw ConfigError("ssm forward: tokens must be (L, " + std::to_string(cfg_.token_dim) +
                              "), got " + shape_str(tokens.shape()));
        if (queries.shape() != tokens.shape())
            throw ConfigError("ssm forward: query matrix must match token matrix shape");
        TensorT<Real> h = embed(tokens);
        TensorT<Real> q = embed(queries);
        for (const auto& blk : blocks_) {
            auto [nh, nq] = blk.forward_pair(h, q);
            h = nh;
            q = nq;
        }
        TensorT<Real> yq = rmsnorm(q, final_norm_);
        return add(matmul(yq, w_head_), reshape(b_head_, {1, cfg_.act_dim}));
    }

    struct State {
        std::vector<typename MambaBlockT<Real>::State> blocks;
    };

    State new_state() const {
        State s;
        s.blocks.reserve(blocks_.size());
        for (const auto& blk : blocks_) s.blocks.push_back(blk.new_state());
        return s;
    }

    // Advances the recurrent state by one full token.
    void consume(State& st, std::span<const Real> token) const {
        std::vector<Real> x = embed_vec(token);
        for (size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i].step(st.blocks[i], x);
    }

    // Predicts the action for a query token from the current state (const).
    std::vector<Real> predict(const State& st, std::span<const Real> query) const {
        std::vector<Real> x = embed_vec(query);
        for (size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i].query(st.blocks[i], x);
        // final rmsnorm + head
        const Real* g = final_norm_.data().data();
        Real ms = 0;
        for (int64_t i = 0; i < cfg_.d_model; ++i) ms += x[i] * x[i];
        Real inv = Real(1) / std::sqrt(ms / static_cast<Real>(cfg_.d_model) + Real(1e-5));
        std::vector<Real> out(cfg_.act_dim);
        const Real* w = w_head_.data().data();
        const Real* b = b_head_.data().data();
        for (int64_t o = 0; o < cfg_.act_dim; ++o) {
            Real acc = b[o];
            for (int64_t i = 0; i < cfg_.d_model; ++i) acc += x[i] * inv * g[i] * w[i * cfg_.act_dim + o];
            out[o] = acc;
        }
        return out;
    }

    std::vector<std::pair<std::string, TensorT<Real>>> named_params() const {
        std::vector<std::pair<std::string, TensorT<Real>>> out;
        out.emplace_back("embed.w", w_embed_);
        out.emplace_back("embed.b", b_embed_);
        out.emplace_back("proj.w", w_proj_);
        out.emplace_back("proj.b", b_proj_);
        for (size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_params("block" + std::to_string(i), out);
        out.emplace_back("final_norm", final_norm_);
        out.emplace_back("head.w", w_head_);
        out.emplace_back("head.b", b_head_);
        return out;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : named_params()) n += t.numel();
        return n;
    }

private:
    TensorT<Real> embed(const TensorT<Real>& tokens) const {
        TensorT<Real> e = add(matmul(tokens, w_embed_), reshape(b_embed_, {1, cfg_.embed_dim}));
        return add(matmul(e, w_proj_), reshape(b_proj_, {1, cfg_.d_model}));
    }

    std::vector<Real> embed_vec(std::span<const Real> token) const {
        if (static_cast<int64_t>(token.size()) != cfg_.token_dim)
            throw ConfigError("ssm: token width " + std::to_string(token.size()) +
                              " does not match configured " + std::to_string(cfg_.token_dim));
        std::vector<Real> e(cfg_.embed_dim);
        const Real* we = w_embed_.data().data();
        const Real* be = b_embed_.data().data();
        for (int64_t o = 0; o < cfg_.embed_dim; ++o) {
            Real acc = be[o];
            for (int64_t i = 0; i < cfg_.token_dim; ++i) acc += token[i] * we[i * cfg_.embed_dim + o];
            e[o] = acc;
        }
        std::vector<Real> m(cfg_.d_model);
        const Real* wp = w_proj_.data().data();
        const Real* bp = b_proj_.data().data();
        for (int64_t o = 0; o < cfg_.d_model; ++o) {
            Real acc = bp[o];
            for (int64_t i = 0; i < cfg_.embed_dim; ++i) acc += e[i] * wp[i * cfg_.d_model + o];
            m[o] = acc;
        }
        return m;
    }

    SsmConfig cfg_;
    TensorT<Real> w_embed_, b_embed_, w_proj_, b_proj_;
    std::vector<MambaBlockT<Real>> blocks_;
    TensorT<Real> final_norm_, w_head_, b_head_;
};

using SsmModel = SsmModelT<float>;

}  // namespace ad

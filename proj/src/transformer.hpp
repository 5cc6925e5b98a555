#pragma once

// Causal-transformer baseline: pre-norm blocks with multi-head self-attention
// (additive -1e9 mask above the diagonal), GELU feed-forward, sinusoidal
// absolute positional encodings, and the same two-stream layout as the state-
// space backbone: the query stream at position t attends over history
// positions strictly below t plus its own key/value, so the prediction at t is
// computed exactly as a deployed model would compute it before the full token
// arrives. Inference has no recurrent state; each step re-runs the model over
// the current window (recompute-per-step).

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace ad {

struct TransformerConfig {
    int64_t token_dim = 0;
    int64_t act_dim = 0;
    int64_t embed_dim = 32;
    int64_t d_model = 128;
    int64_t n_layers = 4;
    int64_t n_heads = 4;
    int64_t ff_dim = 512;
    int64_t max_context = 2304;
    uint64_t init_seed = 1;

    void validate() const {
        if (token_dim < 1 || act_dim < 1)
            throw ConfigError("transformer config: token/act dims must be >= 1");
        if (embed_dim < 1 || d_model < 1 || n_layers < 1 || ff_dim < 1 || max_context < 1)
            throw ConfigError("transformer config: all sizes must be >= 1");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw ConfigError("transformer config: heads must divide d_model");
    }
};

template <class Real>
struct AttentionBlockT {
    int64_t d_model = 0, n_heads = 0, d_head = 0, ff_dim = 0;

    TensorT<Real> norm1, norm2;          // (d_model)
    TensorT<Real> w_q, w_k, w_v, w_o;    // (d_model, d_model)
    TensorT<Real> b_q, b_k, b_v, b_o;    // (d_model)
    TensorT<Real> w_f1, b_f1;            // (d_model, ff_dim), (ff_dim)
    TensorT<Real> w_f2, b_f2;            // (ff_dim, d_model), (d_model)

    AttentionBlockT() = default;

    AttentionBlockT(const TransformerConfig& cfg, Rng& rng) {
        d_model = cfg.d_model;
        n_heads = cfg.n_heads;
        d_head = d_model / n_heads;
        ff_dim = cfg.ff_dim;
        Real std_m = Real(1) / std::sqrt(static_cast<Real>(d_model));
        Real std_f = Real(1) / std::sqrt(static_cast<Real>(ff_dim));
        auto normal = [&](Shape s, Real sd) { return TensorT<Real>::randn(s, rng, sd, true); };
        norm1 = TensorT<Real>::full({d_model}, Real(1));
        norm1.set_requires_grad(true);
        norm2 = TensorT<Real>::full({d_model}, Real(1));
        norm2.set_requires_grad(true);
        w_q = normal({d_model, d_model}, std_m);
        w_k = normal({d_model, d_model}, std_m);
        w_v = normal({d_model, d_model}, std_m);
        w_o = normal({d_model, d_model}, std_m);
        b_q = TensorT<Real>::zeros({d_model}, true);
        b_k = TensorT<Real>::zeros({d_model}, true);
        b_v = TensorT<Real>::zeros({d_model}, true);
        b_o = TensorT<Real>::zeros({d_model}, true);
        w_f1 = normal({d_model, ff_dim}, std_m);
        b_f1 = TensorT<Real>::zeros({ff_dim}, true);
        w_f2 = normal({ff_dim, d_model}, std_f);
        b_f2 = TensorT<Real>::zeros({d_model}, true);
    }

    // Additive causal masks as constant leaves. hist: j <= t open;
    // query: j < t open (the query's own column enters via its self score).
    static TensorT<Real> causal_mask(int64_t L, bool strict) {
        TensorT<Real> m = TensorT<Real>::zeros({L, L});
        auto mv = m.data();
        for (int64_t t = 0; t < L; ++t)
            for (int64_t j = 0; j < L; ++j)
                if (strict ? j >= t : j > t) mv[t * L + j] = Real(-1e9);
        return m;
    }

    std::pair<TensorT<Real>, TensorT<Real>> forward_pair(const TensorT<Real>& x_hist,
                                                         const TensorT<Real>& x_query) const {
        int64_t L = x_hist.rows();
        Real scale = Real(1) / std::sqrt(static_cast<Real>(d_head));

        TensorT<Real> u = rmsnorm(x_hist, norm1);
        TensorT<Real> uq = rmsnorm(x_query, norm1);
        TensorT<Real> q = add(matmul(u, w_q), reshape(b_q, {1, d_model}));
        TensorT<Real> k = add(matmul(u, w_k), reshape(b_k, {1, d_model}));
        TensorT<Real> v = add(matmul(u, w_v), reshape(b_v, {1, d_model}));
        TensorT<Real> qq = add(matmul(uq, w_q), reshape(b_q, {1, d_model}));
        TensorT<Real> kq = add(matmul(uq, w_k), reshape(b_k, {1, d_model}));
        TensorT<Real> vq = add(matmul(uq, w_v), reshape(b_v, {1, d_model}));

        TensorT<Real> mask = causal_mask(L, false);
        TensorT<Real> mask_strict = causal_mask(L, true);

        std::vector<TensorT<Real>> ctx_heads, ctxq_heads;
        ctx_heads.reserve(n_heads);
        ctxq_heads.reserve(n_heads);
        for (int64_t h = 0; h < n_heads; ++h) {
            TensorT<Real> qh = slice(q, 1, h * d_head, d_head);
            TensorT<Real> kh = slice(k, 1, h * d_head, d_head);
            TensorT<Real> vh = slice(v, 1, h * d_head, d_head);

            TensorT<Real> scores = affine(matmul(qh, transpose_last2(kh)), scale, Real(0));
            TensorT<Real> wgt = softmax_lastdim(add(scores, mask));
            ctx_heads.push_back(matmul(wgt, vh));

            TensorT<Real> qqh = slice(qq, 1, h * d_head, d_head);
            TensorT<Real> kqh = slice(kq, 1, h * d_head, d_head);
            TensorT<Real> vqh = slice(vq, 1, h * d_head, d_head);

            TensorT<Real> qscores = affine(matmul(qqh, transpose_last2(kh)), scale, Real(0));
            TensorT<Real> self_score =
                affine(sum_col_groups(mul(qqh, kqh), d_head), scale, Real(0));  // (L, 1)
            TensorT<Real> qwgt = softmax_lastdim(
                concat<Real>({add(qscores, mask_strict), self_score}, 1));  // (L, L+1)
            TensorT<Real> w_hist = slice(qwgt, 1, 0, L);
            TensorT<Real> w_self = slice(qwgt, 1, L, 1);
            ctxq_heads.push_back(
                add(matmul(w_hist, vh), mul(vqh, repeat_cols(w_self, d_head))));
        }
        TensorT<Real> ctx = concat<Real>(ctx_heads, 1);
        TensorT<Real> ctxq = concat<Real>(ctxq_heads, 1);
        TensorT<Real> o_b = reshape(b_o, {1, d_model});
        TensorT<Real> h1 = add(x_hist, add(matmul(ctx, w_o), o_b));
        TensorT<Real> q1 = add(x_query, add(matmul(ctxq, w_o), o_b));

        auto ff = [&](const TensorT<Real>& x) {
            TensorT<Real> n = rmsnorm(x, norm2);
            TensorT<Real> f = gelu(add(matmul(n, w_f1), reshape(b_f1, {1, ff_dim})));
            return add(x, add(matmul(f, w_f2), reshape(b_f2, {1, d_model})));
        };
        return {ff(h1), ff(q1)};
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, TensorT<Real>>>& out) const {
        out.emplace_back(prefix + ".norm1", norm1);
        out.emplace_back(prefix + ".w_q", w_q);
        out.emplace_back(prefix + ".b_q", b_q);
        out.emplace_back(prefix + ".w_k", w_k);
        out.emplace_back(prefix + ".b_k", b_k);
        out.emplace_back(prefix + ".w_v", w_v);
        out.emplace_back(prefix + ".b_v", b_v);
        out.emplace_back(prefix + ".w_o", w_o);
        out.emplace_back(prefix + ".b_o", b_o);
        out.emplace_back(prefix + ".norm2", norm2);
        out.emplace_back(prefix + ".w_f1", w_f1);
        out.emplace_back(prefix + ".b_f1", b_f1);
        out.emplace_back(prefix + ".w_f2", w_f2);
        out.emplace_back(prefix + ".b_f2", b_f2);
    }
};

template <class Real>
class TransformerModelT {
public:
    using Config = TransformerConfig;

    explicit TransformerModelT(const TransformerConfig& cfg) : cfg_(cfg) {
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

    const TransformerConfig& config() const { return cfg_; }

    // Sinusoidal absolute positions, added to both streams after embedding.
    TensorT<Real> positional_encoding(int64_t L) const {
        TensorT<Real> pe = TensorT<Real>::zeros({L, cfg_.d_model});
        auto pv = pe.data();
        for (int64_t t = 0; t < L; ++t)
            for (int64_t i = 0; i < cfg_.d_model; i += 2) {
                double rate = std::pow(10000.0, -static_cast<double>(i) / cfg_.d_model);
                pv[t * cfg_.d_model + i] = static_cast<Real>(std::sin(t * rate));
                if (i + 1 < cfg_.d_model)
                    pv[t * cfg_.d_model + i + 1] = static_cast<Real>(std::cos(t * rate));
            }
        return pe;
    }

    TensorT<Real> forward(const TensorT<Real>& tokens, const TensorT<Real>& queries) const {
        if (tokens.rank() != 2 || tokens.cols() != cfg_.token_dim)
            throw ConfigError("transformer forward: tokens must be (L, " +
                              std::to_string(cfg_.token_dim) + "), got " +
                              shape_str(tokens.shape()));
        if (queries.shape() != tokens.shape())
            throw ConfigError("transformer forward: query matrix must match token matrix shape");
        int64_t L = tokens.rows();
        if (L > cfg_.max_context)
            throw ConfigError("transformer forward: length " + std::to_string(L) +
                              " exceeds max context " + std::to_string(cfg_.max_context));
        TensorT<Real> pe = positional_encoding(L);
        TensorT<Real> h = add(embed(tokens), pe);
        TensorT<Real> q = add(embed(queries), pe);
        for (const auto& blk : blocks_) {
            auto [nh, nq] = blk.forward_pair(h, q);
            h = nh;
            q = nq;
        }
        TensorT<Real> yq = rmsnorm(q, final_norm_);
        return add(matmul(yq, w_head_), reshape(b_head_, {1, cfg_.act_dim}));
    }

    // Stateless inference: the "state" is just the token window; prediction
    // re-runs the model over it (plus the query appended) every step.
    struct State {
        std::vector<std::vector<Real>> tokens;
    };

    State new_state() const { return {}; }

    void consume(State& st, std::span<const Real> token) const {
        st.tokens.emplace_back(token.begin(), token.end());
    }

    std::vector<Real> predict(const State& st, std::span<const Real> query) const {
        NoGrad guard;
        int64_t L = static_cast<int64_t>(st.tokens.size()) + 1;
        TensorT<Real> tokens = TensorT<Real>::zeros({L, cfg_.token_dim});
        TensorT<Real> queries = TensorT<Real>::zeros({L, cfg_.token_dim});
        auto tv = tokens.data();
        for (int64_t t = 0; t + 1 < L; ++t)
            std::copy(st.tokens[t].begin(), st.tokens[t].end(), tv.begin() + t * cfg_.token_dim);
        // the final history row is never visible to the query at that position;
        // fill it with the query itself
        std::copy(query.begin(), query.end(), tv.begin() + (L - 1) * cfg_.token_dim);
        std::copy(query.begin(), query.end(),
                  queries.data().begin() + (L - 1) * cfg_.token_dim);
        TensorT<Real> out = forward(tokens, queries);
        auto ov = out.data();
        return std::vector<Real>(ov.begin() + (L - 1) * cfg_.act_dim, ov.end());
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

    TransformerConfig cfg_;
    TensorT<Real> w_embed_, b_embed_, w_proj_, b_proj_;
    std::vector<AttentionBlockT<Real>> blocks_;
    TensorT<Real> final_norm_, w_head_, b_head_;
};

using TransformerModel = TransformerModelT<float>;

// Finds the feed-forward width that brings the transformer's parameter count
// closest to `target_params`, holding everything else in `base` fixed.
template <class Real = float>
TransformerConfig paired_transformer_config(TransformerConfig base, int64_t target_params) {
    auto count = [&](int64_t ff) {
        base.ff_dim = ff;
        return TransformerModelT<Real>(base).param_count();
    };
    int64_t lo = 1, hi = 8192;
    while (lo < hi) {
        int64_t mid = (lo + hi) / 2;
        if (count(mid) < target_params)
            lo = mid + 1;
        else
            hi = mid;
    }
    // lo is the smallest ff with count >= target; check the neighbour below
    int64_t best = lo;
    if (lo > 1 && std::llabs(count(lo - 1) - target_params) <
                      std::llabs(count(lo) - target_params))
        best = lo - 1;
    base.ff_dim = best;
    return base;
}

}  // namespace ad

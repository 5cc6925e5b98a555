#include <doctest.h>

#include <cmath>
#include <vector>

#include "grad_check.hpp"
#include "ssm.hpp"
#include "transformer.hpp"

using ad::TensorT;
using ad::TransformerConfig;
using T64 = TensorT<double>;
using T32 = TensorT<float>;

namespace {

TransformerConfig tiny_cfg(uint64_t seed) {
    TransformerConfig cfg;
    cfg.token_dim = 11;
    cfg.act_dim = 2;
    cfg.embed_dim = 8;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.ff_dim = 16;
    cfg.max_context = 600;
    cfg.init_seed = seed;
    return cfg;
}

template <class Real>
void randomise_head(ad::TransformerModelT<Real>& m, uint64_t seed) {
    ad::Rng rng(seed);
    for (auto& [name, t] : m.named_params())
        if (name == "head.w")
            for (Real& v : TensorT<Real>(t).data()) v = static_cast<Real>(rng.normal() * 0.2);
}

}  // namespace

TEST_CASE("positional encoding rows differ and interleave sin/cos") {
    ad::TransformerModelT<float> model(tiny_cfg(80));
    auto pe = model.positional_encoding(16);
    REQUIRE(pe.shape() == ad::Shape{16, 8});
    // position 0: sin(0)=0, cos(0)=1 interleaved
    for (int64_t i = 0; i < 8; i += 2) {
        CHECK(pe.data()[i] == 0.0f);
        CHECK(pe.data()[i + 1] == 1.0f);
    }
    CHECK(pe.data()[1 * 8 + 0] == doctest::Approx(std::sin(1.0)).epsilon(1e-6));
}

TEST_CASE("token order changes predictions (position information present)") {
    TransformerConfig cfg = tiny_cfg(81);
    ad::TransformerModelT<float> model(cfg);
    randomise_head(model, 82);

    int64_t L = 10;
    ad::Rng rng(83);
    T32 tokens = T32::randn({L, cfg.token_dim}, rng, 0.7f);
    T32 queries = T32::randn({L, cfg.token_dim}, rng, 0.7f);

    T32 swapped = T32::from_vector(tokens.shape(), {tokens.data().begin(), tokens.data().end()});
    for (int64_t i = 0; i < cfg.token_dim; ++i)
        std::swap(swapped.data()[2 * cfg.token_dim + i], swapped.data()[5 * cfg.token_dim + i]);

    ad::NoGrad guard;
    T32 base = model.forward(tokens, queries);
    T32 perm = model.forward(swapped, queries);
    float diff = 0.0f;
    for (int64_t o = 0; o < cfg.act_dim; ++o)
        diff = std::max(diff, std::abs(perm.data()[9 * cfg.act_dim + o] -
                                       base.data()[9 * cfg.act_dim + o]));
    CHECK(diff > 1e-7f);
}

TEST_CASE("attention is causal and ignores the current full token (bit-identical)") {
    TransformerConfig cfg = tiny_cfg(91);
    ad::TransformerModelT<float> model(cfg);
    randomise_head(model, 92);

    int64_t L = 24, j = 10;
    ad::Rng rng(93);
    T32 tokens = T32::randn({L, cfg.token_dim}, rng, 0.7f);
    T32 queries = T32::randn({L, cfg.token_dim}, rng, 0.7f);

    ad::NoGrad guard;
    T32 base = model.forward(tokens, queries);

    T32 tok2 = T32::from_vector(tokens.shape(), {tokens.data().begin(), tokens.data().end()});
    for (int64_t i = 0; i < cfg.token_dim; ++i) tok2.data()[j * cfg.token_dim + i] += 3.5f;
    T32 pert = model.forward(tok2, queries);

    for (int64_t t = 0; t <= j; ++t)
        for (int64_t o = 0; o < cfg.act_dim; ++o)
            CHECK(pert.data()[t * cfg.act_dim + o] == base.data()[t * cfg.act_dim + o]);

    bool changed = false;
    for (int64_t t = j + 1; t < L; ++t)
        for (int64_t o = 0; o < cfg.act_dim; ++o)
            changed = changed || pert.data()[t * cfg.act_dim + o] != base.data()[t * cfg.act_dim + o];
    CHECK(changed);
}

TEST_CASE("training forward equals incremental inference") {
    TransformerConfig cfg = tiny_cfg(101);
    ad::TransformerModelT<float> model(cfg);
    randomise_head(model, 102);

    int64_t L = 128;
    ad::Rng rng(103);
    T32 tokens = T32::randn({L, cfg.token_dim}, rng, 0.7f);
    T32 queries = T32::randn({L, cfg.token_dim}, rng, 0.7f);

    ad::NoGrad guard;
    T32 train_out = model.forward(tokens, queries);

    auto st = model.new_state();
    float worst = 0.0f;
    for (int64_t t = 0; t < L; ++t) {
        auto pred = model.predict(
            st, std::span<const float>(queries.data().data() + t * cfg.token_dim, cfg.token_dim));
        for (int64_t o = 0; o < cfg.act_dim; ++o)
            worst = std::max(worst, std::abs(pred[o] - train_out.data()[t * cfg.act_dim + o]));
        model.consume(st, std::span<const float>(tokens.data().data() + t * cfg.token_dim,
                                                 cfg.token_dim));
    }
    CHECK(worst <= 1e-5f);
}

TEST_CASE("finite differences through one attention block (both streams)") {
    TransformerConfig cfg = tiny_cfg(111);
    ad::Rng prng(112);
    ad::AttentionBlockT<double> blk(cfg, prng);

    int64_t L = 10;
    ad::Rng rng(113);
    T64 xh = T64::randn({L, cfg.d_model}, rng, 0.6, true);
    T64 xq = T64::randn({L, cfg.d_model}, rng, 0.6, true);
    T64 p1 = T64::randn({L, cfg.d_model}, rng, 1.0);
    T64 p2 = T64::randn({L, cfg.d_model}, rng, 1.0);

    std::vector<T64> params{blk.norm1, blk.norm2, blk.w_q, blk.b_q, blk.w_k, blk.b_k,
                            blk.w_v,   blk.b_v,   blk.w_o, blk.b_o, blk.w_f1, blk.b_f1,
                            blk.w_f2,  blk.b_f2,  xh,      xq};
    auto make_loss = [&] {
        auto [h, q] = blk.forward_pair(xh, xq);
        return ad::add(ad::sum(ad::mul(h, p1)), ad::sum(ad::mul(q, p2)));
    };
    CHECK(ad::grad_check(make_loss, params).max_rel_err < 1e-5);
}

TEST_CASE("finite differences through the full tiny model") {
    TransformerConfig cfg = tiny_cfg(121);
    ad::TransformerModelT<double> model(cfg);
    randomise_head(model, 122);

    int64_t L = 6;
    ad::Rng rng(123);
    T64 tokens = T64::randn({L, cfg.token_dim}, rng, 0.6);
    T64 queries = T64::randn({L, cfg.token_dim}, rng, 0.6);
    T64 probe = T64::randn({L, cfg.act_dim}, rng, 1.0);

    std::vector<T64> params;
    for (auto& [name, t] : model.named_params()) params.push_back(t);
    auto make_loss = [&] { return ad::sum(ad::mul(model.forward(tokens, queries), probe)); };
    CHECK(ad::grad_check(make_loss, params).max_rel_err < 1e-5);
}

TEST_CASE("context length guard") {
    TransformerConfig cfg = tiny_cfg(131);
    cfg.max_context = 8;
    ad::TransformerModelT<float> model(cfg);
    ad::Rng rng(132);
    T32 tokens = T32::randn({9, cfg.token_dim}, rng, 0.7f);
    ad::NoGrad guard;
    CHECK_THROWS_AS((void)model.forward(tokens, tokens), ad::ConfigError);
}

TEST_CASE("width search pairs parameter counts within 10 percent") {
    ad::SsmConfig ref;
    ref.token_dim = 11;
    ref.act_dim = 2;
    ref.embed_dim = 32;
    ref.d_model = 64;
    ref.n_layers = 2;
    ref.state_dim = 16;
    ref.init_seed = 1;
    ad::SsmModelT<float> ssm(ref);

    TransformerConfig base;
    base.token_dim = 11;
    base.act_dim = 2;
    base.embed_dim = 32;
    base.d_model = 64;
    base.n_layers = 2;
    base.n_heads = 4;
    base.max_context = 2304;
    base.init_seed = 1;
    TransformerConfig paired = ad::paired_transformer_config(base, ssm.param_count());
    ad::TransformerModelT<float> tf(paired);

    double ratio = static_cast<double>(tf.param_count()) / static_cast<double>(ssm.param_count());
    CHECK(ratio >= 1.0 / 1.1);
    CHECK(ratio <= 1.1);
}

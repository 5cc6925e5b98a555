#include <doctest.h>

#include <cmath>
#include <vector>

#include "adam.hpp"
#include "grad_check.hpp"
#include "scan_ops.hpp"
#include "tensor.hpp"

using ad::TensorT;
using T64 = TensorT<double>;
using T32 = TensorT<float>;

namespace {

// Fixed random probe so scalarising y -> sum(y * probe) exercises every output
// coordinate with a distinct weight (a plain mean would hide index errors).
T64 probe_for(const ad::Shape& shape, uint64_t seed) {
    ad::Rng rng(seed);
    return T64::randn(shape, rng, 1.0);
}

double check_unary(const std::function<T64(const T64&)>& op, double lo, double hi,
                   uint64_t seed = 11) {
    ad::Rng rng(seed);
    T64 x = T64::uniform({4, 5}, rng, lo, hi, true);
    T64 probe = probe_for({4, 5}, seed + 1);
    auto make_loss = [&] { return ad::sum(ad::mul(op(x), probe)); };
    return ad::grad_check(make_loss, {x}).max_rel_err;
}

}  // namespace

TEST_CASE("matmul forward shape and values") {
    T32 a = T32::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    T32 b = T32::from_vector({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
    T32 y = ad::matmul(a, b);
    CHECK(y.shape() == ad::Shape{2, 4});
    CHECK(y.data()[0] == doctest::Approx(1));
    CHECK(y.data()[1] == doctest::Approx(2));
    CHECK(y.data()[2] == doctest::Approx(3));
    CHECK(y.data()[3] == doctest::Approx(0));
    CHECK(y.data()[4] == doctest::Approx(4));
    CHECK_THROWS_AS(ad::matmul(a, T32::zeros({2, 2})), ad::ConfigError);
}

TEST_CASE("grad_check reference: f(x) = x*x at x = 3") {
    T64 x = T64::from_vector({1}, {3.0}, true);
    auto make_loss = [&] { return ad::sum(ad::mul(x, x)); };
    auto res = ad::grad_check(make_loss, {x});
    CHECK(res.max_rel_err < 1e-6);
    T64 loss = make_loss();
    ad::backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("finite differences: matmul") {
    ad::Rng rng(3);
    T64 a = T64::randn({3, 4}, rng, 0.7, true);
    T64 b = T64::randn({4, 2}, rng, 0.7, true);
    T64 probe = probe_for({3, 2}, 5);
    auto make_loss = [&] { return ad::sum(ad::mul(ad::matmul(a, b), probe)); };
    CHECK(ad::grad_check(make_loss, {a, b}).max_rel_err < 1e-6);
}

TEST_CASE("finite differences: elementwise binaries with broadcasting") {
    ad::Rng rng(4);
    T64 a = T64::randn({3, 4}, rng, 0.8, true);
    T64 full = T64::randn({3, 4}, rng, 0.8, true);
    T64 row = T64::randn({4}, rng, 0.8, true);
    T64 scalar = T64::from_vector({1}, {0.7}, true);
    T64 probe = probe_for({3, 4}, 6);

    auto check = [&](auto op, const T64& rhs) {
        auto make_loss = [&] { return ad::sum(ad::mul(op(a, rhs), probe)); };
        return ad::grad_check(make_loss, {a, rhs}).max_rel_err;
    };
    auto fadd = [](const T64& x, const T64& y) { return ad::add(x, y); };
    auto fsub = [](const T64& x, const T64& y) { return ad::sub(x, y); };
    auto fmul = [](const T64& x, const T64& y) { return ad::mul(x, y); };

    CHECK(check(fadd, full) < 1e-6);
    CHECK(check(fadd, row) < 1e-6);
    CHECK(check(fadd, scalar) < 1e-6);
    CHECK(check(fsub, full) < 1e-6);
    CHECK(check(fsub, row) < 1e-6);
    CHECK(check(fsub, scalar) < 1e-6);
    CHECK(check(fmul, full) < 1e-6);
    CHECK(check(fmul, row) < 1e-6);
    CHECK(check(fmul, scalar) < 1e-6);

    // small-minus-big orientation
    auto make_loss = [&] { return ad::sum(ad::mul(ad::sub(row, a), probe)); };
    CHECK(ad::grad_check(make_loss, {row, a}).max_rel_err < 1e-6);
    CHECK_THROWS_AS(ad::add(a, T64::zeros({2, 2})), ad::ConfigError);
}

TEST_CASE("finite differences: unary ops") {
    CHECK(check_unary([](const T64& x) { return ad::exp(x); }, -1.0, 1.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::log(x); }, 0.2, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::softplus(x); }, -2.0, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::silu(x); }, -2.0, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::tanh(x); }, -2.0, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::sigmoid(x); }, -2.0, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::gelu(x); }, -2.0, 2.0) < 1e-6);
    CHECK(check_unary([](const T64& x) { return ad::affine(x, 1.7, -0.3); }, -2.0, 2.0) < 1e-6);
}

TEST_CASE("softplus saturation is stable") {
    T64 x = T64::from_vector({1, 3}, {-700.0, 0.0, 700.0});
    T64 y = ad::softplus(x);
    CHECK(y.data()[0] == doctest::Approx(0.0));
    CHECK(y.data()[1] == doctest::Approx(std::log(2.0)));
    CHECK(y.data()[2] == doctest::Approx(700.0));
}

TEST_CASE("finite differences: softmax, reductions, rmsnorm") {
    ad::Rng rng(9);
    T64 x = T64::randn({3, 5}, rng, 1.0, true);
    T64 gain = T64::uniform({5}, rng, 0.5, 1.5, true);
    T64 probe = probe_for({3, 5}, 10);

    auto sm_loss = [&] { return ad::sum(ad::mul(ad::softmax_lastdim(x), probe)); };
    CHECK(ad::grad_check(sm_loss, {x}).max_rel_err < 1e-6);

    auto sum_loss = [&] { return ad::sum(x); };
    CHECK(ad::grad_check(sum_loss, {x}).max_rel_err < 1e-6);

    auto mean_loss = [&] { return ad::mean(ad::mul(x, x)); };
    CHECK(ad::grad_check(mean_loss, {x}).max_rel_err < 1e-6);

    auto rn_loss = [&] { return ad::sum(ad::mul(ad::rmsnorm(x, gain), probe)); };
    CHECK(ad::grad_check(rn_loss, {x, gain}).max_rel_err < 1e-6);
}

TEST_CASE("softmax rows sum to one") {
    ad::Rng rng(12);
    T32 x = T32::randn({4, 7}, rng, 3.0f);
    T32 y = ad::softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        float s = 0;
        for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
    }
}

TEST_CASE("finite differences: shape ops") {
    ad::Rng rng(13);
    T64 x = T64::randn({4, 6}, rng, 0.9, true);
    T64 y2 = T64::randn({2, 6}, rng, 0.9, true);

    auto slice_loss = [&] {
        auto s = ad::slice(x, 0, 1, 2);
        return ad::sum(ad::mul(s, probe_for({2, 6}, 14)));
    };
    CHECK(ad::grad_check(slice_loss, {x}).max_rel_err < 1e-6);

    auto slice1_loss = [&] {
        auto s = ad::slice(x, 1, 2, 3);
        return ad::sum(ad::mul(s, probe_for({4, 3}, 15)));
    };
    CHECK(ad::grad_check(slice1_loss, {x}).max_rel_err < 1e-6);

    auto cat_loss = [&] {
        auto ccat = ad::concat<double>({x, y2}, 0);
        return ad::sum(ad::mul(ccat, probe_for({6, 6}, 16)));
    };
    CHECK(ad::grad_check(cat_loss, {x, y2}).max_rel_err < 1e-6);

    auto cat1_loss = [&] {
        auto ccat = ad::concat<double>({x, x}, 1);
        return ad::sum(ad::mul(ccat, probe_for({4, 12}, 17)));
    };
    CHECK(ad::grad_check(cat1_loss, {x}).max_rel_err < 1e-6);

    auto resh_loss = [&] {
        auto rr = ad::reshape(x, {6, 4});
        return ad::sum(ad::mul(rr, probe_for({6, 4}, 18)));
    };
    CHECK(ad::grad_check(resh_loss, {x}).max_rel_err < 1e-6);

    auto tr_loss = [&] {
        auto tt = ad::transpose_last2(x);
        return ad::sum(ad::mul(tt, probe_for({6, 4}, 19)));
    };
    CHECK(ad::grad_check(tr_loss, {x}).max_rel_err < 1e-6);

    CHECK_THROWS_AS(ad::slice(x, 0, 3, 5), ad::ConfigError);
    CHECK_THROWS_AS(ad::reshape(x, {5, 5}), ad::ConfigError);
}

TEST_CASE("finite differences: column block ops") {
    ad::Rng rng(21);
    T64 x = T64::randn({3, 4}, rng, 0.8, true);
    T64 wide = T64::randn({3, 12}, rng, 0.8, true);

    auto rep_loss = [&] {
        return ad::sum(ad::mul(ad::repeat_cols(x, 3), probe_for({3, 12}, 22)));
    };
    CHECK(ad::grad_check(rep_loss, {x}).max_rel_err < 1e-6);

    auto tile_loss = [&] {
        return ad::sum(ad::mul(ad::tile_cols(x, 3), probe_for({3, 12}, 23)));
    };
    CHECK(ad::grad_check(tile_loss, {x}).max_rel_err < 1e-6);

    auto group_loss = [&] {
        return ad::sum(ad::mul(ad::sum_col_groups(wide, 3), probe_for({3, 4}, 24)));
    };
    CHECK(ad::grad_check(group_loss, {wide}).max_rel_err < 1e-6);

    // repeat_cols and tile_cols lay columns out differently
    T32 small = T32::from_vector({1, 2}, {1, 2});
    auto rep = ad::repeat_cols(small, 2);
    auto tile = ad::tile_cols(small, 2);
    CHECK(rep.data()[0] == 1);
    CHECK(rep.data()[1] == 1);
    CHECK(rep.data()[2] == 2);
    CHECK(tile.data()[0] == 1);
    CHECK(tile.data()[1] == 2);
    CHECK(tile.data()[2] == 1);
}

TEST_CASE("cumulative linear scan matches sequential recurrence") {
    ad::Rng rng(30);
    int64_t L = 7, n = 3;
    T64 a = T64::uniform({L, n}, rng, 0.1, 0.95, true);
    T64 b = T64::randn({L, n}, rng, 0.8, true);

    T64 h = ad::cumulative_scan_linear(a, b);

    // independent oracle: explicit step loop
    std::vector<double> expect(L * n, 0.0);
    for (int64_t t = 0; t < L; ++t)
        for (int64_t c = 0; c < n; ++c) {
            double prev = t > 0 ? expect[(t - 1) * n + c] : 0.0;
            expect[t * n + c] = a.data()[t * n + c] * prev + b.data()[t * n + c];
        }
    for (int64_t i = 0; i < L * n; ++i)
        CHECK(h.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    auto make_loss = [&] {
        return ad::sum(ad::mul(ad::cumulative_scan_linear(a, b), probe_for({L, n}, 31)));
    };
    CHECK(ad::grad_check(make_loss, {a, b}).max_rel_err < 1e-6);
}

TEST_CASE("fused selective scan matches step-loop oracle") {
    ad::Rng rng(40);
    int64_t L = 6, d = 3, N = 4;
    T64 dt = T64::uniform({L, d}, rng, 0.01, 0.3, true);
    T64 b = T64::randn({L, N}, rng, 0.7, true);
    T64 c = T64::randn({L, N}, rng, 0.7, true);
    T64 x = T64::randn({L, d}, rng, 0.7, true);
    T64 a = T64::uniform({d, N}, rng, -2.0, -0.1, true);
    T64 dsk = T64::randn({d}, rng, 0.5, true);

    T64 y = ad::selective_scan(dt, b, c, x, a, dsk);
    CHECK(y.shape() == ad::Shape{L, d});

    // independent oracle: explicit per-step recurrence
    std::vector<double> h(d * N, 0.0);
    for (int64_t t = 0; t < L; ++t)
        for (int64_t ch = 0; ch < d; ++ch) {
            double acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                double ab = std::exp(dt.data()[t * d + ch] * a.data()[ch * N + n]);
                h[ch * N + n] = ab * h[ch * N + n] +
                                dt.data()[t * d + ch] * b.data()[t * N + n] * x.data()[t * d + ch];
                acc += c.data()[t * N + n] * h[ch * N + n];
            }
            acc += dsk.data()[ch] * x.data()[t * d + ch];
            CHECK(y.data()[t * d + ch] == doctest::Approx(acc).epsilon(1e-10));
        }

    auto make_loss = [&] {
        return ad::sum(ad::mul(ad::selective_scan(dt, b, c, x, a, dsk), probe_for({L, d}, 41)));
    };
    CHECK(ad::grad_check(make_loss, {dt, b, c, x, a, dsk}).max_rel_err < 1e-5);
}

TEST_CASE("fused selective scan matches composition from generic ops") {
    ad::Rng rng(44);
    int64_t L = 6, d = 3, N = 4;
    T64 dt = T64::uniform({L, d}, rng, 0.01, 0.3, true);
    T64 b = T64::randn({L, N}, rng, 0.7, true);
    T64 c = T64::randn({L, N}, rng, 0.7, true);
    T64 x = T64::randn({L, d}, rng, 0.7, true);
    T64 a = T64::uniform({d, N}, rng, -2.0, -0.1, true);
    T64 dsk = T64::randn({d}, rng, 0.5, true);

    // same function assembled only from the generic op set
    auto composed = [&] {
        T64 decay = ad::exp(ad::mul(ad::repeat_cols(dt, N), ad::reshape(a, {1, d * N})));
        T64 inp = ad::mul(ad::repeat_cols(ad::mul(dt, x), N), ad::tile_cols(b, d));
        T64 h = ad::cumulative_scan_linear(decay, inp);
        T64 core = ad::sum_col_groups(ad::mul(h, ad::tile_cols(c, d)), N);
        return ad::add(core, ad::mul(x, ad::reshape(dsk, {1, d})));
    };

    T64 fused = ad::selective_scan(dt, b, c, x, a, dsk);
    T64 ref = composed();
    for (int64_t i = 0; i < L * d; ++i)
        CHECK(fused.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));

    // gradients agree between the two routes
    T64 probe = probe_for({L, d}, 45);
    ad::MapGradSink<double> s1, s2;
    ad::backward(ad::sum(ad::mul(fused, probe)), s1);
    ad::backward(ad::sum(ad::mul(ref, probe)), s2);
    for (const T64* p : {&dt, &b, &c, &x, &a, &dsk}) {
        auto g1 = s1.lookup(p->node());
        auto g2 = s2.lookup(p->node());
        REQUIRE(g1.size() == g2.size());
        for (size_t i = 0; i < g1.size(); ++i)
            CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-9));
    }
}

TEST_CASE("paired selective scan: query branch steps from the previous state") {
    ad::Rng rng(50);
    int64_t L = 5, d = 2, N = 3;
    T64 dt = T64::uniform({L, d}, rng, 0.01, 0.3, true);
    T64 b = T64::randn({L, N}, rng, 0.7, true);
    T64 c = T64::randn({L, N}, rng, 0.7, true);
    T64 x = T64::randn({L, d}, rng, 0.7, true);
    T64 dtq = T64::uniform({L, d}, rng, 0.01, 0.3, true);
    T64 bq = T64::randn({L, N}, rng, 0.7, true);
    T64 cq = T64::randn({L, N}, rng, 0.7, true);
    T64 xq = T64::randn({L, d}, rng, 0.7, true);
    T64 a = T64::uniform({d, N}, rng, -2.0, -0.1, true);
    T64 dsk = T64::randn({d}, rng, 0.5, true);

    T64 y = ad::selective_scan_pair(dt, b, c, x, dtq, bq, cq, xq, a, dsk);
    CHECK(y.shape() == ad::Shape{L, 2 * d});

    // history half must be identical to the unpaired op
    T64 yh = ad::selective_scan(dt, b, c, x, a, dsk);
    for (int64_t t = 0; t < L; ++t)
        for (int64_t ch = 0; ch < d; ++ch)
            CHECK(y.data()[t * 2 * d + ch] == doctest::Approx(yh.data()[t * d + ch]).epsilon(1e-12));

    // query half oracle: one branch step from h[t-1]
    std::vector<double> h(d * N, 0.0);
    for (int64_t t = 0; t < L; ++t) {
        for (int64_t ch = 0; ch < d; ++ch) {
            double acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                double abq = std::exp(dtq.data()[t * d + ch] * a.data()[ch * N + n]);
                double hq = abq * h[ch * N + n] +
                            dtq.data()[t * d + ch] * bq.data()[t * N + n] * xq.data()[t * d + ch];
                acc += cq.data()[t * N + n] * hq;
            }
            acc += dsk.data()[ch] * xq.data()[t * d + ch];
            CHECK(y.data()[t * 2 * d + d + ch] == doctest::Approx(acc).epsilon(1e-10));
        }
        for (int64_t ch = 0; ch < d; ++ch)
            for (int64_t n = 0; n < N; ++n) {
                double ab = std::exp(dt.data()[t * d + ch] * a.data()[ch * N + n]);
                h[ch * N + n] = ab * h[ch * N + n] +
                                dt.data()[t * d + ch] * b.data()[t * N + n] * x.data()[t * d + ch];
            }
    }

    auto make_loss = [&] {
        return ad::sum(ad::mul(ad::selective_scan_pair(dt, b, c, x, dtq, bq, cq, xq, a, dsk),
                               probe_for({L, 2 * d}, 51)));
    };
    CHECK(ad::grad_check(make_loss, {dt, b, c, x, dtq, bq, cq, xq, a, dsk}).max_rel_err < 1e-5);
}

TEST_CASE("backward accumulates across shared subexpressions and reruns identically") {
    ad::Rng rng(60);
    T32 x = T32::randn({3, 3}, rng, 0.5f, true);
    T32 w = T32::randn({3, 3}, rng, 0.5f, true);

    auto run = [&] {
        x.zero_grad();
        w.zero_grad();
        T32 h = ad::matmul(x, w);
        T32 y = ad::add(ad::mul(h, h), ad::mul(x, x));  // diamond: h used twice
        T32 loss = ad::mean(y);
        ad::backward(loss);
        std::vector<float> g(x.grad().begin(), x.grad().end());
        g.insert(g.end(), w.grad().begin(), w.grad().end());
        return g;
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);  // byte-identical across reruns
}

TEST_CASE("map sinks merged in fixed order match single-graph gradients") {
    ad::Rng rng(61);
    T32 w = T32::randn({3, 3}, rng, 0.5f, true);
    T32 x1 = T32::randn({2, 3}, rng, 0.5f);
    T32 x2 = T32::randn({2, 3}, rng, 0.5f);

    auto loss_of = [&](const T32& x) { return ad::mean(ad::mul(ad::matmul(x, w), ad::matmul(x, w))); };

    // reference: summed loss through one graph
    w.zero_grad();
    ad::backward(ad::add(loss_of(x1), loss_of(x2)));
    std::vector<float> ref(w.grad().begin(), w.grad().end());

    // per-example graphs into private sinks, merged in fixed order
    w.zero_grad();
    ad::MapGradSink<float> s1, s2;
    ad::backward(loss_of(x1), s1);
    ad::backward(loss_of(x2), s2);
    s1.merge_into_nodes({w});
    s2.merge_into_nodes({w});
    for (size_t i = 0; i < ref.size(); ++i)
        CHECK(w.grad()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("no-grad scope records no graph") {
    T32 x = T32::from_vector({1}, {2.0f}, true);
    ad::NoGrad guard;
    T32 y = ad::mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK_THROWS_AS(ad::backward(y), ad::ConfigError);
}

TEST_CASE("finiteness guard flags overflow only when enabled") {
    T32 x = T32::from_vector({1}, {200.0f});
    T32 y = ad::exp(x);  // inf, guard off: allowed
    CHECK(std::isinf(y.data()[0]));

    ad::set_finite_checks(true);
    CHECK_THROWS_AS(ad::exp(x), ad::NumericError);
    ad::set_finite_checks(false);
    CHECK_NOTHROW(ad::exp(x));
}

TEST_CASE("generic dispatch covers the full op list") {
    ad::Rng rng(70);
    T32 a = T32::uniform({2, 3}, rng, 0.2f, 1.0f);
    T32 b = T32::uniform({3, 2}, rng, 0.2f, 1.0f);
    T32 c = T32::uniform({2, 3}, rng, 0.2f, 1.0f);

    CHECK(ad::apply<float>(ad::OpKind::matmul, {a, b}).shape() == ad::Shape{2, 2});
    CHECK(ad::apply<float>(ad::OpKind::add, {a, c}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::sub, {a, c}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::mul, {a, c}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::exp, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::log, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::softplus, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::silu, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::tanh, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::sigmoid, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::softmax_lastdim, {a}).shape() == ad::Shape{2, 3});
    CHECK(ad::apply<float>(ad::OpKind::sum, {a}).numel() == 1);
    CHECK(ad::apply<float>(ad::OpKind::mean, {a}).numel() == 1);
    ad::OpAttrs sl;
    sl.axis = 0;
    sl.begin = 0;
    sl.len = 1;
    CHECK(ad::apply<float>(ad::OpKind::slice, {a}, sl).shape() == ad::Shape{1, 3});
    ad::OpAttrs cat;
    cat.axis = 0;
    CHECK(ad::apply<float>(ad::OpKind::concat, {a, c}, cat).shape() == ad::Shape{4, 3});
    ad::OpAttrs rs;
    rs.shape = {3, 2};
    CHECK(ad::apply<float>(ad::OpKind::reshape, {a}, rs).shape() == ad::Shape{3, 2});
    CHECK(ad::apply<float>(ad::OpKind::transpose_last2, {a}).shape() == ad::Shape{3, 2});
    CHECK(ad::apply<float>(ad::OpKind::cumulative_scan_linear, {a, c}).shape() == ad::Shape{2, 3});
    CHECK_THROWS_AS(ad::apply<float>(ad::OpKind::matmul, {a}), ad::ConfigError);
}

TEST_CASE("adam: bias-corrected first step and decoupled decay") {
    // unit gradient, lr 0.1: first step must move by ~ -0.1
    T32 p = T32::from_vector({1}, {1.0f}, true);
    {
        T32 loss = ad::sum(p);  // dloss/dp = 1
        ad::backward(loss);
    }
    ad::AdamConfig cfg;
    cfg.lr = 0.1f;
    ad::Adam opt({p}, cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9f).epsilon(1e-5));

    // zero gradient and no decay: parameter must not move
    T32 q = T32::from_vector({1}, {0.5f}, true);
    ad::Adam opt2({q}, cfg);
    opt2.step();
    CHECK(q.data()[0] == doctest::Approx(0.5f).epsilon(1e-7));

    // zero gradient with decay: pure multiplicative shrink by (1 - lr*wd)
    T32 r = T32::from_vector({1}, {1.0f}, true);
    ad::AdamConfig cfg_wd = cfg;
    cfg_wd.weight_decay = 0.5f;
    ad::Adam opt3({r}, cfg_wd);
    opt3.step();
    CHECK(r.data()[0] == doctest::Approx(1.0f - 0.1f * 0.5f).epsilon(1e-6));
}

TEST_CASE("adam drives a least-squares problem to convergence") {
    ad::Rng rng(80);
    T32 w = T32::randn({3, 1}, rng, 0.1f, true);
    T32 x = T32::randn({16, 3}, rng, 1.0f);
    T32 target = ad::matmul(x, T32::from_vector({3, 1}, {0.5f, -1.0f, 2.0f}));

    ad::AdamConfig cfg;
    cfg.lr = 0.05f;
    ad::Adam opt({w}, cfg);
    float first = 0, last = 0;
    for (int it = 0; it < 400; ++it) {
        opt.zero_grad();
        T32 err = ad::sub(ad::matmul(x, w), target);
        T32 loss = ad::mean(ad::mul(err, err));
        if (it == 0) first = loss.item();
        last = loss.item();
        ad::backward(loss);
        opt.step();
    }
    CHECK(last < 1e-4f);
    CHECK(last < first);
}

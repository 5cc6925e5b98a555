#pragma once

// Tape-based reverse-mode autodiff over dense row-major tensors.
//
// Design notes:
//  - Every operation allocates a Node holding the forward value plus a
//    backward closure; Tensor is a shared_ptr handle to a Node, so dropping
//    the loss tensor frees the whole recorded graph.
//  - The engine is templated on the element type: float for production,
//    double for the finite-difference checking mode.
//  - backward() walks the graph in reverse topological order computed by an
//    iterative DFS (no recursion, insensitive to pointer values), and writes
//    gradients through a GradSink. NodeGradSink stores them on the nodes
//    themselves (the usual single-graph path); MapGradSink keeps them in a
//    private map so several threads can differentiate disjoint graphs that
//    share parameter leaves, then merge in a fixed order.

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <cblas.h>

#include "common.hpp"

namespace ad {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
    os << ')';
    return os.str();
}

// --- grad mode ---------------------------------------------------------------

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard: computations in scope record no graph (inference / numeric probes).
struct NoGrad {
    NoGrad() { ++detail::no_grad_depth; }
    ~NoGrad() { --detail::no_grad_depth; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

// Opt-in finiteness guard: when enabled, every freshly computed node value is
// scanned and a NumericError is raised naming the offending operation.
bool finite_checks_enabled();
void set_finite_checks(bool on);

// --- node / tensor -----------------------------------------------------------

template <class Real>
struct NodeT;

template <class Real>
class GradSink {
public:
    virtual ~GradSink() = default;
    // Returns this node's gradient accumulation buffer (created zeroed).
    virtual std::span<Real> accum(NodeT<Real>* n) = 0;
    virtual std::span<const Real> lookup(const NodeT<Real>* n) const = 0;
};

template <class Real>
struct NodeT {
    using BackwardFn = std::function<void(NodeT<Real>&, std::span<const Real>, GradSink<Real>&)>;

    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // filled by NodeGradSink
    std::vector<std::shared_ptr<NodeT>> parents;
    BackwardFn backward;
    std::vector<Real> saved;  // op-specific forward state reused by backward
    const char* op = "leaf";
    bool requires_grad = false;

    int64_t numel() const { return shape_numel(shape); }
};

template <class Real>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<NodeT<Real>>();
        n->shape = std::move(shape);
        n->value.assign(n->numel(), Real(0));
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT full(Shape shape, Real v) {
        TensorT t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static TensorT scalar(Real v) { return full({1}, v); }

    static TensorT from_vector(Shape shape, std::vector<Real> values, bool requires_grad = false) {
        auto n = std::make_shared<NodeT<Real>>();
        n->shape = std::move(shape);
        if (static_cast<int64_t>(values.size()) != n->numel())
            throw ConfigError("from_vector: value count " + std::to_string(values.size()) +
                              " does not match shape " + shape_str(n->shape));
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT randn(Shape shape, Rng& rng, Real stddev, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (Real& v : t.data()) v = static_cast<Real>(rng.normal()) * stddev;
        return t;
    }

    static TensorT uniform(Shape shape, Rng& rng, Real lo, Real hi, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
        return t;
    }

    explicit operator bool() const { return static_cast<bool>(n_); }

    const Shape& shape() const { return n_->shape; }
    int64_t numel() const { return n_->numel(); }
    int64_t rank() const { return static_cast<int64_t>(n_->shape.size()); }

    int64_t rows() const {
        require_rank2("rows");
        return n_->shape[0];
    }
    int64_t cols() const {
        require_rank2("cols");
        return n_->shape[1];
    }

    std::span<Real> data() { return {n_->value.data(), n_->value.size()}; }
    std::span<const Real> data() const { return {n_->value.data(), n_->value.size()}; }

    Real item() const {
        if (numel() != 1) throw ConfigError("item: tensor has shape " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool on) { n_->requires_grad = on; }

    std::span<const Real> grad() const { return {n_->grad.data(), n_->grad.size()}; }
    void zero_grad() {
        n_->grad.clear();
    }

    NodeT<Real>* node() const { return n_.get(); }
    const std::shared_ptr<NodeT<Real>>& handle() const { return n_; }

    explicit TensorT(std::shared_ptr<NodeT<Real>> n) : n_(std::move(n)) {}

private:
    void require_rank2(const char* what) const {
        if (n_->shape.size() != 2)
            throw ConfigError(std::string(what) + ": tensor has shape " + shape_str(n_->shape));
    }

    std::shared_ptr<NodeT<Real>> n_;
};

using Tensor = TensorT<float>;

// --- gradient sinks ----------------------------------------------------------

template <class Real>
class NodeGradSink final : public GradSink<Real> {
public:
    std::span<Real> accum(NodeT<Real>* n) override {
        if (n->grad.empty()) n->grad.assign(n->numel(), Real(0));
        return {n->grad.data(), n->grad.size()};
    }
    std::span<const Real> lookup(const NodeT<Real>* n) const override {
        return {n->grad.data(), n->grad.size()};
    }
};

template <class Real>
class MapGradSink final : public GradSink<Real> {
public:
    std::span<Real> accum(NodeT<Real>* n) override {
        auto& buf = grads_[n];
        if (buf.empty()) buf.assign(n->numel(), Real(0));
        return {buf.data(), buf.size()};
    }
    std::span<const Real> lookup(const NodeT<Real>* n) const override {
        auto it = grads_.find(n);
        if (it == grads_.end()) return {};
        return {it->second.data(), it->second.size()};
    }

    // Adds this sink's gradient for each listed node into the node's own grad
    // buffer. Iterating a caller-supplied list keeps the reduction order fixed.
    void merge_into_nodes(const std::vector<TensorT<Real>>& params) {
        for (const auto& p : params) {
            auto it = grads_.find(p.node());
            if (it == grads_.end()) continue;
            auto& dst = p.node()->grad;
            if (dst.empty()) dst.assign(p.numel(), Real(0));
            const auto& src = it->second;
            for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        }
    }

private:
    std::unordered_map<const NodeT<Real>*, std::vector<Real>> grads_;
};

// --- node construction helpers ----------------------------------------------

namespace detail {

template <class Real>
void check_finite(const NodeT<Real>& n) {
    if (!finite_checks_enabled()) return;
    for (Real v : n.value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by op '") + n.op + "'");
    }
}

template <class Real>
TensorT<Real> make_node(Shape shape, const char* op, std::vector<TensorT<Real>> inputs,
                        typename NodeT<Real>::BackwardFn bw) {
    auto n = std::make_shared<NodeT<Real>>();
    n->shape = std::move(shape);
    n->value.assign(n->numel(), Real(0));
    n->op = op;
    if (grad_enabled()) {
        bool rg = false;
        for (const auto& t : inputs) rg = rg || t.requires_grad();
        if (rg) {
            n->requires_grad = true;
            n->parents.reserve(inputs.size());
            for (const auto& t : inputs) n->parents.push_back(t.handle());
            n->backward = std::move(bw);
        }
    }
    return TensorT<Real>(std::move(n));
}

}  // namespace detail

// --- backward ----------------------------------------------------------------

template <class Real>
void backward(const TensorT<Real>& loss, GradSink<Real>& sink) {
    NodeT<Real>* root = loss.node();
    if (!root) throw ConfigError("backward: empty tensor");
    if (root->numel() != 1)
        throw ConfigError("backward: loss must be scalar, got shape " + shape_str(root->shape));
    if (!root->requires_grad)
        throw ConfigError("backward: loss does not depend on any parameter");

    // Iterative DFS post-order; reversed it is a topological order, so every
    // node's gradient is complete before its own backward runs. Traversal
    // order depends only on the recorded parent lists, never on addresses.
    std::vector<NodeT<Real>*> order;
    std::unordered_set<const NodeT<Real>*> visited;
    std::vector<std::pair<NodeT<Real>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT<Real>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    sink.accum(root)[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<Real>* n = *it;
        if (!n->backward) continue;
        auto dy = sink.lookup(n);
        if (dy.empty()) continue;
        n->backward(*n, dy, sink);
    }
}

template <class Real>
void backward(const TensorT<Real>& loss) {
    NodeGradSink<Real> sink;
    backward(loss, sink);
}

// --- BLAS shims ---------------------------------------------------------------

namespace detail {

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
                 int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
                 int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace detail

// --- matmul -------------------------------------------------------------------

template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ConfigError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    int64_t m = a.rows(), k = a.cols(), n = b.cols();
    auto out = detail::make_node<Real>(
        {m, n}, "matmul", {a, b},
        [m, k, n](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto da = sink.accum(&pa);
                detail::gemm(false, true, m, k, n, Real(1), dy.data(), n, pb.value.data(), n,
                             Real(1), da.data(), k);
            }
            if (pb.requires_grad) {
                auto db = sink.accum(&pb);
                detail::gemm(true, false, k, n, m, Real(1), pa.value.data(), k, dy.data(), n,
                             Real(1), db.data(), n);
            }
        });
    detail::gemm(false, false, m, n, k, Real(1), a.data().data(), k, b.data().data(), n, Real(0),
                 out.data().data(), n);
    detail::check_finite(*out.node());
    return out;
}

// --- elementwise binary ops with broadcasting ---------------------------------

namespace detail {

enum class Bcast { same, row, scalar };

// How `small` broadcasts over `big`. Allowed: identical shapes, a row vector
// (n) or (1, n) over the last dimension of a rank-2 tensor, or a scalar.
template <class Real>
Bcast broadcast_kind(const TensorT<Real>& big, const TensorT<Real>& small, const char* op) {
    if (big.shape() == small.shape()) return Bcast::same;
    if (small.numel() == 1) return Bcast::scalar;
    if (big.rank() == 2 && small.numel() == big.cols() &&
        (small.rank() == 1 || (small.rank() == 2 && small.shape()[0] == 1)))
        return Bcast::row;
    throw ConfigError(std::string(op) + ": shapes " + shape_str(big.shape()) + " and " +
                      shape_str(small.shape()) + " are not broadcastable");
}

inline int64_t bcast_index(Bcast k, int64_t i, int64_t cols) {
    switch (k) {
        case Bcast::same: return i;
        case Bcast::row: return i % cols;
        case Bcast::scalar: return 0;
    }
    return 0;
}

// Reduces an output-shaped gradient onto the broadcast (smaller) operand.
template <class Real>
void bcast_reduce(Bcast k, std::span<const Real> contrib, int64_t cols, std::span<Real> dst,
                  Real sign) {
    switch (k) {
        case Bcast::same:
            for (size_t i = 0; i < contrib.size(); ++i) dst[i] += sign * contrib[i];
            break;
        case Bcast::row:
            for (size_t i = 0; i < contrib.size(); ++i) dst[i % cols] += sign * contrib[i];
            break;
        case Bcast::scalar: {
            Real acc = 0;
            for (Real v : contrib) acc += v;
            dst[0] += sign * acc;
            break;
        }
    }
}

// Shared implementation for add/sub/mul. `a` and `b` keep caller order; the
// broadcast analysis works on (big, small) with a flag for which side is big.
template <class Real, class FwdFn>
TensorT<Real> binary_elementwise(const char* op, const TensorT<Real>& a, const TensorT<Real>& b,
                                 FwdFn fwd,
                                 typename NodeT<Real>::BackwardFn bw) {
    bool a_is_big = a.numel() >= b.numel();
    const TensorT<Real>& big = a_is_big ? a : b;
    const TensorT<Real>& small = a_is_big ? b : a;
    Bcast kind = broadcast_kind(big, small, op);
    int64_t cols = big.rank() == 2 ? big.cols() : big.numel();

    auto out = make_node<Real>(big.shape(), op, {a, b}, std::move(bw));
    auto ov = out.data();
    auto bv = big.data();
    auto sv = small.data();
    for (int64_t i = 0; i < big.numel(); ++i) {
        Real x = bv[i];
        Real y = sv[bcast_index(kind, i, cols)];
        ov[i] = a_is_big ? fwd(x, y) : fwd(y, x);
    }
    check_finite(*out.node());
    return out;
}

}  // namespace detail

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    bool a_is_big = a.numel() >= b.numel();
    auto kind = detail::broadcast_kind(a_is_big ? a : b, a_is_big ? b : a, "add");
    int64_t cols = (a_is_big ? a : b).rank() == 2 ? (a_is_big ? a : b).cols()
                                                  : (a_is_big ? a : b).numel();
    return detail::binary_elementwise<Real>(
        "add", a, b, [](Real x, Real y) { return x + y; },
        [kind, cols, a_is_big](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            NodeT<Real>& big = a_is_big ? pa : pb;
            NodeT<Real>& small = a_is_big ? pb : pa;
            if (big.requires_grad) {
                auto g = sink.accum(&big);
                for (size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
            }
            if (small.requires_grad)
                detail::bcast_reduce(kind, dy, cols, sink.accum(&small), Real(1));
        });
}

template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
    bool a_is_big = a.numel() >= b.numel();
    auto kind = detail::broadcast_kind(a_is_big ? a : b, a_is_big ? b : a, "sub");
    int64_t cols = (a_is_big ? a : b).rank() == 2 ? (a_is_big ? a : b).cols()
                                                  : (a_is_big ? a : b).numel();
    return detail::binary_elementwise<Real>(
        "sub", a, b, [](Real x, Real y) { return x - y; },
        [kind, cols, a_is_big](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            NodeT<Real>& big = a_is_big ? pa : pb;
            NodeT<Real>& small = a_is_big ? pb : pa;
            Real big_sign = a_is_big ? Real(1) : Real(-1);
            if (big.requires_grad) {
                auto g = sink.accum(&big);
                for (size_t i = 0; i < dy.size(); ++i) g[i] += big_sign * dy[i];
            }
            if (small.requires_grad)
                detail::bcast_reduce(kind, dy, cols, sink.accum(&small), -big_sign);
        });
}

template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    bool a_is_big = a.numel() >= b.numel();
    auto kind = detail::broadcast_kind(a_is_big ? a : b, a_is_big ? b : a, "mul");
    int64_t cols = (a_is_big ? a : b).rank() == 2 ? (a_is_big ? a : b).cols()
                                                  : (a_is_big ? a : b).numel();
    return detail::binary_elementwise<Real>(
        "mul", a, b, [](Real x, Real y) { return x * y; },
        [kind, cols, a_is_big](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            NodeT<Real>& big = a_is_big ? pa : pb;
            NodeT<Real>& small = a_is_big ? pb : pa;
            if (big.requires_grad) {
                auto g = sink.accum(&big);
                for (size_t i = 0; i < dy.size(); ++i)
                    g[i] += dy[i] * small.value[detail::bcast_index(kind, i, cols)];
            }
            if (small.requires_grad) {
                auto g = sink.accum(&small);
                for (size_t i = 0; i < dy.size(); ++i)
                    g[detail::bcast_index(kind, static_cast<int64_t>(i), cols)] +=
                        dy[i] * big.value[i];
            }
        });
}

// y = alpha * x + beta with scalar constants; covers negation, scaling and
// constant shifts without materialising constant tensors.
template <class Real>
TensorT<Real> affine(const TensorT<Real>& x, Real alpha, Real beta) {
    auto out = detail::make_node<Real>(
        x.shape(), "affine", {x},
        [alpha](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (size_t i = 0; i < dy.size(); ++i) g[i] += alpha * dy[i];
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = alpha * xv[i] + beta;
    detail::check_finite(*out.node());
    return out;
}

// --- elementwise unary ops -----------------------------------------------------

namespace detail {

// fwd: value -> value. dfn(x, y) -> dy/dx where y is the forward output.
template <class Real, class FwdFn, class DerivFn>
TensorT<Real> unary_elementwise(const char* op, const TensorT<Real>& x, FwdFn fwd, DerivFn dfn) {
    auto out = make_node<Real>(
        x.shape(), op, {x},
        [dfn](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (size_t i = 0; i < dy.size(); ++i)
                g[i] += dy[i] * dfn(p.value[i], self.value[i]);
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) ov[i] = fwd(xv[i]);
    check_finite(*out.node());
    return out;
}

template <class Real>
Real sigmoid_scalar(Real x) {
    if (x >= 0) {
        Real e = std::exp(-x);
        return Real(1) / (Real(1) + e);
    }
    Real e = std::exp(x);
    return e / (Real(1) + e);
}

template <class Real>
Real softplus_scalar(Real x) {
    // log(1 + e^x), stable on both tails.
    if (x > Real(30)) return x;
    if (x < Real(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

}  // namespace detail

template <class Real>
TensorT<Real> exp(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <class Real>
TensorT<Real> log(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "log", x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <class Real>
TensorT<Real> softplus(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "softplus", x, [](Real v) { return detail::softplus_scalar(v); },
        [](Real v, Real) { return detail::sigmoid_scalar(v); });
}

template <class Real>
TensorT<Real> silu(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "silu", x, [](Real v) { return v * detail::sigmoid_scalar(v); },
        [](Real v, Real) {
            Real s = detail::sigmoid_scalar(v);
            return s * (Real(1) + v * (Real(1) - s));
        });
}

template <class Real>
TensorT<Real> tanh(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "tanh", x, [](Real v) { return std::tanh(v); },
        [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
TensorT<Real> sigmoid(const TensorT<Real>& x) {
    return detail::unary_elementwise<Real>(
        "sigmoid", x, [](Real v) { return detail::sigmoid_scalar(v); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

// GELU, tanh approximation (matches the usual transformer feed-forward).
template <class Real>
TensorT<Real> gelu(const TensorT<Real>& x) {
    constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    constexpr Real k = Real(0.044715);
    return detail::unary_elementwise<Real>(
        "gelu", x,
        [](Real v) {
            Real u = c * (v + k * v * v * v);
            return Real(0.5) * v * (Real(1) + std::tanh(u));
        },
        [](Real v, Real) {
            Real u = c * (v + k * v * v * v);
            Real t = std::tanh(u);
            Real sech2 = Real(1) - t * t;
            return Real(0.5) * (Real(1) + t) + Real(0.5) * v * sech2 * c * (Real(1) + Real(3) * k * v * v);
        });
}

// --- softmax / reductions -------------------------------------------------------

template <class Real>
TensorT<Real> softmax_lastdim(const TensorT<Real>& x) {
    if (x.rank() != 2)
        throw ConfigError("softmax_lastdim: expected rank-2 input, got " + shape_str(x.shape()));
    int64_t m = x.rows(), n = x.cols();
    auto out = detail::make_node<Real>(
        {m, n}, "softmax_lastdim", {x},
        [m, n](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (int64_t r = 0; r < m; ++r) {
                const Real* y = self.value.data() + r * n;
                const Real* d = dy.data() + r * n;
                Real dot = 0;
                for (int64_t j = 0; j < n; ++j) dot += d[j] * y[j];
                for (int64_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (d[j] - dot);
            }
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t r = 0; r < m; ++r) {
        const Real* row = xv.data() + r * n;
        Real mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Real sum = 0;
        for (int64_t j = 0; j < n; ++j) {
            Real e = std::exp(row[j] - mx);
            ov[r * n + j] = e;
            sum += e;
        }
        Real inv = Real(1) / sum;
        for (int64_t j = 0; j < n; ++j) ov[r * n + j] *= inv;
    }
    detail::check_finite(*out.node());
    return out;
}

template <class Real>
TensorT<Real> sum(const TensorT<Real>& x) {
    auto out = detail::make_node<Real>(
        {1}, "sum", {x}, [](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += dy[0];
        });
    Real acc = 0;
    for (Real v : x.data()) acc += v;
    out.data()[0] = acc;
    detail::check_finite(*out.node());
    return out;
}

template <class Real>
TensorT<Real> mean(const TensorT<Real>& x) {
    if (x.numel() == 0) throw ConfigError("mean: empty tensor");
    Real inv = Real(1) / static_cast<Real>(x.numel());
    auto out = detail::make_node<Real>(
        {1}, "mean", {x},
        [inv](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += dy[0] * inv;
        });
    Real acc = 0;
    for (Real v : x.data()) acc += v;
    out.data()[0] = acc * inv;
    detail::check_finite(*out.node());
    return out;
}

// --- shape ops -------------------------------------------------------------------

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ConfigError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(shape));
    auto out = detail::make_node<Real>(
        std::move(shape), "reshape", {x},
        [](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
        });
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return out;
}

template <class Real>
TensorT<Real> transpose_last2(const TensorT<Real>& x) {
    if (x.rank() != 2)
        throw ConfigError("transpose_last2: expected rank-2 input, got " + shape_str(x.shape()));
    int64_t m = x.rows(), n = x.cols();
    auto out = detail::make_node<Real>(
        {n, m}, "transpose_last2", {x},
        [m, n](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c) g[r * n + c] += dy[c * m + r];
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) ov[c * m + r] = xv[r * n + c];
    return out;
}

template <class Real>
TensorT<Real> slice(const TensorT<Real>& x, int64_t axis, int64_t begin, int64_t len) {
    if (x.rank() != 2)
        throw ConfigError("slice: expected rank-2 input, got " + shape_str(x.shape()));
    if (axis != 0 && axis != 1) throw ConfigError("slice: axis must be 0 or 1");
    int64_t dim = axis == 0 ? x.rows() : x.cols();
    if (begin < 0 || len < 1 || begin + len > dim)
        throw ConfigError("slice: range [" + std::to_string(begin) + ", " +
                          std::to_string(begin + len) + ") out of bounds for axis size " +
                          std::to_string(dim));
    int64_t m = x.rows(), n = x.cols();
    Shape oshape = axis == 0 ? Shape{len, n} : Shape{m, len};
    auto out = detail::make_node<Real>(
        oshape, "slice", {x},
        [axis, begin, len, m, n](NodeT<Real>& self, std::span<const Real> dy,
                                 GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            if (axis == 0) {
                for (int64_t r = 0; r < len; ++r)
                    for (int64_t c = 0; c < n; ++c) g[(begin + r) * n + c] += dy[r * n + c];
            } else {
                for (int64_t r = 0; r < m; ++r)
                    for (int64_t c = 0; c < len; ++c) g[r * n + begin + c] += dy[r * len + c];
            }
        });
    auto ov = out.data();
    auto xv = x.data();
    if (axis == 0) {
        std::copy(xv.begin() + begin * n, xv.begin() + (begin + len) * n, ov.begin());
    } else {
        for (int64_t r = 0; r < m; ++r)
            std::copy(xv.begin() + r * n + begin, xv.begin() + r * n + begin + len,
                      ov.begin() + r * len);
    }
    return out;
}

template <class Real>
TensorT<Real> concat(const std::vector<TensorT<Real>>& xs, int64_t axis) {
    if (xs.empty()) throw ConfigError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ConfigError("concat: axis must be 0 or 1");
    for (const auto& t : xs)
        if (t.rank() != 2)
            throw ConfigError("concat: expected rank-2 inputs, got " + shape_str(t.shape()));
    int64_t other = axis == 0 ? xs[0].cols() : xs[0].rows();
    int64_t total = 0;
    for (const auto& t : xs) {
        int64_t o = axis == 0 ? t.cols() : t.rows();
        if (o != other)
            throw ConfigError("concat: mismatched shapes " + shape_str(xs[0].shape()) + " vs " +
                              shape_str(t.shape()));
        total += axis == 0 ? t.rows() : t.cols();
    }
    Shape oshape = axis == 0 ? Shape{total, other} : Shape{other, total};
    std::vector<int64_t> sizes;
    sizes.reserve(xs.size());
    for (const auto& t : xs) sizes.push_back(axis == 0 ? t.rows() : t.cols());

    auto out = detail::make_node<Real>(
        oshape, "concat", xs,
        [axis, sizes, other, total](NodeT<Real>& self, std::span<const Real> dy,
                                    GradSink<Real>& sink) {
            int64_t offset = 0;
            for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = *self.parents[pi];
                int64_t sz = sizes[pi];
                if (p.requires_grad) {
                    auto g = sink.accum(&p);
                    if (axis == 0) {
                        for (int64_t i = 0; i < sz * other; ++i) g[i] += dy[offset * other + i];
                    } else {
                        for (int64_t r = 0; r < other; ++r)
                            for (int64_t c = 0; c < sz; ++c)
                                g[r * sz + c] += dy[r * total + offset + c];
                    }
                }
                offset += sz;
            }
        });
    auto ov = out.data();
    int64_t offset = 0;
    for (const auto& t : xs) {
        auto xv = t.data();
        int64_t sz = axis == 0 ? t.rows() : t.cols();
        if (axis == 0) {
            std::copy(xv.begin(), xv.end(), ov.begin() + offset * other);
        } else {
            for (int64_t r = 0; r < other; ++r)
                std::copy(xv.begin() + r * sz, xv.begin() + (r + 1) * sz,
                          ov.begin() + r * total + offset);
        }
        offset += sz;
    }
    return out;
}

// --- column block utilities (used to route per-channel state through matmuls) ---

// (m, n) -> (m, n*k): every column repeated k times consecutively.
template <class Real>
TensorT<Real> repeat_cols(const TensorT<Real>& x, int64_t k) {
    if (x.rank() != 2) throw ConfigError("repeat_cols: expected rank-2 input");
    if (k < 1) throw ConfigError("repeat_cols: k must be >= 1");
    int64_t m = x.rows(), n = x.cols();
    auto out = detail::make_node<Real>(
        {m, n * k}, "repeat_cols", {x},
        [m, n, k](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c) {
                    Real acc = 0;
                    for (int64_t j = 0; j < k; ++j) acc += dy[r * n * k + c * k + j];
                    g[r * n + c] += acc;
                }
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c)
            for (int64_t j = 0; j < k; ++j) ov[r * n * k + c * k + j] = xv[r * n + c];
    return out;
}

// (m, n) -> (m, n*k): the whole row tiled k times.
template <class Real>
TensorT<Real> tile_cols(const TensorT<Real>& x, int64_t k) {
    if (x.rank() != 2) throw ConfigError("tile_cols: expected rank-2 input");
    if (k < 1) throw ConfigError("tile_cols: k must be >= 1");
    int64_t m = x.rows(), n = x.cols();
    auto out = detail::make_node<Real>(
        {m, n * k}, "tile_cols", {x},
        [m, n, k](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (int64_t r = 0; r < m; ++r)
                for (int64_t j = 0; j < k; ++j)
                    for (int64_t c = 0; c < n; ++c) g[r * n + c] += dy[r * n * k + j * n + c];
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t j = 0; j < k; ++j)
            std::copy(xv.begin() + r * n, xv.begin() + (r + 1) * n, ov.begin() + r * n * k + j * n);
    return out;
}

// (m, n*k) -> (m, n): sums consecutive groups of k columns. Adjoint of repeat_cols.
template <class Real>
TensorT<Real> sum_col_groups(const TensorT<Real>& x, int64_t k) {
    if (x.rank() != 2) throw ConfigError("sum_col_groups: expected rank-2 input");
    if (k < 1 || x.cols() % k != 0)
        throw ConfigError("sum_col_groups: column count " + std::to_string(x.cols()) +
                          " not divisible by group size " + std::to_string(k));
    int64_t m = x.rows(), n = x.cols() / k;
    auto out = detail::make_node<Real>(
        {m, n}, "sum_col_groups", {x},
        [m, n, k](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = sink.accum(&p);
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c)
                    for (int64_t j = 0; j < k; ++j) g[r * n * k + c * k + j] += dy[r * n + c];
        });
    auto ov = out.data();
    auto xv = x.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) {
            Real acc = 0;
            for (int64_t j = 0; j < k; ++j) acc += xv[r * n * k + c * k + j];
            ov[r * n + c] = acc;
        }
    return out;
}

// --- rmsnorm ---------------------------------------------------------------------

// Row-wise RMS normalisation with a learned per-column gain.
template <class Real>
TensorT<Real> rmsnorm(const TensorT<Real>& x, const TensorT<Real>& gain, Real eps = Real(1e-5)) {
    if (x.rank() != 2) throw ConfigError("rmsnorm: expected rank-2 input");
    if (gain.numel() != x.cols())
        throw ConfigError("rmsnorm: gain size " + std::to_string(gain.numel()) +
                          " does not match column count " + std::to_string(x.cols()));
    int64_t m = x.rows(), n = x.cols();
    auto out = detail::make_node<Real>(
        {m, n}, "rmsnorm", {x, gain},
        [m, n](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            const Real* inv_rms = self.saved.data();  // one per row
            std::span<Real> gx, gg;
            if (px.requires_grad) gx = sink.accum(&px);
            if (pg.requires_grad) gg = sink.accum(&pg);
            for (int64_t r = 0; r < m; ++r) {
                const Real* xr = px.value.data() + r * n;
                const Real* dr = dy.data() + r * n;
                Real inv = inv_rms[r];
                if (px.requires_grad) {
                    Real dot = 0;  // sum_i dy_i * gain_i * x_i
                    for (int64_t c = 0; c < n; ++c) dot += dr[c] * pg.value[c] * xr[c];
                    Real coef = inv * inv * inv * dot / static_cast<Real>(n);
                    for (int64_t c = 0; c < n; ++c)
                        gx[r * n + c] += inv * pg.value[c] * dr[c] - coef * xr[c];
                }
                if (pg.requires_grad)
                    for (int64_t c = 0; c < n; ++c) gg[c] += dr[c] * xr[c] * inv;
            }
        });
    auto ov = out.data();
    auto xv = x.data();
    auto gv = gain.data();
    out.node()->saved.resize(m);
    for (int64_t r = 0; r < m; ++r) {
        const Real* xr = xv.data() + r * n;
        Real ms = 0;
        for (int64_t c = 0; c < n; ++c) ms += xr[c] * xr[c];
        ms = ms / static_cast<Real>(n) + eps;
        Real inv = Real(1) / std::sqrt(ms);
        out.node()->saved[r] = inv;
        for (int64_t c = 0; c < n; ++c) ov[r * n + c] = xr[c] * inv * gv[c];
    }
    detail::check_finite(*out.node());
    return out;
}

// --- cumulative linear scan -------------------------------------------------------

// h_t = a_t * h_{t-1} + b_t along rows (t = 0..L-1), elementwise over columns.
// The backbone's recurrence in reusable form; backward runs the reverse-time
// adjoint recurrence g_t = dh_t + a_{t+1} * g_{t+1}.
template <class Real>
TensorT<Real> cumulative_scan_linear(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || a.shape() != b.shape())
        throw ConfigError("cumulative_scan_linear: decay and input shapes must match, got " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    int64_t L = a.rows(), n = a.cols();
    auto out = detail::make_node<Real>(
        {L, n}, "cumulative_scan_linear", {a, b},
        [L, n](NodeT<Real>& self, std::span<const Real> dy, GradSink<Real>& sink) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const Real* h = self.value.data();
            std::vector<Real> g(dy.begin() + (L - 1) * n, dy.end());
            std::span<Real> ga, gb;
            if (pa.requires_grad) ga = sink.accum(&pa);
            if (pb.requires_grad) gb = sink.accum(&pb);
            for (int64_t t = L - 1; t >= 0; --t) {
                if (pb.requires_grad)
                    for (int64_t c = 0; c < n; ++c) gb[t * n + c] += g[c];
                if (pa.requires_grad && t > 0)
                    for (int64_t c = 0; c < n; ++c) ga[t * n + c] += g[c] * h[(t - 1) * n + c];
                if (t > 0)
                    for (int64_t c = 0; c < n; ++c)
                        g[c] = dy[(t - 1) * n + c] + pa.value[t * n + c] * g[c];
            }
        });
    auto ov = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (int64_t c = 0; c < n; ++c) ov[c] = bv[c];
    for (int64_t t = 1; t < L; ++t)
        for (int64_t c = 0; c < n; ++c)
            ov[t * n + c] = av[t * n + c] * ov[(t - 1) * n + c] + bv[t * n + c];
    detail::check_finite(*out.node());
    return out;
}

// --- generic dispatch ---------------------------------------------------------------

enum class OpKind {
    matmul,
    add,
    mul,
    sub,
    exp,
    log,
    softplus,
    silu,
    tanh,
    sigmoid,
    softmax_lastdim,
    sum,
    mean,
    slice,
    concat,
    reshape,
    transpose_last2,
    cumulative_scan_linear,
};

struct OpAttrs {
    int64_t axis = 0;
    int64_t begin = 0;
    int64_t len = -1;
    Shape shape{};
};

template <class Real>
TensorT<Real> apply(OpKind op, const std::vector<TensorT<Real>>& in, const OpAttrs& attrs = {}) {
    auto arity = [&](size_t want) {
        if (in.size() != want)
            throw ConfigError("apply: op expects " + std::to_string(want) + " inputs, got " +
                              std::to_string(in.size()));
    };
    switch (op) {
        case OpKind::matmul: arity(2); return matmul(in[0], in[1]);
        case OpKind::add: arity(2); return add(in[0], in[1]);
        case OpKind::mul: arity(2); return mul(in[0], in[1]);
        case OpKind::sub: arity(2); return sub(in[0], in[1]);
        case OpKind::exp: arity(1); return exp(in[0]);
        case OpKind::log: arity(1); return log(in[0]);
        case OpKind::softplus: arity(1); return softplus(in[0]);
        case OpKind::silu: arity(1); return silu(in[0]);
        case OpKind::tanh: arity(1); return tanh(in[0]);
        case OpKind::sigmoid: arity(1); return sigmoid(in[0]);
        case OpKind::softmax_lastdim: arity(1); return softmax_lastdim(in[0]);
        case OpKind::sum: arity(1); return sum(in[0]);
        case OpKind::mean: arity(1); return mean(in[0]);
        case OpKind::slice: arity(1); return slice(in[0], attrs.axis, attrs.begin, attrs.len);
        case OpKind::concat: return concat(in, attrs.axis);
        case OpKind::reshape: arity(1); return reshape(in[0], attrs.shape);
        case OpKind::transpose_last2: arity(1); return transpose_last2(in[0]);
        case OpKind::cumulative_scan_linear: arity(2); return cumulative_scan_linear(in[0], in[1]);
    }
    throw ConfigError("apply: unknown op");
}

}  // namespace ad

#pragma once

// Finite-difference gradient verification. Always runs in double precision:
// the caller builds the computation with TensorT<double> and hands over a
// factory that re-evaluates the loss from the parameters' current values.

#include <functional>
#include <vector>

#include "tensor.hpp"

namespace ad {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t worst_param = 0;
    int64_t worst_coord = -1;
};

// For every coordinate of every parameter: central difference
// (f(x+h) - f(x-h)) / 2h with h scaled to the coordinate's magnitude, compared
// against the recorded-graph gradient as |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult grad_check(const std::function<TensorT<double>()>& make_loss,
                                  const std::vector<TensorT<double>>& params,
                                  double base_step = 1e-5) {
    for (const auto& p : params)
        if (!p.requires_grad()) throw ConfigError("grad_check: parameter does not require grad");

    TensorT<double> loss = make_loss();
    MapGradSink<double> sink;
    backward(loss, sink);
    std::vector<std::vector<double>> analytic(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        auto g = sink.lookup(params[i].node());
        analytic[i].assign(g.begin(), g.end());
        if (analytic[i].empty()) analytic[i].assign(params[i].numel(), 0.0);
    }

    GradCheckResult res;
    NoGrad guard;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        TensorT<double> param = params[pi];  // non-const handle to the same node
        auto vals = param.data();
        for (int64_t j = 0; j < params[pi].numel(); ++j) {
            double orig = vals[j];
            double h = base_step * std::max(1.0, std::abs(orig));
            vals[j] = orig + h;
            double up = make_loss().item();
            vals[j] = orig - h;
            double down = make_loss().item();
            vals[j] = orig;
            double numeric = (up - down) / (2.0 * h);
            double err = std::abs(analytic[pi][j] - numeric) / std::max(1.0, std::abs(numeric));
            if (err > res.max_rel_err) {
                res.max_rel_err = err;
                res.worst_param = pi;
                res.worst_coord = j;
            }
        }
    }
    return res;
}

}  // namespace ad

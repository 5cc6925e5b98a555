#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace ad {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;  // decoupled: p *= (1 - lr*wd) before the Adam delta
};

// Adam with decoupled weight decay. Moment buffers are keyed by parameter
// order, so the same construction order must be used when restoring state.
template <class Real>
class AdamT {
public:
    AdamT(std::vector<TensorT<Real>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), Real(0));
            v_[i].assign(params_[i].numel(), Real(0));
        }
    }

    // Applies one update from the gradients stored on the parameter nodes.
    // Parameters whose grad buffer is empty are treated as zero-gradient.
    void step() {
        ++t_;
        double b1 = cfg_.beta1, b2 = cfg_.beta2;
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto p = params_[i].data();
            auto g = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            Real decay = Real(1) - Real(cfg_.lr) * Real(cfg_.weight_decay);
            for (size_t j = 0; j < p.size(); ++j) {
                Real gj = j < g.size() ? g[j] : Real(0);
                m[j] = Real(b1) * m[j] + (Real(1) - Real(b1)) * gj;
                v[j] = Real(b2) * v[j] + (Real(1) - Real(b2)) * gj * gj;
                Real mhat = m[j] / Real(bc1);
                Real vhat = v[j] / Real(bc2);
                if (cfg_.weight_decay != 0.0f) p[j] *= decay;
                p[j] -= Real(cfg_.lr) * mhat / (std::sqrt(vhat) + Real(cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void set_lr(float lr) { cfg_.lr = lr; }
    float lr() const { return cfg_.lr; }
    int64_t step_count() const { return t_; }
    const std::vector<TensorT<Real>>& params() const { return params_; }

private:
    std::vector<TensorT<Real>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<Real>> m_, v_;
    int64_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace ad

#include "msa2/optim.hpp"

#include <cmath>

namespace msa2 {

AdamW::AdamW(ParamList params, AdamWOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (options_.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape());
        v_.emplace_back(p.var.shape());
    }
}

void AdamW::step() {
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.trainable || !p.var.has_grad()) continue;
        Tensor& w = p.var.mutable_value();
        const Tensor& g = p.var.grad();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const double decay = p.decay ? 1.0 - options_.lr * options_.weight_decay : 1.0;
        for (std::size_t k = 0; k < w.numel(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            w[k] = w[k] * decay - options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

}  // namespace msa2

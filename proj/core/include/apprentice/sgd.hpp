#pragma once

#include <vector>

#include "apprentice/tensor.hpp"

namespace apprentice {

// SGD with classic momentum: v <- momentum*v + g; p <- p - lr*v.
template <typename Real>
struct SgdState {
    Real learning_rate;
    Real momentum = Real(0.9);
    std::vector<std::vector<Real>> velocity; // one buffer per parameter, lazily sized

    SgdState(Real lr, Real mom) : learning_rate(lr), momentum(mom) {
        if (lr <= Real(0)) throw ShapeError(cat("learning rate must be positive, got ", lr));
        if (mom < Real(0) || mom >= Real(1))
            throw ShapeError(cat("momentum must be in [0,1), got ", mom));
    }
};

template <typename Real>
void sgd_step(const std::vector<TensorPtr<Real>>& params, SgdState<Real>& state) {
    if (state.velocity.empty()) state.velocity.resize(params.size());
    if (state.velocity.size() != params.size())
        throw ShapeError(cat("optimizer tracks ", state.velocity.size(), " parameters, got ",
                             params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (!p.requires_grad) continue;
        if (p.grad.size() != p.data.size())
            throw std::runtime_error(cat("missing gradient for trainable parameter ", i,
                                         " of shape ", shape_str(p.shape)));
        auto& v = state.velocity[i];
        if (v.empty()) v.assign(p.numel(), Real(0));
        if (v.size() != p.numel())
            throw ShapeError(cat("velocity buffer length ", v.size(),
                                 " does not match parameter ", shape_str(p.shape)));
        for (std::size_t j = 0; j < p.numel(); ++j) {
            v[j] = state.momentum * v[j] + p.grad[j];
            p.data[j] -= state.learning_rate * v[j];
        }
    }
}

template <typename Real>
void zero_grads(const std::vector<TensorPtr<Real>>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        p->zero_grad();
    }
}

} // namespace apprentice

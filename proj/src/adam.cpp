#include "quantformer/adam.hpp"

#include "quantformer/errors.hpp"

#include <cmath>
#include <string>

namespace quantformer {

AdamState::AdamState(const std::vector<Tensor>& params, AdamHyperParams hyper) : hyper_(hyper) {
    if (!(hyper_.learning_rate >= 0.0)) throw ContractError("Adam learning rate must be >= 0");
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.emplace_back(p.rows(), p.cols());
        v_.emplace_back(p.rows(), p.cols());
    }
}

void AdamState::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw ContractError("adam step: expected " + std::to_string(m_.size()) +
                            " tensors, got " + std::to_string(params.size()) + " params and " +
                            std::to_string(grads.size()) + " grads");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].same_shape(m_[i]) || !grads[i].same_shape(m_[i])) {
            throw ContractError("adam step: shape mismatch at tensor " + std::to_string(i));
        }
    }

    ++step_;
    const double b1 = hyper_.beta1;
    const double b2 = hyper_.beta2;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values();
        auto g = grads[i].values();
        auto m = m_[i].values();
        auto v = v_[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            p[j] -= hyper_.learning_rate * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
        }
    }
}

} // namespace quantformer

#pragma once

#include "quantformer/tensor.hpp"

#include <cstdint>
#include <vector>

namespace quantformer {

struct AdamHyperParams {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators for a fixed list of parameter tensors.
class AdamState {
public:
    AdamState() = default;
    AdamState(const std::vector<Tensor>& params, AdamHyperParams hyper);

    const AdamHyperParams& hyper() const noexcept { return hyper_; }
    std::uint64_t step_count() const noexcept { return step_; }
    const std::vector<Tensor>& first_moment() const noexcept { return m_; }
    const std::vector<Tensor>& second_moment() const noexcept { return v_; }

    /// One bias-corrected Adam update, in place. Throws ContractError when the
    /// parameter and gradient lists do not line up with the accumulators.
    void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);

private:
    AdamHyperParams hyper_;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

} // namespace quantformer

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "stylespace/errors.hpp"
#include "stylespace/tensor.hpp"

namespace stylespace {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::uint64_t step_count = 0;
};

namespace detail {

inline void validate_adam(const AdamConfig& cfg) {
    if (!(cfg.beta1 >= 0 && cfg.beta1 < 1) || !(cfg.beta2 >= 0 && cfg.beta2 < 1)) {
        throw ContractError("adam betas must lie in [0, 1)");
    }
    if (!(cfg.eps > 0)) throw ContractError("adam eps must be positive");
}

}  // namespace detail

// One bias-corrected Adam update of `params` in place. `grads[i]` may be empty,
// which is read as an all-zero gradient.
template <typename T>
void adam_step(std::span<std::span<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               const AdamConfig& cfg) {
    detail::validate_adam(cfg);
    if (params.size() != grads.size()) {
        throw DimensionError("adam_step: " + std::to_string(params.size()) + " params but " +
                             std::to_string(grads.size()) + " gradients");
    }
    if (state.first_moment.empty()) {
        for (auto p : params) {
            state.first_moment.emplace_back(p.size(), T(0));
            state.second_moment.emplace_back(p.size(), T(0));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                             " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].size() != params[i].size() ||
            (!grads[i].empty() && grads[i].size() != params[i].size())) {
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }

    ++state.step_count;
    const double step = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(cfg.beta1, step);
    const double correction2 = 1.0 - std::pow(cfg.beta2, step);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        auto p = params[i];
        auto g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            T gj = g.empty() ? T(0) : g[j];
            m[j] = b1 * m[j] + (T(1) - b1) * gj;
            v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
            double m_hat = static_cast<double>(m[j]) / correction1;
            double v_hat = static_cast<double>(v[j]) / correction2;
            p[j] -= static_cast<T>(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
    }
}

// Convenience: step every tensor using its accumulated gradient.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
    std::vector<std::span<T>> ps;
    std::vector<std::span<const T>> gs;
    for (auto& p : params) {
        ps.push_back(p.mutable_data());
        gs.push_back(p.grad());
    }
    adam_step<T>(std::span<std::span<T>>(ps), std::span<const std::span<const T>>(gs), state, cfg);
}

}  // namespace stylespace

// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "memedial/errors.hpp"
#include "memedial/tensor.hpp"

namespace memedial {

struct AdamOptions {
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction and a linear warmup to a constant learning rate.
class AdamState {
 public:
  AdamState() = default;

  AdamState(std::span<const Parameter* const> params, AdamOptions options) : options_(options) {
    if (options_.base_lr <= 0.0 || options_.warmup_steps < 0) {
      throw SpecError("adam needs base_lr > 0 and warmup_steps >= 0");
    }
    first_.reserve(params.size());
    second_.reserve(params.size());
    for (const Parameter* p : params) {
      first_.push_back(Tensor::zeros_like(p->value));
      second_.push_back(Tensor::zeros_like(p->value));
    }
  }

  std::int64_t step_count() const noexcept { return step_; }
  const AdamOptions& options() const noexcept { return options_; }

  /// Learning rate applied at (1-based) step t.
  double learning_rate_at(std::int64_t t) const {
    if (options_.warmup_steps == 0) return options_.base_lr;
    return options_.base_lr * std::min(1.0, static_cast<double>(t) / static_cast<double>(options_.warmup_steps));
  }

  /// Applies one update; returns the learning rate used.
  double step(std::span<Parameter* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size() || params.size() != first_.size()) {
      throw ContractError("adam step: " + std::to_string(params.size()) + " parameters, " +
                          std::to_string(grads.size()) + " gradients, state for " + std::to_string(first_.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].shape() != params[i]->value.shape()) {
        throw ContractError("adam step: gradient " + shape_string(grads[i].shape()) + " for parameter " +
                            params[i]->name + " " + shape_string(params[i]->value.shape()));
      }
      if (!grads[i].all_finite()) throw NumericError("non-finite gradient for parameter " + params[i]->name);
    }
    ++step_;
    const double lr = learning_rate_at(step_);
    const double t = static_cast<double>(step_);
    const double correction1 = 1.0 - std::pow(options_.beta1, t);
    const double correction2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto value = params[i]->value.data();
      auto g = grads[i].data();
      auto m = first_[i].data();
      auto v = second_[i].data();
      for (std::size_t j = 0; j < value.size(); ++j) {
        m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
        v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
        const double m_hat = m[j] / correction1;
        const double v_hat = v[j] / correction2;
        value[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      }
    }
    return lr;
  }

  const std::vector<Tensor>& first_moments() const noexcept { return first_; }
  const std::vector<Tensor>& second_moments() const noexcept { return second_; }

 private:
  AdamOptions options_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::int64_t step_ = 0;
};

}  // namespace memedial

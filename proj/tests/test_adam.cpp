// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "memedial/adam.hpp"

namespace memedial {
namespace {

struct Scalar {
  Parameter p{"x", Tensor::scalar(1.0)};
  std::vector<Parameter*> params{&p};
  std::vector<const Parameter*> cparams{&p};
};

TEST(Adam, TwoStepTraceMatchesHandComputation) {
  // lr(1) = 0.05, lr(2) = 0.1; with a constant gradient both bias-corrected
  // moments equal 1, so each step moves by lr / (1 + eps).
  Scalar s;
  AdamState adam(s.cparams, {.base_lr = 0.1, .warmup_steps = 2});
  const std::vector<Tensor> grads = {Tensor::scalar(1.0)};
  EXPECT_DOUBLE_EQ(adam.step(s.params, grads), 0.05);
  EXPECT_NEAR(s.p.value.item(), 0.9500000005, 1e-12);
  EXPECT_DOUBLE_EQ(adam.step(s.params, grads), 0.1);
  EXPECT_NEAR(s.p.value.item(), 0.8500000015, 1e-12);
  EXPECT_NEAR(adam.first_moments()[0].item(), 0.19, 1e-15);
  EXPECT_NEAR(adam.second_moments()[0].item(), 0.001999, 1e-15);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Scalar s;
  AdamState adam(s.cparams, {});
  const std::vector<Tensor> grads = {Tensor::scalar(0.0)};
  for (int i = 0; i < 5; ++i) adam.step(s.params, grads);
  EXPECT_EQ(s.p.value.item(), 1.0);
}

TEST(Adam, WarmupIsLinearThenConstant) {
  Scalar s;
  AdamState adam(s.cparams, {.base_lr = 1e-3, .warmup_steps = 200});
  EXPECT_DOUBLE_EQ(adam.learning_rate_at(100), 5e-4);
  EXPECT_DOUBLE_EQ(adam.learning_rate_at(200), 1e-3);
  EXPECT_DOUBLE_EQ(adam.learning_rate_at(5000), 1e-3);
  AdamState no_warmup(s.cparams, {.base_lr = 2e-3, .warmup_steps = 0});
  EXPECT_DOUBLE_EQ(no_warmup.learning_rate_at(1), 2e-3);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Scalar s;
  AdamState adam(s.cparams, {});
  const std::vector<Tensor> grads = {Tensor::scalar(std::numeric_limits<double>::quiet_NaN())};
  try {
    adam.step(s.params, grads);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
  }
  EXPECT_EQ(adam.step_count(), 0);
  EXPECT_EQ(s.p.value.item(), 1.0);
}

TEST(Adam, MinimizesQuadratic) {
  Parameter p{"w", Tensor::matrix(1, 3, {3.0, -2.0, 0.5})};
  std::vector<Parameter*> params{&p};
  std::vector<const Parameter*> cparams{&p};
  AdamState adam(cparams, {.base_lr = 0.05, .warmup_steps = 10});
  for (int i = 0; i < 2000; ++i) {
    Graph g;
    Var w = g.param(p);
    g.backward(g.sum(g.matmul(w, w, true)));
    std::vector<Tensor> grads = {*g.parameter_gradients().front().second};
    adam.step(params, grads);
  }
  for (double v : p.value.data()) EXPECT_NEAR(v, 0.0, 1e-2);
}

}  // namespace
}  // namespace memedial

// SPDX-License-Identifier: Apache-2.0
//
// Small model builders shared by the test executables.
#pragma once

#include <random>
#include <string>

#include "dsgd/model.hpp"

namespace dsgd::testing {

inline Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

/// F(z) over z = s + theta in one dimension, box [-3, 3].
inline ModelSpec shift_model(const std::string& text, std::string name = "shift") {
  return ModelSpec(ModelDefinition{
      .name = std::move(name),
      .expr = parse(text),
      .transform = Transform{{CoordinateRule::location_scale(LocationRule::param(0), ScaleRule::constant(1.0))}},
      .base = Distribution::std_normal(1),
      .box = ParamBox::uniform(1, -3.0, 3.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = false,
      .description = "",
  });
}

/// n coordinates, each x_j = theta_{2j} + sigma_j * s_j with a randomly chosen scale rule.
inline ModelSpec random_location_scale(const Expr& e, std::size_t n, std::mt19937_64& rng, bool entropy) {
  Transform t;
  std::uniform_int_distribution<int> pick(0, 2);
  for (std::size_t j = 0; j < n; ++j) {
    ScaleRule sc = ScaleRule::constant(0.7);
    switch (pick(rng)) {
      case 0: sc = ScaleRule::exp(2 * j + 1); break;
      case 1: sc = ScaleRule::softplus(2 * j + 1); break;
      default: break;
    }
    t.coords.push_back(CoordinateRule::location_scale(LocationRule::param(2 * j), sc));
  }
  return ModelSpec(ModelDefinition{
      .name = "random",
      .expr = e,
      .transform = std::move(t),
      .base = Distribution::std_normal(n),
      .box = ParamBox::uniform(2 * n, -2.0, 2.0),
      .theta0 = std::nullopt,
      .sense = Sense::Maximize,
      .include_entropy = entropy,
      .description = "",
  });
}

}  // namespace dsgd::testing

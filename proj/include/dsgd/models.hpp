// SPDX-License-Identifier: Apache-2.0
//
// Built-in benchmark problems and closed-form references for the
// one-dimensional example f(z) = -0.5 z^2 + [z >= 0], z = s + theta.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dsgd/model.hpp"
#include "dsgd/smoothing.hpp"

namespace dsgd {

ModelSpec model_example11();
/// if z1 { 0 } else { 1 }
ModelSpec model_step();
/// Step guard that itself depends on two steps (nesting depth 2), z = s + theta.
ModelSpec model_nested_l2();
ModelSpec model_random_walk(std::size_t steps = 16);
ModelSpec model_temperature_lite(std::size_t horizon = 20);
ModelSpec model_cheating_lite(std::size_t students = 30);
ModelSpec model_textmsg(std::size_t days = 37);
ModelSpec model_xornet_lite();

/// Closed-form d/dtheta E[f(s + theta)] = -theta + N(theta | 0, 1).
double oracle_true_gradient_example11(double theta);
/// Root of the closed-form gradient on [0, 1] by bisection (tolerance 1e-10).
double oracle_stationary_example11();
/// -theta + int N(s) sig'_eta(s + theta) ds.
double oracle_smoothed_gradient_example11(double theta, const Accuracy& acc);
/// -0.5 (1 + theta^2) + E[sig_eta(s + theta)] with Gauss-Hermite.
double oracle_smoothed_objective_example11(double theta, const Accuracy& acc);

struct ModelInfo {
  std::string name;
  std::string size_parameter;  // empty when the model has no size knob
  std::size_t default_size;
  std::string description;
};

std::vector<ModelInfo> list_models();

/// "name" or "name:size", e.g. "random_walk:8". Throws InvalidArgument("unknown model ...").
ModelSpec make_model(std::string_view spec);

struct DataTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

/// Synthetic observations used by the models, generated from fixed ground truth
/// with the counter-based generator.
DataTable textmsg_data(std::size_t days = 37);
DataTable temperature_data(std::size_t horizon = 20);
DataTable cheating_data(std::size_t students = 30);
DataTable xor_data();

std::string to_csv(const DataTable& t);

}  // namespace dsgd

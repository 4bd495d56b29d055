/**
 * Copyright 2026 The subflot Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Layer-wise neuron alignment between models of different widths.
//
// otp_personalize maps the wide global model down onto a client's (narrower)
// reference model and blends the two; ota_align_up lifts a trained client
// model back into the global coordinates. Both walk the layers in order,
// remapping each layer's inputs with the previous layer's plan before costing
// its output neurons. The output layer is class-indexed and always aligned by
// identity.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "subflot/nn.hpp"
#include "subflot/ot.hpp"

namespace subflot {

struct FusionConfig {
  double alpha = 0.5;
  OtConfig ot;

  void validate() const;
};

struct AlignmentResult {
  LayerStack model;
  std::vector<TransportPlan> plans;  // one per layer, source width x target width
  std::vector<double> per_layer_objective;
};

/// Aligns `global_model` onto `historical` and returns
/// historical + alpha * (aligned - historical), with historical's dims.
AlignmentResult otp_personalize(const LayerStack& global_model, const LayerStack& historical,
                                const FusionConfig& cfg);

/// Lifts `client_model` into `global_ref`'s dims. Each global neuron becomes a
/// convex combination of the client neurons the plan sends to it.
AlignmentResult ota_align_up(const LayerStack& client_model, const LayerStack& global_ref,
                             const OtConfig& cfg);

struct WeightedModel {
  std::reference_wrapper<const LayerStack> model;
  double weight;
};

/// Parameter-wise sum of weight * model, accumulated in input order.
LayerStack aggregate(std::span<const WeightedModel> models);

enum class ExtractStrategy { fixed_position, magnitude, random };

/// Kept neuron indices (ascending) for each hidden layer.
using NeuronIndexMap = std::vector<std::vector<std::size_t>>;

/// Chooses which hidden neurons of `global_model` survive at `hidden_widths`.
/// fixed_position keeps the first k; magnitude the k rows with the largest L2
/// norm over incoming weights and bias; random a seeded uniform sample.
NeuronIndexMap select_neurons(const LayerStack& global_model,
                              std::span<const std::size_t> hidden_widths,
                              ExtractStrategy strategy, std::uint64_t seed);

/// Restricts every layer to the kept rows and the kept columns of the layer below.
LayerStack extract_submodel(const LayerStack& global_model, const NeuronIndexMap& kept);

LayerStack baseline_extract(const LayerStack& global_model,
                            std::span<const std::size_t> hidden_widths, ExtractStrategy strategy,
                            std::uint64_t seed);

/// Throws ShapeError unless `narrow` shares input/output dims with `wide` and
/// no hidden layer of `narrow` is wider.
void check_fits_within(const LayerStack& narrow, const LayerStack& wide);

}  // namespace subflot

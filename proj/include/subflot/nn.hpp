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

// Fully connected ReLU classifiers with hand-written backpropagation.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "subflot/linalg.hpp"

namespace subflot {

/// weight is (out x in); bias has length out.
struct Layer {
  Matrix weight;
  Vector bias;

  bool operator==(const Layer&) const = default;
};

/// An MLP: ReLU after every layer except the last. Also used as the container
/// for gradients, which share the parameter shapes.
struct LayerStack {
  std::vector<Layer> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  /// [input, hidden..., output]
  std::vector<std::size_t> dims() const;
  std::vector<std::size_t> hidden_widths() const;
  std::size_t parameter_count() const;

  /// Throws ShapeError unless adjacent layers chain.
  void validate() const;

  bool operator==(const LayerStack&) const = default;
};

struct Batch {
  Matrix features;                  // B x d_in
  std::vector<std::size_t> labels;  // length B
};

/// Pruned hidden widths: max(1, round((1 - rate) * base)).
struct WidthSchedule {
  std::vector<std::size_t> base_widths;
  double rate = 0.0;
};

std::vector<std::size_t> make_submodel_shape(const WidthSchedule& schedule);

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), biases uniform in
/// +-1/sqrt(fan_in). dims = [input, hidden..., output].
LayerStack init_mlp(std::span<const std::size_t> dims, std::uint64_t seed);

LayerStack zeros_like(const LayerStack& model);

/// Same number of layers and identical matrix/bias shapes.
bool same_shape(const LayerStack& a, const LayerStack& b);

/// Logits, one row per sample.
Matrix forward(const LayerStack& model, const Matrix& features);

struct LossAndGrads {
  double loss = 0.0;
  LayerStack grads;
};

/// Mean softmax cross-entropy over the batch and its gradient.
LossAndGrads ce_loss_and_grads(const LayerStack& model, const Batch& batch);

/// Mean cross-entropy only.
double ce_loss(const LayerStack& model, const Batch& batch);

LayerStack sgd_step(const LayerStack& model, const LayerStack& grads, double lr);

/// a += scale * b, parameter-wise.
void add_scaled(LayerStack& a, const LayerStack& b, double scale);

/// Squared L2 distance over all weights and biases. Where shapes differ the
/// parameters missing from the smaller operand count as zero.
double sq_norm_diff(const LayerStack& a, const LayerStack& b);

/// Squared L2 norm of all parameters.
double sq_norm(const LayerStack& model);

/// Argmax accuracy; ties go to the lowest class index.
double evaluate(const LayerStack& model, const Batch& data);
std::vector<std::size_t> predict(const LayerStack& model, const Matrix& features);

Batch gather(const Batch& data, std::span<const std::size_t> indices);

/// Per-epoch Fisher-Yates orders drawn from a single generator seeded with `seed`.
class EpochShuffler {
 public:
  EpochShuffler(std::size_t n, std::uint64_t seed);
  const std::vector<std::size_t>& next();

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

/// Plain minibatch SGD with no regularization.
LayerStack train_sgd(LayerStack model, const Batch& data, std::size_t epochs, double lr,
                     std::size_t batch_size, std::uint64_t seed);

}  // namespace subflot

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

#include "subflot/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "subflot/error.hpp"

namespace subflot {

std::size_t LayerStack::input_dim() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

std::size_t LayerStack::output_dim() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

std::vector<std::size_t> LayerStack::dims() const {
  std::vector<std::size_t> out;
  if (layers.empty()) return out;
  out.push_back(input_dim());
  for (const auto& layer : layers) out.push_back(layer.weight.rows());
  return out;
}

std::vector<std::size_t> LayerStack::hidden_widths() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) out.push_back(layers[l].weight.rows());
  return out;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

void LayerStack::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw ShapeError(fmt::format("layer {}: bias length {} but weight {}", l, layer.bias.size(),
                                   shape_string(layer.weight)));
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw ShapeError(fmt::format("layer {}: weight {} does not chain with previous {}", l,
                                   shape_string(layer.weight),
                                   shape_string(layers[l - 1].weight)));
    }
  }
}

std::vector<std::size_t> make_submodel_shape(const WidthSchedule& schedule) {
  std::vector<std::size_t> out;
  out.reserve(schedule.base_widths.size());
  for (std::size_t base : schedule.base_widths) {
    const long kept = std::lround((1.0 - schedule.rate) * static_cast<double>(base));
    out.push_back(static_cast<std::size_t>(std::max(1L, kept)));
  }
  return out;
}

LayerStack init_mlp(std::span<const std::size_t> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ShapeError("an MLP needs at least input and output dims");
  std::mt19937_64 rng(seed);
  LayerStack model;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    const std::size_t fan_in = dims[l - 1];
    const std::size_t fan_out = dims[l];
    if (fan_in == 0 || fan_out == 0) throw ShapeError("layer dims must be positive");
    const double w_bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double b_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> w_dist(-w_bound, w_bound);
    std::uniform_real_distribution<double> b_dist(-b_bound, b_bound);
    Layer layer{Matrix(fan_out, fan_in), Vector(fan_out)};
    for (double& w : layer.weight.data()) w = w_dist(rng);
    for (double& b : layer.bias) b = b_dist(rng);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

LayerStack zeros_like(const LayerStack& model) {
  LayerStack out;
  out.layers.reserve(model.layers.size());
  for (const auto& layer : model.layers) {
    out.layers.push_back(
        {Matrix(layer.weight.rows(), layer.weight.cols()), Vector(layer.bias.size(), 0.0)});
  }
  return out;
}

bool same_shape(const LayerStack& a, const LayerStack& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
        x.bias.size() != y.bias.size()) {
      return false;
    }
  }
  return true;
}

namespace {

void check_input(const LayerStack& model, const Matrix& features) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  if (features.cols() != model.input_dim()) {
    throw ShapeError(fmt::format("features {} do not match model input dim {}",
                                 shape_string(features), model.input_dim()));
  }
}

void check_batch(const LayerStack& model, const Batch& batch) {
  check_input(model, batch.features);
  if (batch.labels.size() != batch.features.rows()) {
    throw ShapeError(fmt::format("{} labels for {} samples", batch.labels.size(),
                                 batch.features.rows()));
  }
  if (batch.labels.empty()) throw ShapeError("empty batch");
  for (std::size_t y : batch.labels) {
    if (y >= model.output_dim()) {
      throw ShapeError(fmt::format("label {} out of range for {} classes", y, model.output_dim()));
    }
  }
}

Matrix affine(const Matrix& x, const Layer& layer) {
  Matrix z = matmul_bt(x, layer.weight);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
  }
  return z;
}

void relu_inplace(Matrix& m) {
  for (double& x : m.data()) x = x > 0.0 ? x : 0.0;
}

// log(sum(exp(row))) with max subtraction.
double row_log_normalizer(std::span<const double> row) {
  const double hi = *std::max_element(row.begin(), row.end());
  double acc = 0.0;
  for (double x : row) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

}  // namespace

Matrix forward(const LayerStack& model, const Matrix& features) {
  check_input(model, features);
  Matrix x = features;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    x = affine(x, model.layers[l]);
    if (l + 1 < model.layers.size()) relu_inplace(x);
  }
  return x;
}

LossAndGrads ce_loss_and_grads(const LayerStack& model, const Batch& batch) {
  check_batch(model, batch);
  const std::size_t depth = model.layers.size();
  const std::size_t n = batch.features.rows();
  const double inv_n = 1.0 / static_cast<double>(n);

  // activations[l] is the input to layer l; activations[depth] holds logits.
  std::vector<Matrix> activations;
  activations.reserve(depth + 1);
  activations.push_back(batch.features);
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix z = affine(activations.back(), model.layers[l]);
    if (l + 1 < depth) relu_inplace(z);
    activations.push_back(std::move(z));
  }

  // dL/dlogits = (softmax - onehot) / n
  Matrix delta = activations.back();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = delta.row(i);
    const double log_z = row_log_normalizer(row);
    loss += log_z - row[batch.labels[i]];
    for (double& x : row) x = std::exp(x - log_z) * inv_n;
    row[batch.labels[i]] -= inv_n;
  }
  loss *= inv_n;

  LossAndGrads out{loss, zeros_like(model)};
  for (std::size_t l = depth; l-- > 0;) {
    auto& grad = out.grads.layers[l];
    grad.weight = matmul_at(delta, activations[l]);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = delta.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) grad.bias[j] += row[j];
    }
    if (l == 0) break;
    Matrix upstream = matmul(delta, model.layers[l].weight);
    // ReLU gate: activations[l] is post-ReLU, positive exactly where the unit was active.
    const auto gate = activations[l].data();
    auto up = upstream.data();
    for (std::size_t k = 0; k < up.size(); ++k) {
      if (!(gate[k] > 0.0)) up[k] = 0.0;
    }
    delta = std::move(upstream);
  }
  return out;
}

double ce_loss(const LayerStack& model, const Batch& batch) {
  check_batch(model, batch);
  const Matrix logits = forward(model, batch.features);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    loss += row_log_normalizer(row) - row[batch.labels[i]];
  }
  return loss / static_cast<double>(logits.rows());
}

LayerStack sgd_step(const LayerStack& model, const LayerStack& grads, double lr) {
  if (!(lr > 0.0)) throw TrainingError("learning rate must be > 0");
  if (!same_shape(model, grads)) throw ShapeError("sgd_step: gradient shape does not match model");
  LayerStack out = model;
  add_scaled(out, grads, -lr);
  return out;
}

void add_scaled(LayerStack& a, const LayerStack& b, double scale) {
  if (!same_shape(a, b)) throw ShapeError("add_scaled: shape mismatch");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto wa = a.layers[l].weight.data();
    const auto wb = b.layers[l].weight.data();
    for (std::size_t k = 0; k < wa.size(); ++k) wa[k] += scale * wb[k];
    auto& ba = a.layers[l].bias;
    const auto& bb = b.layers[l].bias;
    for (std::size_t k = 0; k < ba.size(); ++k) ba[k] += scale * bb[k];
  }
}

double sq_norm_diff(const LayerStack& a, const LayerStack& b) {
  if (a.layers.size() != b.layers.size()) {
    throw ShapeError(fmt::format("sq_norm_diff: {} layers vs {}", a.layers.size(),
                                 b.layers.size()));
  }
  double acc = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const Matrix& wa = a.layers[l].weight;
    const Matrix& wb = b.layers[l].weight;
    const std::size_t rows = std::max(wa.rows(), wb.rows());
    const std::size_t cols = std::max(wa.cols(), wb.cols());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double x = (i < wa.rows() && j < wa.cols()) ? wa(i, j) : 0.0;
        const double y = (i < wb.rows() && j < wb.cols()) ? wb(i, j) : 0.0;
        acc += (x - y) * (x - y);
      }
    }
    const Vector& ba = a.layers[l].bias;
    const Vector& bb = b.layers[l].bias;
    for (std::size_t i = 0; i < std::max(ba.size(), bb.size()); ++i) {
      const double x = i < ba.size() ? ba[i] : 0.0;
      const double y = i < bb.size() ? bb[i] : 0.0;
      acc += (x - y) * (x - y);
    }
  }
  return acc;
}

double sq_norm(const LayerStack& model) {
  double acc = 0.0;
  for (const auto& layer : model.layers) {
    for (double w : layer.weight.data()) acc += w * w;
    for (double b : layer.bias) acc += b * b;
  }
  return acc;
}

std::vector<std::size_t> predict(const LayerStack& model, const Matrix& features) {
  const Matrix logits = forward(model, features);
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    // max_element returns the first maximum, which is the lowest class index.
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double evaluate(const LayerStack& model, const Batch& data) {
  if (data.labels.empty()) throw ShapeError("cannot evaluate on empty data");
  if (data.labels.size() != data.features.rows()) {
    throw ShapeError("label count does not match sample count");
  }
  const auto predicted = predict(model, data.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

Batch gather(const Batch& data, std::span<const std::size_t> indices) {
  Batch out{Matrix(indices.size(), data.features.cols()), {}};
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = data.features.row(indices[k]);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels.push_back(data.labels[indices[k]]);
  }
  return out;
}

EpochShuffler::EpochShuffler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

const std::vector<std::size_t>& EpochShuffler::next() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order_[i - 1], order_[pick(rng_)]);
  }
  return order_;
}

LayerStack train_sgd(LayerStack model, const Batch& data, std::size_t epochs, double lr,
                     std::size_t batch_size, std::uint64_t seed) {
  if (data.labels.empty()) throw TrainingError("empty training set");
  if (batch_size == 0) throw TrainingError("batch size must be >= 1");
  EpochShuffler shuffler(data.labels.size(), seed);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto& order = shuffler.next();
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const Batch batch = gather(data, std::span(order).subspan(start, stop - start));
      const auto step = ce_loss_and_grads(model, batch);
      model = sgd_step(model, step.grads, lr);
    }
  }
  return model;
}

}  // namespace subflot

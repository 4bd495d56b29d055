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

#include "subflot/sar.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include <fmt/format.h>

#include "subflot/error.hpp"

namespace subflot {

void SarConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw TrainingError("sar.lambda must be >= 0");
  if (local_epochs < 1) throw TrainingError("sar.local_epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw TrainingError("sar.lr must be > 0");
  if (batch_size < 1) throw TrainingError("sar.batch_size must be >= 1");
}

double sar_loss(const LayerStack& model, const LayerStack& anchor, double rho) {
  if (!same_shape(model, anchor)) throw ShapeError("sar_loss: model and anchor shapes differ");
  return rho * sq_norm_diff(model, anchor);
}

namespace {

// grads += coeff * (model - anchor)
void add_proximal_grad(LayerStack& grads, const LayerStack& model, const LayerStack& anchor,
                       double coeff) {
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    auto g = grads.layers[l].weight.data();
    const auto w = model.layers[l].weight.data();
    const auto a = anchor.layers[l].weight.data();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += coeff * (w[k] - a[k]);
    auto& gb = grads.layers[l].bias;
    const auto& wb = model.layers[l].bias;
    const auto& ab = anchor.layers[l].bias;
    for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += coeff * (wb[k] - ab[k]);
  }
}

}  // namespace

LossAndGrads sar_objective(const LayerStack& model, const LayerStack& anchor, const Batch& batch,
                           double rho, double lambda) {
  if (!same_shape(model, anchor)) throw ShapeError("sar_objective: model and anchor shapes differ");
  auto out = ce_loss_and_grads(model, batch);
  const double strength = lambda * rho;
  if (strength != 0.0) {
    out.loss += strength * sq_norm_diff(model, anchor);
    add_proximal_grad(out.grads, model, anchor, 2.0 * strength);
  }
  return out;
}

LocalTrainReport local_train(const LayerStack& anchor, const Batch& data, double rho,
                             const SarConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (data.labels.empty()) throw TrainingError("local_train: empty dataset");
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw TrainingError(fmt::format("pruning rate {} outside [0, 1)", rho));
  }
  const double strength = cfg.lambda * rho;

  LocalTrainReport report;
  report.final_model = anchor;
  LayerStack& model = report.final_model;
  double grad_sq_total = 0.0;

  EpochShuffler shuffler(data.labels.size(), seed);
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto& order = shuffler.next();
    double ce_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const Batch batch = gather(data, std::span(order).subspan(start, stop - start));
      auto step = ce_loss_and_grads(model, batch);
      if (!std::isfinite(step.loss)) {
        throw TrainingError(
            fmt::format("non-finite loss at epoch {} batch {}", epoch, batches));
      }
      ce_total += step.loss;
      grad_sq_total += sq_norm(step.grads);
      if (strength != 0.0) add_proximal_grad(step.grads, model, anchor, 2.0 * strength);
      model = sgd_step(model, step.grads, cfg.lr);
      ++batches;
      ++report.steps;
    }
    report.loss_trace.push_back(
        {ce_total / static_cast<double>(batches), sar_loss(model, anchor, rho)});
  }
  report.drift_sq = sq_norm_diff(model, anchor);
  report.mean_grad_sq = grad_sq_total / static_cast<double>(report.steps);
  if (!std::isfinite(report.drift_sq)) throw TrainingError("local training diverged");
  return report;
}

}  // namespace subflot

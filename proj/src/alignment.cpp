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

#include "subflot/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "subflot/error.hpp"

namespace subflot {

void FusionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ShapeError(fmt::format("fusion alpha {} outside [0, 1]", alpha));
  }
  ot.validate();
}

void check_fits_within(const LayerStack& narrow, const LayerStack& wide) {
  narrow.validate();
  wide.validate();
  if (narrow.depth() != wide.depth()) {
    throw ShapeError(fmt::format("models have {} and {} layers", narrow.depth(), wide.depth()));
  }
  if (narrow.input_dim() != wide.input_dim() || narrow.output_dim() != wide.output_dim()) {
    throw ShapeError("models disagree on input dim or class count");
  }
  const auto nw = narrow.hidden_widths();
  const auto ww = wide.hidden_widths();
  for (std::size_t l = 0; l < nw.size(); ++l) {
    if (nw[l] > ww[l]) {
      throw ShapeError(
          fmt::format("hidden layer {} has width {} which exceeds {}", l, nw[l], ww[l]));
    }
  }
}

namespace {

TransportPlan identity_plan(std::size_t n) {
  TransportPlan plan;
  plan.plan = Matrix::identity(n);
  for (double& x : plan.plan.data()) x /= static_cast<double>(n);
  plan.row_marginal = uniform_marginal(n);
  plan.col_marginal = uniform_marginal(n);
  return plan;
}

struct LayerMatch {
  TransportPlan plan;
  double objective;
};

// Rows are neurons (incoming weights with the bias appended); uniform marginals.
LayerMatch match_layer(const Matrix& source_rows, const Matrix& target_rows,
                       const OtConfig& cfg, std::size_t layer) {
  const Matrix cost = pairwise_euclidean(source_rows, target_rows);
  try {
    auto plan =
        solve_ot(cost, uniform_marginal(cost.rows()), uniform_marginal(cost.cols()), cfg);
    const double objective = transport_cost(cost, plan);
    return {std::move(plan), objective};
  } catch (const OtError& e) {
    throw OtError(fmt::format("layer {}: {}", layer, e.what()));
  }
}

}  // namespace

AlignmentResult otp_personalize(const LayerStack& global_model, const LayerStack& historical,
                                const FusionConfig& cfg) {
  cfg.validate();
  check_fits_within(historical, global_model);
  const std::size_t depth = global_model.depth();

  AlignmentResult out;
  out.model = historical;
  Matrix input_map = Matrix::identity(global_model.input_dim());
  for (std::size_t l = 0; l < depth; ++l) {
    const Layer& g = global_model.layers[l];
    const Layer& h = historical.layers[l];
    // Global weights expressed over the client's input neurons.
    const Matrix remapped = matmul(g.weight, input_map);

    Matrix aligned_w;
    Vector aligned_b;
    if (l + 1 == depth) {
      out.plans.push_back(identity_plan(g.weight.rows()));
      out.per_layer_objective.push_back(0.0);
      aligned_w = remapped;
      aligned_b = g.bias;
      input_map = Matrix::identity(g.weight.rows());
    } else {
      auto match = match_layer(append_column(remapped, g.bias),
                               append_column(h.weight, h.bias), cfg.ot, l);
      const Matrix normalized = column_normalize(match.plan);
      aligned_w = matmul_at(normalized, remapped);
      aligned_b = matvec_t(normalized, g.bias);
      out.per_layer_objective.push_back(match.objective);
      out.plans.push_back(std::move(match.plan));
      input_map = normalized;
    }

    Layer& fused = out.model.layers[l];
    auto fw = fused.weight.data();
    const auto aw = aligned_w.data();
    for (std::size_t k = 0; k < fw.size(); ++k) fw[k] += cfg.alpha * (aw[k] - fw[k]);
    for (std::size_t k = 0; k < fused.bias.size(); ++k) {
      fused.bias[k] += cfg.alpha * (aligned_b[k] - fused.bias[k]);
    }
  }
  return out;
}

AlignmentResult ota_align_up(const LayerStack& client_model, const LayerStack& global_ref,
                             const OtConfig& cfg) {
  cfg.validate();
  check_fits_within(client_model, global_ref);
  const std::size_t depth = global_ref.depth();

  AlignmentResult out;
  // Global neurons of the previous layer as convex combinations of client
  // neurons; columns sum to 1.
  Matrix input_map = Matrix::identity(global_ref.input_dim());
  for (std::size_t l = 0; l < depth; ++l) {
    const Layer& c = client_model.layers[l];
    const Layer& g = global_ref.layers[l];
    const Matrix remapped = matmul(c.weight, input_map);

    if (l + 1 == depth) {
      out.plans.push_back(identity_plan(c.weight.rows()));
      out.per_layer_objective.push_back(0.0);
      out.model.layers.push_back({remapped, c.bias});
      break;
    }
    auto match =
        match_layer(append_column(remapped, c.bias), append_column(g.weight, g.bias), cfg, l);
    const Matrix per_target = column_normalize(match.plan);
    out.model.layers.push_back({matmul_at(per_target, remapped), matvec_t(per_target, c.bias)});
    out.per_layer_objective.push_back(match.objective);
    input_map = std::move(per_target);
    out.plans.push_back(std::move(match.plan));
  }
  return out;
}

LayerStack aggregate(std::span<const WeightedModel> models) {
  if (models.empty()) throw ShapeError("aggregate needs at least one model");
  double total = 0.0;
  for (const auto& m : models) total += m.weight;
  if (std::abs(total - 1.0) > 1e-9) {
    throw ShapeError(fmt::format("aggregation weights sum to {}, expected 1", total));
  }
  LayerStack out = zeros_like(models.front().model.get());
  for (const auto& m : models) {
    if (!same_shape(out, m.model.get())) throw ShapeError("aggregate: model dims differ");
    add_scaled(out, m.model.get(), m.weight);
  }
  return out;
}

NeuronIndexMap select_neurons(const LayerStack& global_model,
                              std::span<const std::size_t> hidden_widths,
                              ExtractStrategy strategy, std::uint64_t seed) {
  global_model.validate();
  const auto full = global_model.hidden_widths();
  if (hidden_widths.size() != full.size()) {
    throw ShapeError(fmt::format("requested {} hidden layers, model has {}",
                                 hidden_widths.size(), full.size()));
  }
  std::mt19937_64 rng(seed);
  NeuronIndexMap kept;
  for (std::size_t l = 0; l < full.size(); ++l) {
    const std::size_t k = hidden_widths[l];
    if (k == 0 || k > full[l]) {
      throw ShapeError(fmt::format("hidden layer {}: cannot keep {} of {} neurons", l, k, full[l]));
    }
    std::vector<std::size_t> idx(full[l]);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    switch (strategy) {
      case ExtractStrategy::fixed_position:
        break;
      case ExtractStrategy::magnitude: {
        const Layer& layer = global_model.layers[l];
        std::vector<double> norm(full[l]);
        for (std::size_t r = 0; r < full[l]; ++r) {
          double acc = layer.bias[r] * layer.bias[r];
          for (double w : layer.weight.row(r)) acc += w * w;
          norm[r] = acc;
        }
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return norm[a] > norm[b]; });
        break;
      }
      case ExtractStrategy::random:
        for (std::size_t i = idx.size(); i > 1; --i) {
          std::uniform_int_distribution<std::size_t> pick(0, i - 1);
          std::swap(idx[i - 1], idx[pick(rng)]);
        }
        break;
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    kept.push_back(std::move(idx));
  }
  return kept;
}

LayerStack extract_submodel(const LayerStack& global_model, const NeuronIndexMap& kept) {
  global_model.validate();
  const std::size_t depth = global_model.depth();
  if (kept.size() + 1 != depth) throw ShapeError("index map does not cover every hidden layer");
  LayerStack out;
  std::vector<std::size_t> cols(global_model.input_dim());
  std::iota(cols.begin(), cols.end(), std::size_t{0});
  for (std::size_t l = 0; l < depth; ++l) {
    const Layer& src = global_model.layers[l];
    std::vector<std::size_t> rows;
    if (l + 1 < depth) {
      rows = kept[l];
    } else {
      rows.resize(src.weight.rows());
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    Layer layer{Matrix(rows.size(), cols.size()), Vector(rows.size())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= src.weight.rows()) throw ShapeError("kept index out of range");
      for (std::size_t j = 0; j < cols.size(); ++j) layer.weight(i, j) = src.weight(rows[i], cols[j]);
      layer.bias[i] = src.bias[rows[i]];
    }
    out.layers.push_back(std::move(layer));
    cols = std::move(rows);
  }
  return out;
}

LayerStack baseline_extract(const LayerStack& global_model,
                            std::span<const std::size_t> hidden_widths, ExtractStrategy strategy,
                            std::uint64_t seed) {
  return extract_submodel(global_model,
                          select_neurons(global_model, hidden_widths, strategy, seed));
}

}  // namespace subflot

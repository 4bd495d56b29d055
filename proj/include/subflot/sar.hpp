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

// Local client training on cross-entropy plus a rate-scaled proximal term
// lambda * rho * ||W - anchor||^2 that ties the client to the model it was
// dispatched.

#include <cstdint>
#include <vector>

#include "subflot/nn.hpp"

namespace subflot {

struct SarConfig {
  double lambda = 1.0;
  std::size_t local_epochs = 5;
  double lr = 0.001;
  std::size_t batch_size = 256;

  void validate() const;
};

struct EpochLoss {
  double ce = 0.0;   // mean minibatch cross-entropy over the epoch
  double sar = 0.0;  // rho * ||W - anchor||^2 at the end of the epoch
};

struct LocalTrainReport {
  LayerStack final_model;
  double drift_sq = 0.0;  // ||W - anchor||^2 after the last step
  std::vector<EpochLoss> loss_trace;
  std::size_t steps = 0;
  // Mean squared norm of the stochastic cross-entropy gradients seen.
  double mean_grad_sq = 0.0;
};

/// rho * ||model - anchor||^2
double sar_loss(const LayerStack& model, const LayerStack& anchor, double rho);

/// CE(model; batch) + lambda * rho * ||model - anchor||^2 and its gradient.
LossAndGrads sar_objective(const LayerStack& model, const LayerStack& anchor, const Batch& batch,
                           double rho, double lambda);

/// Minibatch SGD from `anchor` for cfg.local_epochs epochs. The anchor stays
/// fixed; the proximal gradient 2 * lambda * rho * (W - anchor) is added to
/// every minibatch gradient.
LocalTrainReport local_train(const LayerStack& anchor, const Batch& data, double rho,
                             const SarConfig& cfg, std::uint64_t seed);

}  // namespace subflot

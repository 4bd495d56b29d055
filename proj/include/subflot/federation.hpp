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

// Round loop of federated submodel training with personalized dispatch,
// SAR local training and aligned aggregation, plus the ablation/baseline
// variants and a FedAvg reference used as an oracle.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subflot/alignment.hpp"
#include "subflot/data.hpp"
#include "subflot/nn.hpp"
#include "subflot/ot.hpp"
#include "subflot/sar.hpp"

namespace subflot {

/// How the server produces a client's submodel.
enum class DispatchKind { otp, fixed_position, magnitude, random };
/// Reference model OTP aligns the global model to.
enum class ProxyKind { historical, fixed_position, magnitude, random };
enum class LocalKind { sar, plain };
enum class AggregateKind { ota, positional };

struct MethodSpec {
  DispatchKind dispatch = DispatchKind::otp;
  ProxyKind proxy = ProxyKind::historical;
  LocalKind local = LocalKind::sar;
  AggregateKind aggregate = AggregateKind::ota;
  double fusion_alpha = 0.5;

  void validate() const;
  /// Compact label, e.g. "otp+sar+ota".
  std::string label() const;
};

enum class RateMode { constant, dynamic };
enum class DataSource { synthetic, idx };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::size_t samples_per_class = 200;
  double spread = 1.0;
  // feature_shift partitions only
  double shift_scale = 1.0;
  double rotation_strength = 1.0;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
  double test_fraction = 0.2;
};

struct FederationConfig {
  std::size_t rounds = 200;
  std::size_t client_count = 20;
  double join_ratio = 1.0;
  std::vector<double> rate_set{0.0, 0.25, 0.5, 0.75};
  RateMode rate_mode = RateMode::constant;
  std::size_t resample_every = 10;
  std::uint64_t seed = 0;
  MethodSpec method;
  SarConfig sar;
  OtConfig ot;
  std::vector<std::size_t> hidden{64, 64};
  PartitionSpec partition;  // client_count and seed are taken from this config
  DataConfig data;
  std::size_t threads = 1;

  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  LabeledDataset train;
  LabeledDataset test;
  double rho = 0.0;
  double p = 0.0;
  std::optional<LayerStack> history;
  std::optional<std::size_t> last_participation_round;
  // Global positions of the client's initial (fixed-position) submodel.
  NeuronIndexMap structure;
};

struct ClientRoundStats {
  std::size_t client = 0;
  bool participated = false;
  double rho = 0.0;
  double acc = 0.0;
  double drift_sq = 0.0;
  double ce_loss = 0.0;
  double sar_loss = 0.0;
};

struct RoundRecord {
  std::size_t round = 0;
  double global_acc = 0.0;
  double mean_client_acc = 0.0;
  double global_loss = 0.0;  // sum_i p_i * CE(global; train_i)
  std::vector<ClientRoundStats> per_client;
  std::vector<std::size_t> participating;
  double weight_sum = 0.0;  // of the renormalized aggregation weights
};

struct FederationSetup {
  std::vector<ClientState> clients;
  LayerStack initial_global;
  LabeledDataset global_test;
};

struct FederationResult {
  std::vector<RoundRecord> rounds;
  double initial_global_loss = 0.0;
  LayerStack global_model;
  std::vector<ClientState> clients;
};

using RoundObserver = std::function<void(const RoundRecord&, const LayerStack& global)>;

/// Data generation, partitioning, train/test split, rate assignment and
/// global initialization. Deterministic in cfg.
FederationSetup prepare_federation(const FederationConfig& cfg);

/// ceil(join_ratio * N) distinct client ids in ascending order.
std::vector<std::size_t> sample_participants(const FederationConfig& cfg, std::size_t round);

/// Seed of the local-training shuffles for (client, round).
std::uint64_t training_seed(const FederationConfig& cfg, std::size_t client, std::size_t round);

/// Weighted mean cross-entropy of `model` over the clients' training shards.
double global_train_loss(const LayerStack& model, std::span<const ClientState> clients);

/// At rounds divisible by resample_every (dynamic mode only) every client draws
/// a new rate. A client whose rate changed has its history cut to the new
/// shape by magnitude, from the history itself when it is wide enough and
/// from `global_model` otherwise.
void resample_rates(std::vector<ClientState>& clients, const FederationConfig& cfg,
                    std::size_t round, const LayerStack& global_model);

struct PositionedModel {
  std::reference_wrapper<const LayerStack> model;
  std::reference_wrapper<const NeuronIndexMap> kept;
  double weight;
};

/// Each global parameter becomes the weight-renormalized mean over the
/// submodels that contain it; parameters nobody covers keep their value.
LayerStack positional_aggregate(const LayerStack& previous_global,
                                std::span<const PositionedModel> submodels);

/// Round-by-round driver. run_federation wraps it; tests step it directly.
class Federation {
 public:
  explicit Federation(FederationConfig cfg);

  /// Runs the next round and returns its record.
  RoundRecord step();

  std::size_t round() const { return round_; }
  const FederationConfig& config() const { return cfg_; }
  const LayerStack& global_model() const { return global_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const LabeledDataset& global_test() const { return global_test_; }

  /// The submodel the server would dispatch to `client` right now.
  LayerStack personalized_model(std::size_t client) const;

 private:
  struct Dispatched {
    LayerStack model;
    NeuronIndexMap kept;
  };
  Dispatched dispatch(const ClientState& client, std::uint64_t seed) const;

  FederationConfig cfg_;
  std::vector<ClientState> clients_;
  LayerStack global_;
  LabeledDataset global_test_;
  std::size_t round_ = 0;
};

FederationResult run_federation(const FederationConfig& cfg, const RoundObserver& observer = {});

/// Plain weighted parameter averaging with unregularized SGD, sharing the
/// setup, participant sampling and training seeds of run_federation. Rejects
/// any nonzero pruning rate.
FederationResult run_fedavg_reference(const FederationConfig& cfg,
                                      const RoundObserver& observer = {});

}  // namespace subflot

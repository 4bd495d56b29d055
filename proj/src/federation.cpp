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

#include "subflot/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "subflot/error.hpp"
#include "subflot/random.hpp"

namespace subflot {

namespace {

// Seed streams.
enum : std::uint64_t {
  kDataStream = 1,
  kPartitionStream,
  kSplitStream,
  kInitStream,
  kRateStream,
  kParticipantStream,
  kTrainStream,
  kExtractStream,
  kEvalStream,
  kDomainStream,
};

ExtractStrategy to_strategy(DispatchKind kind) {
  switch (kind) {
    case DispatchKind::fixed_position:
      return ExtractStrategy::fixed_position;
    case DispatchKind::magnitude:
      return ExtractStrategy::magnitude;
    case DispatchKind::random:
      return ExtractStrategy::random;
    case DispatchKind::otp:
      break;
  }
  throw Error("otp dispatch has no extraction strategy");
}

ExtractStrategy to_strategy(ProxyKind kind) {
  switch (kind) {
    case ProxyKind::fixed_position:
      return ExtractStrategy::fixed_position;
    case ProxyKind::magnitude:
      return ExtractStrategy::magnitude;
    case ProxyKind::random:
      return ExtractStrategy::random;
    case ProxyKind::historical:
      break;
  }
  throw Error("historical proxy has no extraction strategy");
}

std::vector<std::size_t> submodel_widths(const FederationConfig& cfg, double rho) {
  return make_submodel_shape({cfg.hidden, rho});
}

NeuronIndexMap leading_positions(std::span<const std::size_t> widths) {
  NeuronIndexMap out;
  for (std::size_t w : widths) {
    std::vector<std::size_t> idx(w);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    out.push_back(std::move(idx));
  }
  return out;
}

bool fits_within(std::span<const std::size_t> narrow, std::span<const std::size_t> wide) {
  for (std::size_t l = 0; l < narrow.size(); ++l) {
    if (narrow[l] > wide[l]) return false;
  }
  return true;
}

// Runs fn(k) for k in [0, n) on up to `threads` workers. Exceptions are
// rethrown in index order after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t k) {
    try {
      fn(k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) guarded(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) guarded(k);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string context_message(std::size_t round, std::size_t client, const std::exception& e) {
  return fmt::format("round {} client {}: {}", round, client, e.what());
}

void evaluate_clients(RoundRecord& record, std::span<const ClientState> clients,
                      const std::function<LayerStack(std::size_t)>& personalized) {
  double acc_total = 0.0;
  std::size_t evaluated = 0;
  for (const auto& client : clients) {
    auto& stats = record.per_client[client.id];
    if (client.test.size() == 0) continue;
    stats.acc = evaluate(personalized(client.id), client.test);
    acc_total += stats.acc;
    ++evaluated;
  }
  record.mean_client_acc = evaluated == 0 ? 0.0 : acc_total / static_cast<double>(evaluated);
}

}  // namespace

void MethodSpec::validate() const {
  if (!(fusion_alpha >= 0.0 && fusion_alpha <= 1.0)) {
    throw ConfigError(fmt::format("method.alpha {} outside [0, 1]", fusion_alpha));
  }
}

std::string MethodSpec::label() const {
  std::string out;
  switch (dispatch) {
    case DispatchKind::otp:
      out = "otp";
      switch (proxy) {
        case ProxyKind::historical:
          break;
        case ProxyKind::fixed_position:
          out += "[fixed_position]";
          break;
        case ProxyKind::magnitude:
          out += "[magnitude]";
          break;
        case ProxyKind::random:
          out += "[random]";
          break;
      }
      break;
    case DispatchKind::fixed_position:
      out = "fixed_position";
      break;
    case DispatchKind::magnitude:
      out = "magnitude";
      break;
    case DispatchKind::random:
      out = "random";
      break;
  }
  out += local == LocalKind::sar ? "+sar" : "+plain";
  out += aggregate == AggregateKind::ota ? "+ota" : "+positional";
  return out;
}

void FederationConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (client_count < 1) throw ConfigError("clients must be >= 1");
  if (!(join_ratio > 0.0 && join_ratio <= 1.0)) throw ConfigError("join_ratio must be in (0, 1]");
  if (rate_set.empty()) throw ConfigError("rate_set must not be empty");
  for (double r : rate_set) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError(fmt::format("rate {} outside [0, 1)", r));
  }
  if (resample_every < 1) throw ConfigError("resample_every must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  for (std::size_t w : hidden) {
    if (w < 1) throw ConfigError("hidden widths must be >= 1");
  }
  if (data.source == DataSource::synthetic &&
      (data.classes < 1 || data.dim < 1 || data.samples_per_class < 1 || !(data.spread > 0.0))) {
    throw ConfigError("synthetic data needs classes, dim, samples_per_class >= 1 and spread > 0");
  }
  if (data.source == DataSource::idx && partition.scheme == PartitionScheme::feature_shift) {
    throw ConfigError("feature_shift partitions need synthetic data");
  }
  if (!(data.test_fraction >= 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must be in [0, 1)");
  }
  method.validate();
  try {
    sar.validate();
    ot.validate();
    PartitionSpec p = partition;
    p.client_count = client_count;
    p.validate(data.source == DataSource::synthetic ? data.classes : p.classes_per_client);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t training_seed(const FederationConfig& cfg, std::size_t client, std::size_t round) {
  return derive_seed(cfg.seed, {kTrainStream, client, round});
}

std::vector<std::size_t> sample_participants(const FederationConfig& cfg, std::size_t round) {
  const std::size_t n = cfg.client_count;
  const auto k = static_cast<std::size_t>(
      std::ceil(cfg.join_ratio * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (k < n) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {kParticipantStream, round}));
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(std::max<std::size_t>(k, 1));
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

FederationSetup prepare_federation(const FederationConfig& cfg) {
  cfg.validate();
  PartitionSpec pspec = cfg.partition;
  pspec.client_count = cfg.client_count;
  pspec.seed = derive_seed(cfg.seed, {kPartitionStream});

  Partition parts;
  if (cfg.data.source == DataSource::idx) {
    const auto data = load_idx(cfg.data.idx_images, cfg.data.idx_labels);
    parts = partition(data, pspec);
  } else {
    SyntheticSpec base{cfg.data.classes, cfg.data.dim, cfg.data.samples_per_class,
                       cfg.data.spread, derive_seed(cfg.seed, {kDataStream})};
    if (pspec.scheme == PartitionScheme::feature_shift) {
      FeatureShiftSpec fs{base, pspec.domains, cfg.data.shift_scale, cfg.data.rotation_strength,
                          derive_seed(cfg.seed, {kDomainStream})};
      const auto domains = gen_feature_shift(fs);
      parts = partition_domains(domains, pspec);
    } else {
      parts = partition(gen_synthetic(base), pspec);
    }
  }

  FederationSetup setup;
  std::mt19937_64 rate_rng(derive_seed(cfg.seed, {kRateStream}));
  std::uniform_int_distribution<std::size_t> pick_rate(0, cfg.rate_set.size() - 1);
  std::vector<LabeledDataset> tests;
  for (std::size_t i = 0; i < cfg.client_count; ++i) {
    ClientState client;
    client.id = i;
    auto split = split_train_test(parts.clients[i], cfg.data.test_fraction,
                                  derive_seed(cfg.seed, {kSplitStream, i}));
    client.train = std::move(split.train);
    client.test = std::move(split.test);
    client.rho = cfg.rate_set[pick_rate(rate_rng)];
    client.structure = leading_positions(submodel_widths(cfg, client.rho));
    if (client.test.size() > 0) tests.push_back(client.test);
    setup.clients.push_back(std::move(client));
  }
  std::vector<LabeledDataset> trains;
  for (const auto& c : setup.clients) trains.push_back(c.train);
  const auto weights = size_weights(trains);
  for (std::size_t i = 0; i < cfg.client_count; ++i) setup.clients[i].p = weights[i];

  const std::size_t input_dim = setup.clients.front().train.features.cols();
  const std::size_t classes = setup.clients.front().train.class_count;
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(classes);
  setup.initial_global = init_mlp(dims, derive_seed(cfg.seed, {kInitStream}));
  if (!tests.empty()) setup.global_test = concat(tests);
  return setup;
}

double global_train_loss(const LayerStack& model, std::span<const ClientState> clients) {
  double total = 0.0;
  for (const auto& c : clients) total += c.p * ce_loss(model, c.train);
  return total;
}

void resample_rates(std::vector<ClientState>& clients, const FederationConfig& cfg,
                    std::size_t round, const LayerStack& global_model) {
  if (cfg.rate_mode != RateMode::dynamic || cfg.rate_set.size() < 2) return;
  if (round % cfg.resample_every != 0) return;
  std::mt19937_64 rng(derive_seed(cfg.seed, {kRateStream, round}));
  std::uniform_int_distribution<std::size_t> pick(0, cfg.rate_set.size() - 1);
  for (auto& client : clients) {
    const double rho = cfg.rate_set[pick(rng)];
    if (rho == client.rho) continue;
    client.rho = rho;
    const auto widths = submodel_widths(cfg, rho);
    client.structure = leading_positions(widths);
    if (client.history) {
      const auto old_widths = client.history->hidden_widths();
      const LayerStack& source = fits_within(widths, old_widths) ? *client.history : global_model;
      client.history = baseline_extract(source, widths, ExtractStrategy::magnitude, 0);
    }
  }
}

LayerStack positional_aggregate(const LayerStack& previous_global,
                                std::span<const PositionedModel> submodels) {
  previous_global.validate();
  const std::size_t depth = previous_global.depth();
  if (submodels.empty()) throw ShapeError("positional_aggregate needs at least one submodel");

  auto full_range = [](std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
  };
  // Positions of each submodel's rows per layer; the output layer is shared.
  auto rows_of = [&](const PositionedModel& s, std::size_t l) {
    return l + 1 == depth ? full_range(previous_global.output_dim()) : s.kept.get()[l];
  };
  auto cols_of = [&](const PositionedModel& s, std::size_t l) {
    return l == 0 ? full_range(previous_global.input_dim()) : s.kept.get()[l - 1];
  };

  for (const auto& s : submodels) {
    if (s.kept.get().size() + 1 != depth) {
      throw ShapeError("positional_aggregate: submodel is missing its index map");
    }
    check_fits_within(s.model.get(), previous_global);
  }

  LayerStack out = previous_global;
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix& gw = previous_global.layers[l].weight;
    Matrix weight_cover(gw.rows(), gw.cols());
    Vector bias_cover(gw.rows(), 0.0);
    for (const auto& s : submodels) {
      const auto rows = rows_of(s, l);
      const auto cols = cols_of(s, l);
      for (std::size_t r : rows) {
        bias_cover[r] += s.weight;
        for (std::size_t c : cols) weight_cover(r, c) += s.weight;
      }
    }
    Matrix weight_acc(gw.rows(), gw.cols());
    Vector bias_acc(gw.rows(), 0.0);
    for (const auto& s : submodels) {
      const Layer& sub = s.model.get().layers[l];
      const auto rows = rows_of(s, l);
      const auto cols = cols_of(s, l);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        bias_acc[r] += (s.weight / bias_cover[r]) * sub.bias[i];
        for (std::size_t j = 0; j < cols.size(); ++j) {
          const std::size_t c = cols[j];
          weight_acc(r, c) += (s.weight / weight_cover(r, c)) * sub.weight(i, j);
        }
      }
    }
    Layer& dst = out.layers[l];
    for (std::size_t r = 0; r < gw.rows(); ++r) {
      if (bias_cover[r] > 0.0) dst.bias[r] = bias_acc[r];
      for (std::size_t c = 0; c < gw.cols(); ++c) {
        if (weight_cover(r, c) > 0.0) dst.weight(r, c) = weight_acc(r, c);
      }
    }
  }
  return out;
}

Federation::Federation(FederationConfig cfg) : cfg_(std::move(cfg)) {
  auto setup = prepare_federation(cfg_);
  clients_ = std::move(setup.clients);
  global_ = std::move(setup.initial_global);
  global_test_ = std::move(setup.global_test);
}

Federation::Dispatched Federation::dispatch(const ClientState& client, std::uint64_t seed) const {
  const auto widths = submodel_widths(cfg_, client.rho);
  const MethodSpec& m = cfg_.method;
  if (m.dispatch != DispatchKind::otp) {
    Dispatched out;
    out.kept = select_neurons(global_, widths, to_strategy(m.dispatch), seed);
    out.model = extract_submodel(global_, out.kept);
    return out;
  }
  LayerStack proxy;
  if (m.proxy == ProxyKind::historical) {
    // First participation: no history yet, so the fixed-position cut is sent as is.
    if (!client.history) {
      return {baseline_extract(global_, widths, ExtractStrategy::fixed_position, 0),
              client.structure};
    }
    proxy = *client.history;
  } else {
    proxy = baseline_extract(global_, widths, to_strategy(m.proxy), seed);
  }
  FusionConfig fusion{m.fusion_alpha, cfg_.ot};
  return {otp_personalize(global_, proxy, fusion).model, client.structure};
}

LayerStack Federation::personalized_model(std::size_t client) const {
  const auto& c = clients_.at(client);
  return dispatch(c, derive_seed(cfg_.seed, {kEvalStream, client, round_})).model;
}

RoundRecord Federation::step() {
  ++round_;
  const std::size_t t = round_;
  resample_rates(clients_, cfg_, t, global_);

  RoundRecord record;
  record.round = t;
  record.participating = sample_participants(cfg_, t);
  record.per_client.resize(clients_.size());
  for (const auto& c : clients_) {
    record.per_client[c.id].client = c.id;
    record.per_client[c.id].rho = c.rho;
  }

  struct Outcome {
    Dispatched dispatched;
    LocalTrainReport report;
    LayerStack lifted;
  };
  const auto& ids = record.participating;
  std::vector<Outcome> outcomes(ids.size());
  SarConfig local_cfg = cfg_.sar;
  if (cfg_.method.local == LocalKind::plain) local_cfg.lambda = 0.0;

  parallel_for(ids.size(), cfg_.threads, [&](std::size_t k) {
    const ClientState& client = clients_[ids[k]];
    try {
      Outcome& o = outcomes[k];
      o.dispatched = dispatch(client, derive_seed(cfg_.seed, {kExtractStream, client.id, t}));
      o.report = local_train(o.dispatched.model, client.train, client.rho, local_cfg,
                             training_seed(cfg_, client.id, t));
      if (cfg_.method.aggregate == AggregateKind::ota) {
        o.lifted = ota_align_up(o.report.final_model, global_, cfg_.ot).model;
      }
    } catch (const std::exception& e) {
      throw Error(context_message(t, client.id, e));
    }
  });

  double participating_mass = 0.0;
  for (std::size_t id : ids) participating_mass += clients_[id].p;
  std::vector<double> weights;
  for (std::size_t id : ids) weights.push_back(clients_[id].p / participating_mass);
  record.weight_sum = sum(weights);

  if (cfg_.method.aggregate == AggregateKind::ota) {
    std::vector<WeightedModel> lifted;
    for (std::size_t k = 0; k < ids.size(); ++k) lifted.push_back({outcomes[k].lifted, weights[k]});
    global_ = aggregate(lifted);
  } else {
    std::vector<PositionedModel> subs;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      subs.push_back({outcomes[k].report.final_model, outcomes[k].dispatched.kept, weights[k]});
    }
    global_ = positional_aggregate(global_, subs);
  }

  for (std::size_t k = 0; k < ids.size(); ++k) {
    ClientState& client = clients_[ids[k]];
    const auto& report = outcomes[k].report;
    auto& stats = record.per_client[client.id];
    stats.participated = true;
    stats.drift_sq = report.drift_sq;
    stats.ce_loss = report.loss_trace.back().ce;
    stats.sar_loss = report.loss_trace.back().sar;
    client.history = std::move(outcomes[k].report.final_model);
    client.last_participation_round = t;
  }

  if (global_test_.size() > 0) record.global_acc = evaluate(global_, global_test_);
  record.global_loss = global_train_loss(global_, clients_);
  evaluate_clients(record, clients_, [&](std::size_t id) { return personalized_model(id); });
  return record;
}

FederationResult run_federation(const FederationConfig& cfg, const RoundObserver& observer) {
  Federation fed(cfg);
  FederationResult result;
  result.initial_global_loss = global_train_loss(fed.global_model(), fed.clients());
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    result.rounds.push_back(fed.step());
    if (observer) observer(result.rounds.back(), fed.global_model());
  }
  result.global_model = fed.global_model();
  result.clients = fed.clients();
  return result;
}

FederationResult run_fedavg_reference(const FederationConfig& cfg, const RoundObserver& observer) {
  for (double r : cfg.rate_set) {
    if (r != 0.0) throw ConfigError("the FedAvg reference only supports full-size clients (rate 0)");
  }
  auto setup = prepare_federation(cfg);
  auto& clients = setup.clients;
  LayerStack global = std::move(setup.initial_global);

  FederationResult result;
  result.initial_global_loss = global_train_loss(global, clients);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundRecord record;
    record.round = t;
    record.participating = sample_participants(cfg, t);
    record.per_client.resize(clients.size());
    const auto& ids = record.participating;

    std::vector<LayerStack> trained(ids.size());
    parallel_for(ids.size(), cfg.threads, [&](std::size_t k) {
      const ClientState& c = clients[ids[k]];
      trained[k] = train_sgd(global, c.train, cfg.sar.local_epochs, cfg.sar.lr,
                             cfg.sar.batch_size, training_seed(cfg, c.id, t));
    });
    double mass = 0.0;
    for (std::size_t id : ids) mass += clients[id].p;
    std::vector<WeightedModel> weighted;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double w = clients[ids[k]].p / mass;
      weighted.push_back({trained[k], w});
      record.weight_sum += w;
      auto& stats = record.per_client[ids[k]];
      stats.participated = true;
      stats.drift_sq = sq_norm_diff(trained[k], global);
    }
    for (std::size_t i = 0; i < clients.size(); ++i) record.per_client[i].client = i;
    global = aggregate(weighted);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      clients[ids[k]].history = std::move(trained[k]);
      clients[ids[k]].last_participation_round = t;
    }
    if (setup.global_test.size() > 0) record.global_acc = evaluate(global, setup.global_test);
    record.global_loss = global_train_loss(global, clients);
    evaluate_clients(record, clients, [&](std::size_t) { return global; });
    result.rounds.push_back(record);
    if (observer) observer(result.rounds.back(), global);
  }
  result.global_model = std::move(global);
  result.clients = std::move(clients);
  return result;
}

}  // namespace subflot

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


#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "subflot/error.hpp"
#include "subflot/federation.hpp"
#include "test_support.hpp"

using namespace subflot;

namespace {

// A few hundred samples, narrow layers and exact OT: fast and deterministic.
FederationConfig tiny(std::size_t clients, std::size_t rounds) {
  FederationConfig cfg;
  cfg.rounds = rounds;
  cfg.client_count = clients;
  cfg.hidden = {6};
  cfg.data.classes = 3;
  cfg.data.dim = 4;
  cfg.data.samples_per_class = 20;
  cfg.partition.scheme = PartitionScheme::iid;
  cfg.sar.local_epochs = 1;
  cfg.sar.lr = 0.05;
  cfg.sar.batch_size = 8;
  cfg.ot.mode = OtMode::exact;
  cfg.seed = 3;
  return cfg;
}

void check_same_records(const std::vector<RoundRecord>& a, const std::vector<RoundRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].global_acc == b[t].global_acc);
    CHECK(a[t].mean_client_acc == b[t].mean_client_acc);
    CHECK(a[t].global_loss == b[t].global_loss);
    CHECK(a[t].participating == b[t].participating);
    for (std::size_t i = 0; i < a[t].per_client.size(); ++i) {
      CHECK(a[t].per_client[i].drift_sq == b[t].per_client[i].drift_sq);
      CHECK(a[t].per_client[i].acc == b[t].per_client[i].acc);
    }
  }
}

}  // namespace

TEST_CASE("setup invariants") {
  auto cfg = tiny(5, 1);
  const auto setup = prepare_federation(cfg);
  REQUIRE(setup.clients.size() == 5);
  double p = 0.0;
  for (const auto& c : setup.clients) {
    CHECK(c.p > 0.0);
    CHECK(std::count(cfg.rate_set.begin(), cfg.rate_set.end(), c.rho) == 1);
    CHECK(c.train.size() + c.test.size() >= 1);
    CHECK_FALSE(c.history.has_value());
    p += c.p;
  }
  CHECK(std::abs(p - 1.0) < 1e-9);
  CHECK(setup.initial_global.dims() == std::vector<std::size_t>{4, 6, 3});
}

TEST_CASE("participant sampling") {
  auto cfg = tiny(4, 1);
  cfg.join_ratio = 0.5;
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t t = 1; t <= 20; ++t) {
    const auto ids = sample_participants(cfg, t);
    CHECK(ids.size() == 2);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(ids[0] != ids[1]);
    CHECK(ids == sample_participants(cfg, t));
    seen.insert(ids);
  }
  CHECK(seen.size() > 1);
  cfg.join_ratio = 0.3;  // ceil(1.2)
  CHECK(sample_participants(cfg, 1).size() == 2);
  cfg.join_ratio = 1.0;
  CHECK(sample_participants(cfg, 1) == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("round records: weights, histories and accuracy ranges") {
  auto cfg = tiny(5, 4);
  cfg.join_ratio = 0.6;
  Federation fed(cfg);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto before = fed.clients();
    const RoundRecord r = fed.step();
    CHECK(r.round == t);
    CHECK(r.participating.size() == 3);
    CHECK(std::abs(r.weight_sum - 1.0) < 1e-9);
    CHECK(r.global_acc >= 0.0);
    CHECK(r.global_acc <= 1.0);
    CHECK(r.mean_client_acc >= 0.0);
    CHECK(r.mean_client_acc <= 1.0);
    for (const auto& c : fed.clients()) {
      const bool in = std::count(r.participating.begin(), r.participating.end(), c.id) == 1;
      CHECK(r.per_client[c.id].participated == in);
      if (in) {
        REQUIRE(c.history.has_value());
        CHECK(c.last_participation_round == t);
        CHECK(c.history->hidden_widths() == make_submodel_shape({cfg.hidden, c.rho}));
      } else {
        // Stale: unchanged from before the round.
        CHECK(c.history == before[c.id].history);
        CHECK(c.last_participation_round == before[c.id].last_participation_round);
      }
    }
  }
}

TEST_CASE("history equals the round's post-training model") {
  // Recompute one client's round-1 training independently.
  auto cfg = tiny(3, 1);
  cfg.rate_set = {0.5};
  Federation fed(cfg);
  const LayerStack dispatched = fed.personalized_model(1);
  // Before any history the dispatch is the fixed-position extraction.
  const std::vector<std::size_t> widths{3};
  CHECK(dispatched == baseline_extract(fed.global_model(), widths, ExtractStrategy::fixed_position, 0));
  const auto& client = fed.clients()[1];
  const auto expected =
      local_train(dispatched, client.train, client.rho, cfg.sar, training_seed(cfg, 1, 1));
  fed.step();
  REQUIRE(fed.clients()[1].history.has_value());
  CHECK(*fed.clients()[1].history == expected.final_model);
}

TEST_CASE("runs are deterministic and thread-count independent") {
  auto cfg = tiny(5, 3);
  cfg.ot.mode = OtMode::sinkhorn;
  cfg.hidden = {8, 8};
  const auto a = run_federation(cfg);
  const auto b = run_federation(cfg);
  check_same_records(a.rounds, b.rounds);
  CHECK(a.global_model == b.global_model);
  cfg.threads = 3;
  const auto c = run_federation(cfg);
  check_same_records(a.rounds, c.rounds);
  CHECK(a.global_model == c.global_model);
}

TEST_CASE("a single full-size client is centralized SGD") {
  auto cfg = tiny(1, 4);
  cfg.rate_set = {0.0};
  cfg.sar.lambda = 0.0;
  cfg.sar.local_epochs = 2;
  const auto setup = prepare_federation(cfg);
  LayerStack central = setup.initial_global;
  Federation fed(cfg);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    fed.step();
    central = train_sgd(central, setup.clients[0].train, cfg.sar.local_epochs, cfg.sar.lr,
                        cfg.sar.batch_size, training_seed(cfg, 0, t));
    CHECK(fed.global_model() == central);
  }
}

TEST_CASE("all full-size clients match the FedAvg reference") {
  auto cfg = tiny(4, 10);
  cfg.rate_set = {0.0};
  cfg.method.local = LocalKind::plain;
  // At alpha < 1 the dispatched model is blended with the client's own
  // history, which FedAvg does not do.
  cfg.method.fusion_alpha = 1.0;
  std::vector<LayerStack> ours;
  std::vector<LayerStack> reference;
  run_federation(cfg, [&](const RoundRecord&, const LayerStack& g) { ours.push_back(g); });
  run_fedavg_reference(cfg, [&](const RoundRecord&, const LayerStack& g) { reference.push_back(g); });
  REQUIRE(ours.size() == 10);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(subflot::testing::max_abs_diff(ours[t], reference[t]) < 1e-5);
  }
}

TEST_CASE("FedAvg reference") {
  SUBCASE("rejects pruned clients") {
    CHECK_THROWS_AS(run_fedavg_reference(tiny(2, 1)), ConfigError);
  }
  SUBCASE("loss mostly decreases on separable iid data") {
    auto cfg = tiny(4, 10);
    cfg.rate_set = {0.0};
    cfg.sar.lr = 0.01;
    cfg.data.spread = 0.3;
    const auto r = run_fedavg_reference(cfg);
    int down = r.rounds[0].global_loss <= r.initial_global_loss;
    for (std::size_t t = 1; t < 10; ++t) down += r.rounds[t].global_loss <= r.rounds[t - 1].global_loss;
    CHECK(down > 5);
  }
}

TEST_CASE("rate schedules") {
  auto cfg = tiny(6, 12);
  cfg.resample_every = 3;
  auto rates = [](const Federation& f) {
    std::vector<double> r;
    for (const auto& c : f.clients()) r.push_back(c.rho);
    return r;
  };
  SUBCASE("static rates never change") {
    Federation fed(cfg);
    const auto initial = rates(fed);
    for (int t = 0; t < 6; ++t) {
      fed.step();
      CHECK(rates(fed) == initial);
    }
  }
  SUBCASE("dynamic rates are redrawn reproducibly") {
    cfg.rate_mode = RateMode::dynamic;
    Federation a(cfg);
    Federation b(cfg);
    std::set<std::vector<double>> seen;
    for (int t = 0; t < 9; ++t) {
      a.step();
      b.step();
      CHECK(rates(a) == rates(b));
      seen.insert(rates(a));
      for (const auto& c : a.clients()) {
        if (c.history) {
          CHECK(c.history->hidden_widths() == make_submodel_shape({cfg.hidden, c.rho}));
        }
      }
    }
    CHECK(seen.size() > 1);
  }
  SUBCASE("a single rate makes dynamic mode a no-op") {
    cfg.rate_mode = RateMode::dynamic;
    cfg.rate_set = {0.5};
    Federation fed(cfg);
    for (int t = 0; t < 6; ++t) {
      fed.step();
      for (const auto& c : fed.clients()) CHECK(c.rho == 0.5);
    }
  }
}

TEST_CASE("positional aggregation") {
  const std::vector<std::size_t> dims{3, 4, 2};
  const LayerStack global = init_mlp(dims, 1);
  const NeuronIndexMap all{{0, 1, 2, 3}};

  SUBCASE("full-size clients give the weighted average") {
    const LayerStack a = init_mlp(dims, 2);
    const LayerStack b = init_mlp(dims, 3);
    const PositionedModel subs[] = {{a, all, 0.25}, {b, all, 0.75}};
    const LayerStack out = positional_aggregate(global, subs);
    const auto fa = subflot::testing::flatten(a);
    const auto fb = subflot::testing::flatten(b);
    const auto fo = subflot::testing::flatten(out);
    for (std::size_t k = 0; k < fo.size(); ++k) {
      CHECK(fo[k] == doctest::Approx(0.25 * fa[k] + 0.75 * fb[k]).epsilon(1e-12));
    }
  }
  SUBCASE("uncovered parameters keep their value; single coverage copies") {
    const NeuronIndexMap first{{0, 1}};
    const NeuronIndexMap second{{1, 2}};
    const LayerStack a = extract_submodel(init_mlp(dims, 4), first);
    const LayerStack b = extract_submodel(init_mlp(dims, 5), second);
    const PositionedModel subs[] = {{a, first, 0.5}, {b, second, 0.5}};
    const LayerStack out = positional_aggregate(global, subs);
    const Layer& h = out.layers[0];
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(h.weight(3, c) == global.layers[0].weight(3, c));   // nobody
      CHECK(h.weight(0, c) == a.layers[0].weight(0, c));        // only a
      CHECK(h.weight(2, c) == b.layers[0].weight(1, c));        // only b
      CHECK(h.weight(1, c) == doctest::Approx(0.5 * (a.layers[0].weight(1, c) +
                                                      b.layers[0].weight(0, c))));
    }
    CHECK(h.bias[3] == global.layers[0].bias[3]);
    // Output column 3 is covered by no one; column 0 only by a.
    for (std::size_t r = 0; r < 2; ++r) {
      CHECK(out.layers[1].weight(r, 3) == global.layers[1].weight(r, 3));
      CHECK(out.layers[1].weight(r, 0) == a.layers[1].weight(r, 0));
    }
  }
  SUBCASE("unequal weights renormalize over covering clients") {
    const NeuronIndexMap first{{0}};
    const NeuronIndexMap second{{0, 1}};
    const LayerStack a = extract_submodel(init_mlp(dims, 6), first);
    const LayerStack b = extract_submodel(init_mlp(dims, 7), second);
    const PositionedModel subs[] = {{a, first, 0.2}, {b, second, 0.8}};
    const LayerStack out = positional_aggregate(global, subs);
    CHECK(out.layers[0].bias[0] ==
          doctest::Approx(0.2 * a.layers[0].bias[0] + 0.8 * b.layers[0].bias[0]));
    CHECK(out.layers[0].bias[1] == b.layers[0].bias[1]);
  }
}

TEST_CASE("method variants run end to end") {
  for (auto dispatch : {DispatchKind::otp, DispatchKind::fixed_position, DispatchKind::magnitude,
                        DispatchKind::random}) {
    for (auto aggregate : {AggregateKind::ota, AggregateKind::positional}) {
      auto cfg = tiny(4, 2);
      cfg.method.dispatch = dispatch;
      cfg.method.aggregate = aggregate;
      INFO(cfg.method.label());
      const auto r = run_federation(cfg);
      CHECK(r.rounds.size() == 2);
      CHECK(std::isfinite(r.rounds.back().global_loss));
    }
  }
  for (auto proxy : {ProxyKind::fixed_position, ProxyKind::magnitude, ProxyKind::random}) {
    auto cfg = tiny(4, 2);
    cfg.method.proxy = proxy;
    CHECK(run_federation(cfg).rounds.size() == 2);
  }
}

TEST_CASE("configuration errors") {
  auto cfg = tiny(4, 1);
  cfg.join_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny(4, 1);
  cfg.rate_set = {1.0};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny(4, 1);
  cfg.rounds = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny(4, 1);
  cfg.method.fusion_alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny(4, 1);
  cfg.partition.scheme = PartitionScheme::pathological;
  cfg.partition.classes_per_client = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("module errors carry round and client context") {
  auto cfg = tiny(2, 1);
  cfg.sar.lr = 1e300;
  cfg.sar.local_epochs = 3;
  try {
    run_federation(cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("round 1") != std::string::npos);
    CHECK(what.find("client") != std::string::npos);
  }
}

TEST_CASE("global loss falls to a plateau on logistic regression") {
  auto cfg = tiny(10, 200);
  cfg.hidden = {};
  cfg.data.classes = 4;
  cfg.data.dim = 6;
  cfg.data.samples_per_class = 40;
  cfg.sar.lr = 0.02;
  const auto r = run_federation(cfg);
  const double l0 = r.initial_global_loss;
  const double l5 = r.rounds[4].global_loss;
  const double l50 = r.rounds[49].global_loss;
  const double l150 = r.rounds[149].global_loss;
  CHECK(l50 < l5);
  CHECK(l5 < l0);
  for (std::size_t t = 150; t < 200; ++t) {
    CHECK(std::abs(r.rounds[t].global_loss - l150) <= 0.1 * l150);
  }
}

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

#include "subflot/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <type_traits>
#include <sstream>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "json.hpp"

#include "subflot/error.hpp"
#include "subflot/model_io.hpp"

namespace subflot {

namespace {

using nlohmann::json;

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read as size_t");

template <typename E>
using NameTable = std::vector<std::pair<E, std::string_view>>;

const NameTable<DispatchKind> kDispatchNames{{DispatchKind::otp, "otp"},
                                             {DispatchKind::fixed_position, "fixed_position"},
                                             {DispatchKind::magnitude, "magnitude"},
                                             {DispatchKind::random, "random"}};
const NameTable<ProxyKind> kProxyNames{{ProxyKind::historical, "historical"},
                                       {ProxyKind::fixed_position, "fixed_position"},
                                       {ProxyKind::magnitude, "magnitude"},
                                       {ProxyKind::random, "random"}};
const NameTable<LocalKind> kLocalNames{{LocalKind::sar, "sar"}, {LocalKind::plain, "plain"}};
const NameTable<AggregateKind> kAggregateNames{{AggregateKind::ota, "ota"},
                                               {AggregateKind::positional, "positional"}};
const NameTable<RateMode> kRateModeNames{{RateMode::constant, "static"},
                                         {RateMode::dynamic, "dynamic"}};
const NameTable<DataSource> kSourceNames{{DataSource::synthetic, "synthetic"},
                                         {DataSource::idx, "idx"}};
const NameTable<PartitionScheme> kSchemeNames{{PartitionScheme::iid, "iid"},
                                              {PartitionScheme::pathological, "pathological"},
                                              {PartitionScheme::dirichlet, "dirichlet"},
                                              {PartitionScheme::feature_shift, "feature_shift"}};
const NameTable<OtMode> kOtModeNames{{OtMode::exact, "exact"}, {OtMode::sinkhorn, "sinkhorn"}};
const NameTable<MetricsFormat> kFormatNames{{MetricsFormat::csv, "csv"},
                                            {MetricsFormat::jsonl, "jsonl"}};

template <typename E>
std::string_view name_of(const NameTable<E>& table, E value) {
  for (const auto& [v, n] : table) {
    if (v == value) return n;
  }
  throw Error("enum value missing from its name table");
}

template <typename E>
std::string choices(const NameTable<E>& table) {
  std::vector<std::string_view> names;
  for (const auto& entry : table) names.push_back(entry.second);
  return fmt::format("{}", fmt::join(names, ", "));
}

// Reads the members of one JSON object, remembering which keys were used so
// that leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(fmt::format("config {} must be an object", display(path_)));
    }
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                       v->get<std::int64_t>() < 0)) {
        throw type_error(key, "a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw type_error(key, "a number");
      out = v->get<double>();
    }
  }

  void read(const char* key, std::optional<double>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number()) throw type_error(key, "a number or null");
      out = v->get<double>();
    }
  }

  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw type_error(key, "a string");
      out = v->get<std::string>();
    }
  }

  void read(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  void read(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw type_error(key, "an array of numbers");
      std::vector<double> values;
      for (const auto& item : *v) {
        if (!item.is_number()) throw type_error(key, "an array of numbers");
        values.push_back(item.get<double>());
      }
      out = std::move(values);
    }
  }

  void read(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw type_error(key, "an array of non-negative integers");
      std::vector<std::size_t> values;
      for (const auto& item : *v) {
        if (!item.is_number_unsigned()) throw type_error(key, "an array of non-negative integers");
        values.push_back(item.get<std::size_t>());
      }
      out = std::move(values);
    }
  }

  template <typename E>
  void read_enum(const char* key, const NameTable<E>& table, E& out) {
    if (const json* v = take(key)) {
      if (v->is_string()) {
        const auto s = v->get<std::string>();
        for (const auto& [value, name] : table) {
          if (name == s) {
            out = value;
            return;
          }
        }
      }
      throw type_error(key, fmt::format("one of {}", choices(table)));
    }
  }

  /// Nested object under `key`, or nullptr when absent.
  const json* child(const char* key) { return take(key); }

  std::string child_path(const char* key) const {
    return path_.empty() ? key : fmt::format("{}.{}", path_, key);
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!used_.contains(item.key())) {
        throw ConfigError(
            fmt::format("unknown config key \"{}\"", path_.empty()
                                                         ? item.key()
                                                         : fmt::format("{}.{}", path_, item.key())));
      }
    }
  }

 private:
  static std::string display(const std::string& path) {
    return path.empty() ? std::string("document") : fmt::format("\"{}\"", path);
  }

  const json* take(const char* key) {
    used_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  ConfigError type_error(const char* key, std::string_view expected) const {
    return ConfigError(fmt::format("config key \"{}\" must be {}", child_path(key), expected));
  }

  const json& node_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

template <typename Fn>
void with_child(ObjectReader& parent, const char* key, Fn&& fn) {
  if (const json* node = parent.child(key)) {
    ObjectReader reader(*node, parent.child_path(key));
    fn(reader);
    reader.finish();
  }
}

void read_config(const json& doc, ExperimentConfig& cfg) {
  ObjectReader root(doc, "");
  FederationConfig& f = cfg.federation;
  root.read("experiment_id", cfg.experiment_id);
  root.read("output_dir", cfg.output_dir);
  root.read_enum("metrics_format", kFormatNames, cfg.metrics_format);
  root.read("checkpoint_every", cfg.checkpoint_every);
  root.read("rounds", f.rounds);
  root.read("clients", f.client_count);
  root.read("join_ratio", f.join_ratio);
  root.read("rate_set", f.rate_set);
  root.read_enum("rate_mode", kRateModeNames, f.rate_mode);
  root.read("resample_every", f.resample_every);
  root.read("seed", f.seed);
  root.read("threads", f.threads);
  root.read("hidden", f.hidden);
  with_child(root, "method", [&](ObjectReader& r) {
    r.read_enum("dispatch", kDispatchNames, f.method.dispatch);
    r.read_enum("proxy", kProxyNames, f.method.proxy);
    r.read_enum("local", kLocalNames, f.method.local);
    r.read_enum("aggregate", kAggregateNames, f.method.aggregate);
    r.read("alpha", f.method.fusion_alpha);
  });
  with_child(root, "sar", [&](ObjectReader& r) {
    r.read("lambda", f.sar.lambda);
    r.read("local_epochs", f.sar.local_epochs);
    r.read("lr", f.sar.lr);
    r.read("batch_size", f.sar.batch_size);
  });
  with_child(root, "ot", [&](ObjectReader& r) {
    r.read_enum("mode", kOtModeNames, f.ot.mode);
    r.read("epsilon_scale", f.ot.epsilon_scale);
    r.read("epsilon", f.ot.epsilon);
    r.read("max_iters", f.ot.max_iters);
    r.read("convergence_tol", f.ot.convergence_tol);
    r.read("exact_max_cells", f.ot.exact_max_cells);
  });
  with_child(root, "partition", [&](ObjectReader& r) {
    r.read_enum("scheme", kSchemeNames, f.partition.scheme);
    r.read("classes_per_client", f.partition.classes_per_client);
    r.read("beta", f.partition.beta);
    r.read("domains", f.partition.domains);
  });
  with_child(root, "data", [&](ObjectReader& r) {
    r.read_enum("source", kSourceNames, f.data.source);
    r.read("classes", f.data.classes);
    r.read("dim", f.data.dim);
    r.read("samples_per_class", f.data.samples_per_class);
    r.read("spread", f.data.spread);
    r.read("shift_scale", f.data.shift_scale);
    r.read("rotation_strength", f.data.rotation_strength);
    r.read("idx_images", f.data.idx_images);
    r.read("idx_labels", f.data.idx_labels);
    r.read("test_fraction", f.data.test_fraction);
  });
  root.finish();
}

json config_json(const ExperimentConfig& cfg) {
  const FederationConfig& f = cfg.federation;
  json j;
  j["experiment_id"] = cfg.experiment_id;
  j["output_dir"] = cfg.output_dir.string();
  j["metrics_format"] = name_of(kFormatNames, cfg.metrics_format);
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["rounds"] = f.rounds;
  j["clients"] = f.client_count;
  j["join_ratio"] = f.join_ratio;
  j["rate_set"] = f.rate_set;
  j["rate_mode"] = name_of(kRateModeNames, f.rate_mode);
  j["resample_every"] = f.resample_every;
  j["seed"] = f.seed;
  j["threads"] = f.threads;
  j["hidden"] = f.hidden;
  j["method"] = {{"dispatch", name_of(kDispatchNames, f.method.dispatch)},
                 {"proxy", name_of(kProxyNames, f.method.proxy)},
                 {"local", name_of(kLocalNames, f.method.local)},
                 {"aggregate", name_of(kAggregateNames, f.method.aggregate)},
                 {"alpha", f.method.fusion_alpha}};
  j["sar"] = {{"lambda", f.sar.lambda},
              {"local_epochs", f.sar.local_epochs},
              {"lr", f.sar.lr},
              {"batch_size", f.sar.batch_size}};
  j["ot"] = {{"mode", name_of(kOtModeNames, f.ot.mode)},
             {"epsilon_scale", f.ot.epsilon_scale},
             {"epsilon", f.ot.epsilon ? json(*f.ot.epsilon) : json(nullptr)},
             {"max_iters", f.ot.max_iters},
             {"convergence_tol", f.ot.convergence_tol},
             {"exact_max_cells", f.ot.exact_max_cells}};
  j["partition"] = {{"scheme", name_of(kSchemeNames, f.partition.scheme)},
                    {"classes_per_client", f.partition.classes_per_client},
                    {"beta", f.partition.beta},
                    {"domains", f.partition.domains}};
  j["data"] = {{"source", name_of(kSourceNames, f.data.source)},
               {"classes", f.data.classes},
               {"dim", f.data.dim},
               {"samples_per_class", f.data.samples_per_class},
               {"spread", f.data.spread},
               {"shift_scale", f.data.shift_scale},
               {"rotation_strength", f.data.rotation_strength},
               {"idx_images", f.data.idx_images.string()},
               {"idx_labels", f.data.idx_labels.string()},
               {"test_fraction", f.data.test_fraction}};
  return j;
}

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

bool blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

std::string number(double x) {
  if (!std::isfinite(x)) throw Error(fmt::format("metrics value {} is not finite", x));
  return fmt::format("{}", x);
}

template <typename Fn>
std::string joined(const RoundRecord& record, std::string_view sep, Fn&& field) {
  std::string out;
  for (std::size_t i = 0; i < record.per_client.size(); ++i) {
    if (i > 0) out += sep;
    out += number(field(record.per_client[i]));
  }
  return out;
}

std::string joined_ids(std::span<const std::size_t> ids, std::string_view sep) {
  return fmt::format("{}", fmt::join(ids, sep));
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out.flush()) throw Error(fmt::format("failed writing {}", path.string()));
}

void prepare_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw Error(fmt::format("output directory {} is not writable: {}", dir.string(),
                            ec ? ec.message() : std::string("not a directory")));
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  federation.validate();
  if (experiment_id.empty() ||
      experiment_id.find_first_of(",\"\n\r;") != std::string::npos) {
    throw ConfigError("experiment_id must be non-empty and free of commas, quotes and newlines");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig preset(std::string_view name) {
  ExperimentConfig cfg;
  FederationConfig& f = cfg.federation;
  if (name == "paper") {
    cfg.experiment_id = "paper";
    cfg.output_dir = "runs/paper";
  } else if (name == "desk") {
    cfg.experiment_id = "desk";
    cfg.output_dir = "runs/desk";
    f.rounds = 50;
    f.sar.lr = 0.05;
    f.sar.batch_size = 32;
    // lambda * lr * steps per round matches the defaults' anchoring strength;
    // at lr 0.05 a lambda of 1 pins pruned clients to their dispatched model.
    f.sar.lambda = 0.05;
    f.hidden = {32, 32};
  } else if (name == "smoke") {
    cfg.experiment_id = "smoke";
    cfg.output_dir = "runs/smoke";
    f.rounds = 3;
    f.client_count = 4;
    f.hidden = {16};
    f.sar.local_epochs = 1;
    f.sar.lr = 0.05;
    f.sar.batch_size = 16;
    f.data.classes = 4;
    f.data.dim = 8;
    f.data.samples_per_class = 25;
  } else {
    throw ConfigError(fmt::format("unknown preset \"{}\" (expected smoke, desk or paper)", name));
  }
  return cfg;
}

ExperimentConfig parse_config(std::string_view text, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  if (!blank(text)) {
    json doc;
    try {
      doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
      const auto [line, column] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
      throw ConfigError(fmt::format("config parse error at line {}, column {}: {}", line, column,
                                    e.what()));
    }
    read_config(doc, cfg);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path,
                                   const ExperimentConfig& base) {
  std::string text;
  if (path == "-") {
    text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return parse_config(text, base);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_json(cfg).dump(2) + "\n";
}

MetricsSink::MetricsSink(const std::filesystem::path& path, MetricsFormat format)
    : out_(path, std::ios::binary | std::ios::trunc), format_(format) {
  if (!out_) throw Error(fmt::format("cannot open metrics file {}", path.string()));
  if (format_ == MetricsFormat::csv) {
    out_ << csv_header() << '\n';
    out_.flush();
  }
}

std::string_view MetricsSink::csv_header() {
  return "schema_version,experiment,method,seed,round,global_acc,mean_client_acc,global_loss,"
         "weight_sum,participating,client_rho,client_acc,client_drift_sq,client_ce_loss,"
         "client_sar_loss";
}

void MetricsSink::write(std::string_view experiment, std::string_view method, std::uint64_t seed,
                        const RoundRecord& r) {
  auto rho = [](const ClientRoundStats& s) { return s.rho; };
  auto acc = [](const ClientRoundStats& s) { return s.acc; };
  auto drift = [](const ClientRoundStats& s) { return s.drift_sq; };
  auto ce = [](const ClientRoundStats& s) { return s.ce_loss; };
  auto sar = [](const ClientRoundStats& s) { return s.sar_loss; };
  std::string line;
  if (format_ == MetricsFormat::csv) {
    line = fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", kMetricsSchemaVersion,
                       experiment, method, seed, r.round, number(r.global_acc),
                       number(r.mean_client_acc), number(r.global_loss), number(r.weight_sum),
                       joined_ids(r.participating, ";"), joined(r, ";", rho),
                       joined(r, ";", acc), joined(r, ";", drift), joined(r, ";", ce),
                       joined(r, ";", sar));
  } else {
    line = fmt::format(
        "{{\"schema_version\":{},\"experiment\":{},\"method\":{},\"seed\":{},\"round\":{},"
        "\"global_acc\":{},\"mean_client_acc\":{},\"global_loss\":{},\"weight_sum\":{},"
        "\"participating\":[{}],\"client_rho\":[{}],\"client_acc\":[{}],"
        "\"client_drift_sq\":[{}],\"client_ce_loss\":[{}],\"client_sar_loss\":[{}]}}",
        kMetricsSchemaVersion, json(std::string(experiment)).dump(),
        json(std::string(method)).dump(), seed, r.round, number(r.global_acc),
        number(r.mean_client_acc), number(r.global_loss), number(r.weight_sum),
        joined_ids(r.participating, ","), joined(r, ",", rho), joined(r, ",", acc),
        joined(r, ",", drift), joined(r, ",", ce), joined(r, ",", sar));
  }
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw Error("failed writing a metrics row");
}

std::filesystem::path metrics_path(const std::filesystem::path& dir, MetricsFormat format) {
  return dir / (format == MetricsFormat::csv ? "metrics.csv" : "metrics.jsonl");
}

double summary_accuracy(std::span<const RoundRecord> rounds) {
  if (rounds.empty()) return 0.0;
  const std::size_t k = std::min<std::size_t>(5, rounds.size());
  double total = 0.0;
  for (std::size_t i = rounds.size() - k; i < rounds.size(); ++i) {
    total += rounds[i].mean_client_acc;
  }
  return total / static_cast<double>(k);
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  prepare_output_dir(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", config_to_json(cfg));
  MetricsSink sink(metrics_path(cfg.output_dir, cfg.metrics_format), cfg.metrics_format);

  const FederationConfig& f = cfg.federation;
  const std::string method = f.method.label();
  Federation fed(f);
  ExperimentOutcome outcome;
  for (std::size_t t = 1; t <= f.rounds; ++t) {
    outcome.rounds.push_back(fed.step());
    sink.write(cfg.experiment_id, method, f.seed, outcome.rounds.back());
    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
      const auto dir = cfg.output_dir / "checkpoints" / fmt::format("round_{}", t);
      prepare_output_dir(dir);
      save_model(fed.global_model(), dir / "global.json");
    }
  }
  const auto models = cfg.output_dir / "models";
  prepare_output_dir(models);
  save_model(fed.global_model(), models / "global.json");
  for (const auto& client : fed.clients()) {
    save_model(fed.personalized_model(client.id), models / fmt::format("client_{}.json", client.id));
  }
  outcome.summary_acc = summary_accuracy(outcome.rounds);
  return outcome;
}

FederationConfig feature_shift_task(const FederationConfig& base) {
  FederationConfig f = base;
  f.client_count = 8;
  f.partition.scheme = PartitionScheme::feature_shift;
  f.partition.domains = 4;
  return f;
}

std::vector<SuiteCell> suite_cells(std::string_view suite, const FederationConfig& base) {
  std::vector<SuiteCell> cells;
  if (suite == "ablation") {
    const FederationConfig task = feature_shift_task(base);
    auto cell = [&](std::string name, auto&& tweak) {
      FederationConfig f = task;
      f.method = MethodSpec{};
      f.method.fusion_alpha = base.method.fusion_alpha;
      tweak(f.method);
      cells.push_back({std::move(name), std::move(f)});
    };
    cell("full", [](MethodSpec&) {});
    cell("w/o OTP", [](MethodSpec& m) { m.dispatch = DispatchKind::fixed_position; });
    cell("w/o SAR", [](MethodSpec& m) { m.local = LocalKind::plain; });
    cell("w/o OTA", [](MethodSpec& m) { m.aggregate = AggregateKind::positional; });
  } else if (suite == "proxy") {
    const FederationConfig task = feature_shift_task(base);
    const std::pair<const char*, ProxyKind> proxies[] = {
        {"Historical", ProxyKind::historical},
        {"Fixed-Pos.", ProxyKind::fixed_position},
        {"Magnitude", ProxyKind::magnitude},
        {"Random", ProxyKind::random}};
    for (const auto& [name, kind] : proxies) {
      FederationConfig f = task;
      f.method = MethodSpec{};
      f.method.fusion_alpha = base.method.fusion_alpha;
      f.method.proxy = kind;
      cells.push_back({name, std::move(f)});
    }
  } else if (suite == "sparsity") {
    const std::pair<const char*, std::vector<double>> regimes[] = {
        {"Low", {0.0, 0.125, 0.25, 0.375}},
        {"Medium", {0.0, 0.25, 0.5, 0.75}},
        {"High", {0.25, 0.45, 0.65, 0.85}}};
    for (const auto& [name, rates] : regimes) {
      FederationConfig f = base;
      f.rate_set = rates;
      f.rate_mode = RateMode::constant;
      cells.push_back({name, std::move(f)});
    }
    FederationConfig dynamic = base;
    dynamic.rate_set = {0.0, 0.25, 0.5, 0.75};
    dynamic.rate_mode = RateMode::dynamic;
    cells.push_back({"Dynamic", std::move(dynamic)});
  } else if (suite == "heterogeneity") {
    for (std::size_t n : {4, 6, 8}) {
      FederationConfig f = base;
      f.partition.scheme = PartitionScheme::pathological;
      f.partition.classes_per_client = n;
      cells.push_back({fmt::format("n={}", n), std::move(f)});
    }
    for (double beta : {0.3, 0.5, 1.0}) {
      FederationConfig f = base;
      f.partition.scheme = PartitionScheme::dirichlet;
      f.partition.beta = beta;
      cells.push_back({fmt::format("beta={}", beta), std::move(f)});
    }
  } else {
    throw ConfigError(fmt::format(
        "unknown suite \"{}\" (expected ablation, sparsity, heterogeneity or proxy)", suite));
  }
  return cells;
}

std::vector<SuiteCellSummary> run_suite(std::string_view suite, const ExperimentConfig& base,
                                        std::size_t seeds, std::ostream& report) {
  base.validate();
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  const auto cells = suite_cells(suite, base.federation);
  for (const auto& cell : cells) cell.federation.validate();

  prepare_output_dir(base.output_dir);
  write_text(base.output_dir / "config.json", config_to_json(base));
  MetricsSink sink(metrics_path(base.output_dir, base.metrics_format), base.metrics_format);

  std::vector<SuiteCellSummary> summaries;
  for (const auto& cell : cells) {
    SuiteCellSummary summary;
    summary.name = cell.name;
    summary.method = cell.federation.method.label();
    const std::string experiment = fmt::format("{}/{}", suite, cell.name);
    for (std::size_t s = 0; s < seeds; ++s) {
      FederationConfig f = cell.federation;
      f.seed = base.federation.seed + s;
      Federation fed(f);
      std::vector<RoundRecord> rounds;
      for (std::size_t t = 0; t < f.rounds; ++t) {
        rounds.push_back(fed.step());
        sink.write(experiment, summary.method, f.seed, rounds.back());
      }
      summary.per_seed_acc.push_back(summary_accuracy(rounds));
    }
    const auto& accs = summary.per_seed_acc;
    summary.mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    const auto [lo, hi] = std::minmax_element(accs.begin(), accs.end());
    summary.min = *lo;
    summary.max = *hi;
    summaries.push_back(std::move(summary));
  }

  std::string table = "cell,method,seeds,mean_acc,min_acc,max_acc,per_seed_acc\n";
  for (const auto& s : summaries) {
    table += fmt::format("{},{},{},{},{},{},{}\n", s.name, s.method, s.per_seed_acc.size(),
                         number(s.mean), number(s.min), number(s.max),
                         fmt::join(s.per_seed_acc, ";"));
  }
  write_text(base.output_dir / "summary.csv", table);

  report << fmt::format("{:<12} {:<28} {:>9} {:>9} {:>9}\n", "cell", "method", "mean_acc",
                        "min", "max");
  for (const auto& s : summaries) {
    report << fmt::format("{:<12} {:<28} {:>9.4f} {:>9.4f} {:>9.4f}\n", s.name, s.method, s.mean,
                          s.min, s.max);
  }
  return summaries;
}

}  // namespace subflot

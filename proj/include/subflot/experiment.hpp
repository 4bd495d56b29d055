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

// Experiment runner: JSON configuration, presets, metrics sinks, model
// artifacts and the preset experiment suites.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "subflot/federation.hpp"

namespace subflot {

enum class MetricsFormat { csv, jsonl };

struct ExperimentConfig {
  FederationConfig federation;
  std::filesystem::path output_dir = "runs/default";
  MetricsFormat metrics_format = MetricsFormat::csv;
  std::size_t checkpoint_every = 0;  // 0 = never
  std::string experiment_id = "run";

  void validate() const;
};

/// Bumped whenever a metrics column is added, removed or reinterpreted.
inline constexpr int kMetricsSchemaVersion = 1;

/// Names accepted by preset().
inline constexpr std::string_view kPresetNames[] = {"smoke", "desk", "paper"};

/// Defaults overlaid with a named preset. Throws ConfigError for unknown names.
ExperimentConfig preset(std::string_view name);

/// Overlays the JSON document `text` on `base`. Missing keys keep their base
/// value; an empty document yields `base`. Unknown keys, type mismatches and
/// malformed JSON raise ConfigError naming the key path or the line.
ExperimentConfig parse_config(std::string_view text, const ExperimentConfig& base = {});

/// parse_config on a file, or on stdin when `path` is "-".
ExperimentConfig parse_config_file(const std::filesystem::path& path,
                                   const ExperimentConfig& base = {});

/// Fully resolved config as JSON. Parsing the result reproduces `cfg`.
std::string config_to_json(const ExperimentConfig& cfg);

/// One metrics row per call, flushed immediately.
class MetricsSink {
 public:
  MetricsSink(const std::filesystem::path& path, MetricsFormat format);

  void write(std::string_view experiment, std::string_view method, std::uint64_t seed,
             const RoundRecord& record);

  static std::string_view csv_header();

 private:
  std::ofstream out_;
  MetricsFormat format_;
};

std::filesystem::path metrics_path(const std::filesystem::path& dir, MetricsFormat format);

struct ExperimentOutcome {
  std::vector<RoundRecord> rounds;
  /// Mean client accuracy averaged over the last (up to) 5 rounds.
  double summary_acc = 0.0;
};

/// Mean client accuracy over the last min(5, rounds) records.
double summary_accuracy(std::span<const RoundRecord> rounds);

/// Runs one federation into cfg.output_dir:
///   config.json                 resolved config
///   metrics.csv | metrics.jsonl one row per round
///   models/global.json          final global model
///   models/client_<i>.json      personalized submodel of every client
///   checkpoints/round_<t>/global.json  every checkpoint_every rounds
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

struct SuiteCell {
  std::string name;
  FederationConfig federation;
};

inline constexpr std::string_view kSuiteNames[] = {"ablation", "sparsity", "heterogeneity",
                                                   "proxy"};

/// The method/parameter matrix of a suite, layered on `base`.
std::vector<SuiteCell> suite_cells(std::string_view suite, const FederationConfig& base);

struct SuiteCellSummary {
  std::string name;
  std::string method;
  std::vector<double> per_seed_acc;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Runs every cell for `seeds` consecutive seeds starting at base.federation.seed.
/// Writes config.json, one combined metrics file and summary.csv to
/// base.output_dir, and prints the summary table to `report`.
std::vector<SuiteCellSummary> run_suite(std::string_view suite, const ExperimentConfig& base,
                                        std::size_t seeds, std::ostream& report);

/// Task shared by the ablation and proxy suites: 4 feature-shifted domains,
/// 8 clients, desk-scale training.
FederationConfig feature_shift_task(const FederationConfig& base);

}  // namespace subflot

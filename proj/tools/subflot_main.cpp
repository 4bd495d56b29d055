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

// Command-line front end:
//   subflot run <config|-> [flags]
//   subflot suite <ablation|sparsity|heterogeneity|proxy> [--config FILE] [flags]
// Settings resolve as defaults, then --preset, then the config file, then flags.

#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "subflot/error.hpp"
#include "subflot/experiment.hpp"

namespace {

struct Overrides {
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::size_t seeds = 1;
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<std::size_t> threads;
};

void add_common_flags(CLI::App& cmd, Overrides& o, const std::string& default_preset) {
  o.preset = default_preset;
  cmd.add_option("--preset", o.preset, "Base settings: smoke, desk or paper")
      ->check(CLI::IsMember({"smoke", "desk", "paper"}))
      ->capture_default_str();
  cmd.add_option("--seed", o.seed, "Base random seed");
  cmd.add_option("--seeds", o.seeds, "Number of consecutive seeds to run")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd.add_option("--out", o.out, "Output directory");
  cmd.add_option("--format", o.format, "Metrics format")->check(CLI::IsMember({"csv", "jsonl"}));
  cmd.add_option("--threads", o.threads, "Worker threads per round")->check(CLI::PositiveNumber);
}

subflot::ExperimentConfig resolve(const Overrides& o, const std::string& config_path) {
  auto cfg = subflot::preset(o.preset);
  if (!config_path.empty()) cfg = subflot::parse_config_file(config_path, cfg);
  if (o.seed) cfg.federation.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.format) {
    cfg.metrics_format =
        *o.format == "jsonl" ? subflot::MetricsFormat::jsonl : subflot::MetricsFormat::csv;
  }
  if (o.threads) cfg.federation.threads = *o.threads;
  cfg.validate();
  return cfg;
}

int report_error(std::string_view kind, std::string_view message) {
  nlohmann::json err = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << err.dump() << '\n';
  return kind == "ConfigError" ? 2 : 1;
}

int run_command(const Overrides& o, const std::string& config_path) {
  const auto cfg = resolve(o, config_path);
  for (std::size_t s = 0; s < o.seeds; ++s) {
    auto seeded = cfg;
    seeded.federation.seed = cfg.federation.seed + s;
    if (o.seeds > 1) seeded.output_dir = cfg.output_dir / fmt::format("seed_{}", seeded.federation.seed);
    const auto outcome = subflot::run_experiment(seeded);
    std::cout << fmt::format("{} seed {}: {} rounds, final mean client acc {:.4f} -> {}\n",
                             seeded.experiment_id, seeded.federation.seed, outcome.rounds.size(),
                             outcome.summary_acc, seeded.output_dir.string());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated submodel training with optimal-transport alignment"};
  app.require_subcommand(1);

  Overrides run_flags;
  std::string run_config;
  auto* run = app.add_subcommand("run", "Run one experiment from a JSON config ('-' reads stdin)");
  run->add_option("config", run_config, "Config file")->required();
  add_common_flags(*run, run_flags, "paper");

  Overrides suite_flags;
  std::string suite_name;
  std::string suite_config;
  auto* suite = app.add_subcommand("suite", "Run a preset experiment matrix");
  suite->add_option("name", suite_name, "ablation, sparsity, heterogeneity or proxy")
      ->required()
      ->check(CLI::IsMember({"ablation", "sparsity", "heterogeneity", "proxy"}));
  suite->add_option("--config", suite_config, "Config file layered over the preset");
  add_common_flags(*suite, suite_flags, "desk");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(run_flags, run_config);
    auto cfg = resolve(suite_flags, suite_config);
    if (!suite_flags.out) cfg.output_dir = std::filesystem::path("runs") / suite_name;
    cfg.experiment_id = suite_name;
    subflot::run_suite(suite_name, cfg, suite_flags.seeds, std::cout);
    std::cout << "results in " << cfg.output_dir.string() << '\n';
    return 0;
  } catch (const subflot::ConfigError& e) {
    return report_error("ConfigError", e.what());
  } catch (const subflot::OtError& e) {
    return report_error("OtError", e.what());
  } catch (const subflot::TrainingError& e) {
    return report_error("TrainingError", e.what());
  } catch (const subflot::DataError& e) {
    return report_error("DataError", e.what());
  } catch (const std::exception& e) {
    return report_error("Error", e.what());
  }
}

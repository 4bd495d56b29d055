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


#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "subflot/error.hpp"
#include "subflot/experiment.hpp"
#include "subflot/model_io.hpp"

using namespace subflot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("subflot_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string config_error(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

ExperimentConfig smoke_into(const fs::path& dir, MetricsFormat format) {
  ExperimentConfig cfg = preset("smoke");
  cfg.output_dir = dir;
  cfg.metrics_format = format;
  return cfg;
}

}  // namespace

TEST_CASE("an empty document gives the defaults") {
  for (const char* text : {"", "  \n", "{}"}) {
    const ExperimentConfig cfg = parse_config(text);
    const FederationConfig& f = cfg.federation;
    CHECK(f.client_count == 20);
    CHECK(f.rounds == 200);
    CHECK(f.join_ratio == 1.0);
    CHECK(f.method.fusion_alpha == 0.5);
    CHECK(f.sar.lambda == 1.0);
    CHECK(f.sar.local_epochs == 5);
    CHECK(f.sar.lr == 0.001);
    CHECK(f.sar.batch_size == 256);
    CHECK(f.rate_set == std::vector<double>{0.0, 0.25, 0.5, 0.75});
    CHECK(f.partition.scheme == PartitionScheme::dirichlet);
    CHECK(f.partition.beta == 0.1);
  }
}

TEST_CASE("config values overlay the base") {
  const auto cfg = parse_config(R"({"rounds": 7, "method": {"alpha": 0.25, "dispatch": "random"},
                                    "sar": {"lambda": 5}, "rate_set": [0, 0.5]})",
                                preset("desk"));
  CHECK(cfg.federation.rounds == 7);
  CHECK(cfg.federation.method.fusion_alpha == 0.25);
  CHECK(cfg.federation.method.dispatch == DispatchKind::random);
  CHECK(cfg.federation.sar.lambda == 5.0);
  CHECK(cfg.federation.rate_set == std::vector<double>{0.0, 0.5});
  CHECK(cfg.federation.sar.batch_size == preset("desk").federation.sar.batch_size);
}

TEST_CASE("config errors name the problem") {
  CHECK(config_error(R"({"method": {"alpha": 1.5}})").find("alpha") != std::string::npos);
  CHECK(config_error(R"({"foo": 1})").find("\"foo\"") != std::string::npos);
  CHECK(config_error(R"({"sar": {"foo": 1}})").find("sar.foo") != std::string::npos);
  CHECK(config_error(R"({"rounds": "many"})").find("rounds") != std::string::npos);
  CHECK(config_error(R"({"method": {"dispatch": "best"}})").find("dispatch") !=
        std::string::npos);
  CHECK(config_error(R"({"rounds": 0})").find("rounds") != std::string::npos);
  CHECK(config_error("[1, 2]").find("object") != std::string::npos);

  const std::string parse = config_error("{\n  \"rounds\": 3,\n  \"seed\": ,\n}");
  CHECK(parse.find("line 3") != std::string::npos);

  CHECK_THROWS_AS(preset("huge"), ConfigError);
  CHECK_THROWS_AS(parse_config_file("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("the config echo replays exactly") {
  for (const char* name : {"smoke", "desk", "paper"}) {
    ExperimentConfig cfg = preset(name);
    cfg.federation.ot.epsilon = 0.125;
    cfg.federation.method.proxy = ProxyKind::magnitude;
    cfg.federation.rate_mode = RateMode::dynamic;
    cfg.metrics_format = MetricsFormat::jsonl;
    const std::string echo = config_to_json(cfg);
    CHECK(config_to_json(parse_config(echo)) == echo);
    // Replay does not depend on the base it is layered on.
    CHECK(config_to_json(parse_config(echo, preset("smoke"))) == echo);
  }
}

TEST_CASE("smoke run writes metrics, config echo and models") {
  TempDir dir("smoke");
  const auto start = std::chrono::steady_clock::now();
  const auto outcome = run_experiment(smoke_into(dir.path / "a", MetricsFormat::csv));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 30.0);
  CHECK(outcome.rounds.size() == 3);

  const auto rows = lines(slurp(dir.path / "a" / "metrics.csv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == MetricsSink::csv_header());
  for (std::size_t k = 1; k < rows.size(); ++k) {
    CHECK(split(rows[k], ',').size() == split(rows[0], ',').size());
  }
  CHECK(fs::exists(dir.path / "a" / "config.json"));
  const LayerStack global = load_model(dir.path / "a" / "models" / "global.json");
  CHECK(global.input_dim() == preset("smoke").federation.data.dim);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(fs::exists(dir.path / "a" / "models" / ("client_" + std::to_string(i) + ".json")));
  }

  // Same config: byte-identical metrics.
  run_experiment(smoke_into(dir.path / "b", MetricsFormat::csv));
  CHECK(slurp(dir.path / "a" / "metrics.csv") == slurp(dir.path / "b" / "metrics.csv"));
}

TEST_CASE("CSV and JSONL sinks carry the same numbers") {
  TempDir dir("formats");
  run_experiment(smoke_into(dir.path / "csv", MetricsFormat::csv));
  run_experiment(smoke_into(dir.path / "jsonl", MetricsFormat::jsonl));
  const auto csv = lines(slurp(dir.path / "csv" / "metrics.csv"));
  const auto jsonl = lines(slurp(dir.path / "jsonl" / "metrics.jsonl"));
  REQUIRE(csv.size() == jsonl.size() + 1);
  const auto header = split(csv[0], ',');
  for (std::size_t k = 0; k < jsonl.size(); ++k) {
    const auto fields = split(csv[k + 1], ',');
    const json row = json::parse(jsonl[k]);
    REQUIRE(fields.size() == header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
      const json& v = row.at(header[c]);
      INFO(header[c]);
      if (v.is_string()) {
        CHECK(fields[c] == v.get<std::string>());
      } else if (v.is_array()) {
        const auto items = fields[c].empty() ? std::vector<std::string>{} : split(fields[c], ';');
        REQUIRE(items.size() == v.size());
        for (std::size_t i = 0; i < items.size(); ++i) {
          CHECK(std::stod(items[i]) == v[i].get<double>());
        }
      } else {
        CHECK(std::stod(fields[c]) == v.get<double>());
      }
    }
  }
}

TEST_CASE("checkpoints") {
  TempDir dir("ckpt");
  auto cfg = smoke_into(dir.path, MetricsFormat::csv);
  cfg.checkpoint_every = 2;
  run_experiment(cfg);
  CHECK(fs::exists(dir.path / "checkpoints" / "round_2" / "global.json"));
  CHECK_FALSE(fs::exists(dir.path / "checkpoints" / "round_1"));
}

TEST_CASE("suite cells") {
  const FederationConfig base = preset("desk").federation;
  auto names = [&](std::string_view suite) {
    std::vector<std::string> out;
    for (const auto& c : suite_cells(suite, base)) out.push_back(c.name);
    return out;
  };
  CHECK(names("ablation") == std::vector<std::string>{"full", "w/o OTP", "w/o SAR", "w/o OTA"});
  CHECK(names("proxy") ==
        std::vector<std::string>{"Historical", "Fixed-Pos.", "Magnitude", "Random"});
  CHECK(names("sparsity") == std::vector<std::string>{"Low", "Medium", "High", "Dynamic"});
  CHECK(names("heterogeneity").size() == 6);
  CHECK_THROWS_AS(suite_cells("everything", base), ConfigError);

  const auto ablation = suite_cells("ablation", base);
  CHECK(ablation[1].federation.method.dispatch == DispatchKind::fixed_position);
  CHECK(ablation[2].federation.method.local == LocalKind::plain);
  CHECK(ablation[3].federation.method.aggregate == AggregateKind::positional);

  const auto sparsity = suite_cells("sparsity", base);
  CHECK(sparsity[0].federation.rate_set == std::vector<double>{0.0, 0.125, 0.25, 0.375});
  CHECK(sparsity[3].federation.rate_mode == RateMode::dynamic);
}

TEST_CASE("command-line interface") {
  TempDir dir("binary");
  const fs::path bin = SUBFLOT_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = bin.string() + " " + args + " > " + (dir.path / "out").string() +
                            " 2> " + (dir.path / "err").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };

  std::ofstream(dir.path / "bad.json") << R"({"foo": 1})";
  CHECK(run("run " + (dir.path / "bad.json").string() + " --preset smoke") == 2);
  const json err = json::parse(slurp(dir.path / "err"));
  CHECK(err["error"]["kind"] == "ConfigError");
  CHECK(err["error"]["message"].get<std::string>().find("foo") != std::string::npos);

  std::ofstream(dir.path / "ok.json") << R"({"rounds": 2})";
  CHECK(run("run " + (dir.path / "ok.json").string() + " --preset smoke --format jsonl --out " +
            (dir.path / "run").string()) == 0);
  CHECK(lines(slurp(dir.path / "run" / "metrics.jsonl")).size() == 2);

  CHECK(run("run " + (dir.path / "ok.json").string() + " --preset smoke --seeds 2 --out " +
            (dir.path / "multi").string()) == 0);
  CHECK(fs::exists(dir.path / "multi" / "seed_0" / "metrics.csv"));
  CHECK(fs::exists(dir.path / "multi" / "seed_1" / "metrics.csv"));

  CHECK(run("suite nonsense") != 0);
}

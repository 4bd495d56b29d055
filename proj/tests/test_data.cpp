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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "subflot/data.hpp"
#include "subflot/error.hpp"

using namespace subflot;
namespace fs = std::filesystem;

namespace {

SyntheticSpec synth(std::size_t classes, std::size_t dim, std::size_t per_class,
                    std::uint64_t seed, double spread = 1.0) {
  SyntheticSpec s;
  s.class_count = classes;
  s.dim = dim;
  s.samples_per_class = per_class;
  s.cluster_spread = spread;
  s.seed = seed;
  return s;
}

PartitionSpec pspec(PartitionScheme scheme, std::size_t clients, std::uint64_t seed) {
  PartitionSpec p;
  p.scheme = scheme;
  p.client_count = clients;
  p.seed = seed;
  return p;
}

using Sample = std::pair<std::vector<double>, std::size_t>;

std::vector<Sample> samples(const LabeledDataset& d) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.emplace_back(std::vector<double>(d.features.row(i).begin(), d.features.row(i).end()),
                     d.labels[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Multiset equality of (features, label) pairs.
bool same_multiset(const LabeledDataset& a, const LabeledDataset& b) {
  return samples(a) == samples(b);
}

std::set<std::size_t> classes_of(const LabeledDataset& d) {
  return {d.labels.begin(), d.labels.end()};
}

double distance(const Matrix& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
  return std::sqrt(s);
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> join(std::initializer_list<std::vector<std::uint8_t>> parts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("subflot_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synthetic task examples") {
  const auto a = gen_synthetic(synth(5, 6, 30, 1));
  CHECK(a.size() == 150);
  CHECK(a.features.cols() == 6);
  std::map<std::size_t, std::size_t> counts;
  for (auto y : a.labels) ++counts[y];
  CHECK(counts.size() == 5);
  for (const auto& [c, n] : counts) CHECK(n == 30);

  CHECK(gen_synthetic(synth(5, 6, 30, 1)).features == a.features);
  CHECK_FALSE(gen_synthetic(synth(5, 6, 30, 2)).features == a.features);

  CHECK_THROWS_AS(gen_synthetic(synth(0, 6, 30, 1)), DataError);
  CHECK_THROWS_AS(gen_synthetic(synth(5, 6, 30, 1, 0.0)), DataError);
}

TEST_CASE("nearly noiseless clusters are separable by nearest centroid") {
  const auto d = gen_synthetic(synth(8, 5, 20, 3, 1e-6));
  Matrix centroid(8, 5);
  std::vector<double> count(8, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t c = 0; c < 5; ++c) centroid(d.labels[i], c) += d.features(i, c);
    count[d.labels[i]] += 1.0;
  }
  for (std::size_t k = 0; k < 8; ++k) {
    for (std::size_t c = 0; c < 5; ++c) centroid(k, c) /= count[k];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < 8; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += std::pow(d.features(i, c) - centroid(k, c), 2);
      if (s < best_d) best_d = s, best = k;
    }
    correct += best == d.labels[i];
  }
  CHECK(correct == d.size());
}

TEST_CASE("feature shift domains") {
  FeatureShiftSpec fs_spec;
  fs_spec.base = synth(3, 6, 10, 4);
  fs_spec.domains = 3;

  SUBCASE("no shift and no rotation gives identical domains") {
    fs_spec.shift_scale = 0.0;
    fs_spec.rotation_strength = 0.0;
    const auto domains = gen_feature_shift(fs_spec);
    REQUIRE(domains.size() == 3);
    for (const auto& d : domains) CHECK(d.features == domains[0].features);
  }
  SUBCASE("each domain is an isometry of the base samples") {
    const auto base = gen_synthetic(fs_spec.base);
    const auto domains = gen_feature_shift(fs_spec);
    for (const auto& d : domains) {
      CHECK(d.labels == base.labels);
      for (std::size_t i = 0; i < base.size(); i += 3) {
        for (std::size_t j = i + 1; j < base.size(); j += 2) {
          CHECK(std::abs(distance(d.features, i, j) - distance(base.features, i, j)) < 1e-9);
        }
      }
    }
  }
  SUBCASE("distinct rotation seeds give distinct domain means") {
    auto mean0 = [](const LabeledDataset& d) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) s += d.features(i, 0);
      return s / static_cast<double>(d.size());
    };
    const auto a = gen_feature_shift(fs_spec);
    fs_spec.rotation_seed = 99;
    const auto b = gen_feature_shift(fs_spec);
    CHECK(mean0(a[1]) != mean0(b[1]));
    CHECK(mean0(a[0]) != mean0(a[1]));
  }
  SUBCASE("rotations are orthogonal") {
    const Matrix r = random_rotation(7, 1.0, 5);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < 7; ++k) dot += r(k, i) * r(k, j);
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    }
  }
  SUBCASE("a single domain is rejected") {
    fs_spec.domains = 1;
    CHECK_THROWS_AS(gen_feature_shift(fs_spec), DataError);
  }
}

TEST_CASE("partitions conserve the data and weight clients by size") {
  const auto data = gen_synthetic(synth(6, 3, 40, 7));
  for (auto scheme : {PartitionScheme::iid, PartitionScheme::pathological,
                      PartitionScheme::dirichlet}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto spec = pspec(scheme, 7, seed);
      spec.beta = 0.5;
      const Partition part = partition(data, spec);
      REQUIRE(part.clients.size() == 7);
      CHECK(same_multiset(concat(part.clients), data));

      double sum = 0.0;
      for (std::size_t i = 0; i < 7; ++i) {
        CHECK(part.clients[i].size() >= 1);
        CHECK(part.weights[i] ==
              static_cast<double>(part.clients[i].size()) / static_cast<double>(data.size()));
        sum += part.weights[i];
        // Source indices point at the same rows.
        for (std::size_t k = 0; k < part.clients[i].size(); ++k) {
          CHECK(part.clients[i].labels[k] == data.labels[part.source_indices[i][k]]);
        }
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("iid split with an even count gives equal weights") {
  const auto data = gen_synthetic(synth(4, 3, 25, 8));
  const Partition part = partition(data, pspec(PartitionScheme::iid, 5, 1));
  for (double w : part.weights) CHECK(w == 0.2);
}

TEST_CASE("pathological split") {
  const auto data = gen_synthetic(synth(10, 3, 30, 9));
  SUBCASE("each client sees exactly n classes and every class is claimed") {
    for (std::size_t n : {1, 2, 3}) {
      auto spec = pspec(PartitionScheme::pathological, 8, n);
      spec.classes_per_client = n;
      const Partition part = partition(data, spec);
      std::set<std::size_t> claimed;
      for (const auto& c : part.clients) {
        CHECK(classes_of(c).size() == n);
        for (auto y : classes_of(c)) claimed.insert(y);
      }
      if (n * 8 >= 10) CHECK(claimed.size() == 10);
    }
  }
  SUBCASE("n = class count gives every client all classes") {
    auto spec = pspec(PartitionScheme::pathological, 5, 2);
    spec.classes_per_client = 10;
    for (const auto& c : partition(data, spec).clients) CHECK(classes_of(c).size() == 10);
  }
  SUBCASE("n above the class count is rejected") {
    auto spec = pspec(PartitionScheme::pathological, 5, 2);
    spec.classes_per_client = 11;
    CHECK_THROWS_AS(partition(data, spec), DataError);
  }
}

TEST_CASE("dirichlet label entropy grows with beta") {
  const std::vector<double> betas{0.1, 0.3, 1.0};
  std::vector<double> mean_entropy(betas.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = gen_synthetic(synth(10, 2, 60, seed));
    for (std::size_t b = 0; b < betas.size(); ++b) {
      auto spec = pspec(PartitionScheme::dirichlet, 10, seed);
      spec.beta = betas[b];
      const Partition part = partition(data, spec);
      double h = 0.0;
      for (const auto& c : part.clients) h += label_entropy(c);
      mean_entropy[b] += h / 10.0 / 10.0;
    }
  }
  CHECK(mean_entropy[0] <= mean_entropy[1]);
  CHECK(mean_entropy[1] <= mean_entropy[2]);
  CHECK(mean_entropy[2] <= std::log(10.0));

  auto bad = pspec(PartitionScheme::dirichlet, 4, 0);
  bad.beta = 0.0;
  CHECK_THROWS_AS(partition(gen_synthetic(synth(3, 2, 5, 0)), bad), DataError);
}

TEST_CASE("too many clients for the data is an error") {
  const auto data = gen_synthetic(synth(2, 2, 2, 0));
  CHECK_THROWS_AS(partition(data, pspec(PartitionScheme::iid, 5, 0)), DataError);
}

TEST_CASE("domain partition") {
  FeatureShiftSpec fs_spec;
  fs_spec.base = synth(3, 4, 8, 5);
  fs_spec.domains = 2;
  const auto domains = gen_feature_shift(fs_spec);
  auto spec = pspec(PartitionScheme::feature_shift, 4, 3);
  spec.domains = 2;
  const Partition part = partition_domains(domains, spec);
  REQUIRE(part.clients.size() == 4);
  CHECK(same_multiset(concat(part.clients), concat(domains)));
  // Client i draws only from domain i mod 2.
  const std::size_t per_domain = domains[0].size();
  for (std::size_t i = 0; i < 4; ++i) {
    for (auto idx : part.source_indices[i]) CHECK(idx / per_domain == i % 2);
  }
  CHECK_THROWS_AS(partition(domains[0], spec), DataError);
}

TEST_CASE("train/test split") {
  const auto data = gen_synthetic(synth(2, 3, 10, 6));
  const auto s = split_train_test(data, 0.2, 4);
  CHECK(s.test.size() == 4);
  CHECK(s.train.size() == 16);
  LabeledDataset both[] = {s.train, s.test};
  CHECK(same_multiset(concat(both), data));
  CHECK(split_train_test(data, 0.2, 4).test.features == s.test.features);

  const auto one = gen_synthetic(synth(1, 3, 1, 6));
  CHECK(split_train_test(one, 0.5, 0).test.size() == 0);
  CHECK_THROWS_AS(split_train_test(data, 1.0, 0), DataError);
}

TEST_CASE("label entropy") {
  LabeledDataset d;
  d.class_count = 4;
  d.features = Matrix(4, 1);
  d.labels = {0, 1, 2, 3};
  CHECK(label_entropy(d) == doctest::Approx(std::log(4.0)));
  d.labels = {2, 2, 2, 2};
  CHECK(label_entropy(d) == 0.0);
}

TEST_CASE("IDX loading") {
  TempDir dir("idx");
  const auto img = dir.path / "images";
  const auto lab = dir.path / "labels";

  SUBCASE("handcrafted 2x2 image") {
    write_bytes(img, join({be32(0x803), be32(1), be32(2), be32(2), {0, 255, 128, 64}}));
    write_bytes(lab, join({be32(0x801), be32(1), {7}}));
    const auto d = load_idx(img, lab);
    REQUIRE(d.size() == 1);
    CHECK(d.features.cols() == 4);
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(0, 1) == 1.0);
    CHECK(d.features(0, 2) == 128.0 / 255.0);
    CHECK(d.features(0, 3) == 64.0 / 255.0);
    CHECK(d.labels[0] == 7);
  }
  SUBCASE("bad magic") {
    write_bytes(img, join({be32(0x801), be32(1), be32(2), be32(2), {0, 1, 2, 3}}));
    write_bytes(lab, join({be32(0x801), be32(1), {7}}));
    CHECK_THROWS_AS(load_idx(img, lab), IdxMagicError);
  }
  SUBCASE("truncated pixels") {
    write_bytes(img, join({be32(0x803), be32(2), be32(2), be32(2), {0, 1, 2, 3, 4}}));
    write_bytes(lab, join({be32(0x801), be32(2), {1, 2}}));
    CHECK_THROWS_AS(load_idx(img, lab), IdxTruncatedError);
  }
  SUBCASE("truncated header") {
    write_bytes(img, join({be32(0x803), be32(1)}));
    write_bytes(lab, join({be32(0x801), be32(1), {7}}));
    CHECK_THROWS_AS(load_idx(img, lab), IdxTruncatedError);
  }
  SUBCASE("count mismatch") {
    write_bytes(img, join({be32(0x803), be32(1), be32(2), be32(2), {0, 1, 2, 3}}));
    write_bytes(lab, join({be32(0x801), be32(2), {7, 8}}));
    CHECK_THROWS_AS(load_idx(img, lab), IdxCountMismatchError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_idx(dir.path / "nope", lab), DataError);
  }
  SUBCASE("writer round-trip") {
    LabeledDataset d;
    d.class_count = 10;
    d.features = Matrix(3, 6);
    for (std::size_t k = 0; k < d.features.size(); ++k) {
      d.features.data()[k] = static_cast<double>((k * 37) % 256) / 255.0;
    }
    d.labels = {3, 0, 9};
    write_idx(d, 2, 3, img, lab);
    const auto back = load_idx(img, lab);
    CHECK(back.features == d.features);
    CHECK(back.labels == d.labels);
  }
}

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

// Synthetic classification tasks, IDX (MNIST-format) ingestion, and the
// non-IID client partitioners.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "subflot/nn.hpp"

namespace subflot {

struct LabeledDataset : Batch {
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  /// Throws DataError on empty data, mismatched lengths or out-of-range labels.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t class_count = 10;
  std::size_t dim = 32;
  std::size_t samples_per_class = 200;
  double cluster_spread = 1.0;
  std::uint64_t seed = 0;
};

/// Isotropic Gaussian clusters around seeded class means drawn uniformly
/// from [-1, 1]^dim. Samples are grouped by class.
LabeledDataset gen_synthetic(const SyntheticSpec& spec);

struct FeatureShiftSpec {
  SyntheticSpec base;
  std::size_t domains = 4;
  double shift_scale = 1.0;
  // Rotation angles are drawn from +-strength * pi; 0 gives the identity.
  double rotation_strength = 1.0;
  std::uint64_t rotation_seed = 1;
};

/// One dataset per domain: the shared base samples under a seeded rotation
/// plus a mean shift of norm shift_scale. Labels are unchanged.
std::vector<LabeledDataset> gen_feature_shift(const FeatureShiftSpec& spec);

/// Product of Givens rotations on random coordinate pairs.
Matrix random_rotation(std::size_t dim, double strength, std::uint64_t seed);

enum class PartitionScheme { iid, pathological, dirichlet, feature_shift };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::dirichlet;
  std::size_t classes_per_client = 2;  // pathological
  double beta = 0.1;                   // dirichlet
  std::size_t domains = 4;             // feature_shift
  std::size_t client_count = 20;
  std::uint64_t seed = 0;

  void validate(std::size_t class_count) const;
};

struct Partition {
  std::vector<LabeledDataset> clients;
  std::vector<double> weights;  // |D_i| / sum_j |D_j|
  // Row indices into the source data (for feature_shift: into the
  // concatenation of the domains in order).
  std::vector<std::vector<std::size_t>> source_indices;
};

/// iid, pathological or dirichlet split of one dataset.
Partition partition(const LabeledDataset& data, const PartitionSpec& spec);

/// feature_shift split: client i draws from domain i mod D; each domain's
/// samples are dealt evenly among its clients.
Partition partition_domains(std::span<const LabeledDataset> domains, const PartitionSpec& spec);

std::vector<double> size_weights(std::span<const LabeledDataset> parts);

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices);
LabeledDataset concat(std::span<const LabeledDataset> parts);

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// Seeded shuffle, then round(test_fraction * n) samples go to test, keeping at
/// least one training sample.
TrainTestSplit split_train_test(const LabeledDataset& data, double test_fraction,
                                std::uint64_t seed);

/// Shannon entropy (nats) of the label histogram.
double label_entropy(const LabeledDataset& data);

/// Reads an IDX3 image file (magic 0x00000803) and IDX1 label file (magic
/// 0x00000801). Pixels are scaled to [0, 1] and flattened row-major.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes features (rounded from [0, 1] to bytes) as IDX3 with the given
/// image geometry, and labels as IDX1.
void write_idx(const LabeledDataset& data, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace subflot

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

#include "subflot/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "subflot/error.hpp"
#include "subflot/random.hpp"

namespace subflot {

void LabeledDataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (labels.size() != features.rows()) {
    throw DataError(fmt::format("{} labels for {} feature rows", labels.size(), features.rows()));
  }
  for (std::size_t y : labels) {
    if (y >= class_count) {
      throw DataError(fmt::format("label {} out of range for {} classes", y, class_count));
    }
  }
}

LabeledDataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.class_count < 1 || spec.dim < 1 || spec.samples_per_class < 1) {
    throw DataError("synthetic task needs at least one class, dimension and sample");
  }
  if (!(spec.cluster_spread > 0.0)) throw DataError("cluster spread must be > 0");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> center(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.cluster_spread);

  Matrix means(spec.class_count, spec.dim);
  for (double& x : means.data()) x = center(rng);

  LabeledDataset out;
  out.class_count = spec.class_count;
  out.features = Matrix(spec.class_count * spec.samples_per_class, spec.dim);
  out.labels.reserve(out.features.rows());
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
      auto row = out.features.row(r);
      for (std::size_t d = 0; d < spec.dim; ++d) row[d] = means(c, d) + noise(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

Matrix random_rotation(std::size_t dim, double strength, std::uint64_t seed) {
  Matrix q = Matrix::identity(dim);
  if (strength == 0.0 || dim < 2) return q;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::size_t> coords(dim);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  for (int pass = 0; pass < 2; ++pass) {
    std::shuffle(coords.begin(), coords.end(), rng);
    for (std::size_t k = 0; k + 1 < dim; k += 2) {
      const std::size_t a = coords[k];
      const std::size_t b = coords[k + 1];
      const double theta = strength * std::numbers::pi * unit(rng);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      // Left-multiply by the Givens rotation in the (a, b) plane.
      for (std::size_t j = 0; j < dim; ++j) {
        const double qa = q(a, j);
        const double qb = q(b, j);
        q(a, j) = c * qa - s * qb;
        q(b, j) = s * qa + c * qb;
      }
    }
  }
  return q;
}

std::vector<LabeledDataset> gen_feature_shift(const FeatureShiftSpec& spec) {
  if (spec.domains < 2) throw DataError("feature shift needs at least two domains");
  const LabeledDataset base = gen_synthetic(spec.base);
  const std::size_t dim = spec.base.dim;
  std::vector<LabeledDataset> out;
  out.reserve(spec.domains);
  for (std::size_t d = 0; d < spec.domains; ++d) {
    const std::uint64_t domain_seed = derive_seed(spec.rotation_seed, {d});
    const Matrix rotation = random_rotation(dim, spec.rotation_strength, domain_seed);

    std::mt19937_64 rng(derive_seed(domain_seed, {0x5417}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector shift(dim);
    for (double& x : shift) x = gauss(rng);
    const double norm = std::sqrt(sq_norm_diff(shift, Vector(dim, 0.0)));
    for (double& x : shift) x = norm > 0.0 ? spec.shift_scale * x / norm : 0.0;

    LabeledDataset domain;
    domain.class_count = base.class_count;
    domain.labels = base.labels;
    domain.features = matmul_bt(base.features, rotation);
    for (std::size_t i = 0; i < domain.features.rows(); ++i) {
      auto row = domain.features.row(i);
      for (std::size_t j = 0; j < dim; ++j) row[j] += shift[j];
    }
    out.push_back(std::move(domain));
  }
  return out;
}

void PartitionSpec::validate(std::size_t class_count) const {
  if (client_count < 1) throw DataError("partition needs at least one client");
  switch (scheme) {
    case PartitionScheme::pathological:
      if (classes_per_client < 1 || classes_per_client > class_count) {
        throw DataError(fmt::format("classes_per_client {} must be in [1, {}]",
                                    classes_per_client, class_count));
      }
      break;
    case PartitionScheme::dirichlet:
      if (!(beta > 0.0) || !std::isfinite(beta)) throw DataError("dirichlet beta must be > 0");
      break;
    case PartitionScheme::feature_shift:
      if (domains < 2) throw DataError("feature_shift needs at least two domains");
      break;
    case PartitionScheme::iid:
      break;
  }
}

std::vector<double> size_weights(std::span<const LabeledDataset> parts) {
  double total = 0.0;
  for (const auto& p : parts) total += static_cast<double>(p.size());
  std::vector<double> w;
  w.reserve(parts.size());
  for (const auto& p : parts) w.push_back(static_cast<double>(p.size()) / total);
  return w;
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices) {
  LabeledDataset out;
  static_cast<Batch&>(out) = gather(data, indices);
  out.class_count = data.class_count;
  return out;
}

LabeledDataset concat(std::span<const LabeledDataset> parts) {
  if (parts.empty()) throw DataError("nothing to concatenate");
  std::size_t rows = 0;
  const std::size_t cols = parts.front().features.cols();
  for (const auto& p : parts) {
    if (p.features.cols() != cols) throw DataError("concatenated datasets differ in dimension");
    rows += p.size();
  }
  LabeledDataset out;
  out.class_count = 0;
  out.features = Matrix(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts) {
    out.class_count = std::max(out.class_count, p.class_count);
    for (std::size_t i = 0; i < p.size(); ++i, ++r) {
      const auto src = p.features.row(i);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(p.labels[i]);
    }
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& data) {
  std::vector<std::vector<std::size_t>> out(data.class_count);
  for (std::size_t i = 0; i < data.size(); ++i) out[data.labels[i]].push_back(i);
  return out;
}

// counts[i] = floor(share[i] * total) plus one extra for the largest
// remainders; ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> share, std::size_t total) {
  std::vector<std::size_t> counts(share.size());
  std::vector<double> remainder(share.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < share.size(); ++i) {
    const double exact = share[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(share.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % order.size()]];
  return counts;
}

using Assignment = std::vector<std::vector<std::size_t>>;

Assignment assign_iid(const LabeledDataset& data, std::size_t clients, std::mt19937_64& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Assignment out(clients);
  for (std::size_t k = 0; k < order.size(); ++k) out[k % clients].push_back(order[k]);
  return out;
}

Assignment assign_pathological(const LabeledDataset& data, const PartitionSpec& spec,
                               std::mt19937_64& rng) {
  const std::size_t classes = data.class_count;
  const std::size_t n = spec.classes_per_client;
  // Deal classes from a stream of shuffled rounds so every class is claimed
  // once before any is claimed twice.
  std::vector<std::size_t> stream;
  std::vector<std::vector<std::size_t>> owned(spec.client_count);
  std::vector<std::vector<std::size_t>> claimants(classes);
  for (std::size_t c = 0; c < spec.client_count; ++c) {
    while (owned[c].size() < n) {
      if (stream.empty()) {
        stream.resize(classes);
        std::iota(stream.begin(), stream.end(), std::size_t{0});
        std::shuffle(stream.begin(), stream.end(), rng);
      }
      auto it = std::find_if(stream.begin(), stream.end(), [&](std::size_t k) {
        return std::find(owned[c].begin(), owned[c].end(), k) == owned[c].end();
      });
      if (it == stream.end()) {
        // Only classes this client already holds remain; start a fresh round.
        stream.clear();
        continue;
      }
      owned[c].push_back(*it);
      claimants[*it].push_back(c);
      stream.erase(it);
    }
  }
  auto by_class = indices_by_class(data);
  Assignment out(spec.client_count);
  for (std::size_t k = 0; k < classes; ++k) {
    const auto& who = claimants[k];
    if (who.empty()) continue;
    auto& pool = by_class[k];
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t share = pool.size() / who.size();
    const std::size_t extra = pool.size() % who.size();
    std::size_t pos = 0;
    for (std::size_t w = 0; w < who.size(); ++w) {
      const std::size_t take = share + (w < extra ? 1 : 0);
      out[who[w]].insert(out[who[w]].end(), pool.begin() + static_cast<std::ptrdiff_t>(pos),
                         pool.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  return out;
}

Assignment assign_dirichlet(const LabeledDataset& data, const PartitionSpec& spec,
                            std::mt19937_64& rng) {
  auto by_class = indices_by_class(data);
  std::gamma_distribution<double> gamma(spec.beta, 1.0);
  Assignment out(spec.client_count);
  for (auto& pool : by_class) {
    if (pool.empty()) continue;
    std::vector<double> share(spec.client_count);
    double total = 0.0;
    for (int attempt = 0; attempt < 100 && !(total > 0.0); ++attempt) {
      total = 0.0;
      for (double& s : share) total += (s = gamma(rng));
    }
    if (!(total > 0.0)) throw DataError("dirichlet draw degenerated to all zeros");
    for (double& s : share) s /= total;
    const auto counts = largest_remainder(share, pool.size());
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < spec.client_count; ++c) {
      out[c].insert(out[c].end(), pool.begin() + static_cast<std::ptrdiff_t>(pos),
                    pool.begin() + static_cast<std::ptrdiff_t>(pos + counts[c]));
      pos += counts[c];
    }
  }
  return out;
}

bool has_empty_client(const Assignment& a) {
  return std::any_of(a.begin(), a.end(), [](const auto& v) { return v.empty(); });
}

Partition build_partition(const LabeledDataset& data, Assignment assignment) {
  Partition out;
  for (auto& idx : assignment) {
    std::sort(idx.begin(), idx.end());
    out.clients.push_back(subset(data, idx));
  }
  out.weights = size_weights(out.clients);
  out.source_indices = std::move(assignment);
  return out;
}

}  // namespace

Partition partition(const LabeledDataset& data, const PartitionSpec& spec) {
  data.validate();
  spec.validate(data.class_count);
  if (spec.scheme == PartitionScheme::feature_shift) {
    throw DataError("feature_shift partitions take per-domain datasets; use partition_domains");
  }
  std::mt19937_64 rng(spec.seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Assignment a;
    switch (spec.scheme) {
      case PartitionScheme::iid:
        a = assign_iid(data, spec.client_count, rng);
        break;
      case PartitionScheme::pathological:
        a = assign_pathological(data, spec, rng);
        break;
      case PartitionScheme::dirichlet:
        a = assign_dirichlet(data, spec, rng);
        break;
      case PartitionScheme::feature_shift:
        break;
    }
    if (!has_empty_client(a)) return build_partition(data, std::move(a));
  }
  throw DataError(fmt::format("could not give all {} clients a sample after 100 draws",
                              spec.client_count));
}

Partition partition_domains(std::span<const LabeledDataset> domains, const PartitionSpec& spec) {
  if (domains.size() < 2) throw DataError("feature_shift needs at least two domains");
  for (const auto& d : domains) d.validate();
  spec.validate(domains.front().class_count);
  std::mt19937_64 rng(spec.seed);
  const std::size_t d_count = domains.size();

  Partition out;
  out.clients.resize(spec.client_count);
  out.source_indices.resize(spec.client_count);
  std::size_t offset = 0;
  for (std::size_t d = 0; d < d_count; ++d) {
    std::vector<std::size_t> members;
    for (std::size_t c = d; c < spec.client_count; c += d_count) members.push_back(c);
    if (!members.empty()) {
      const auto local = assign_iid(domains[d], members.size(), rng);
      for (std::size_t k = 0; k < members.size(); ++k) {
        auto idx = local[k];
        std::sort(idx.begin(), idx.end());
        if (idx.empty()) {
          throw DataError(fmt::format("client {} received no samples from domain {}", members[k], d));
        }
        out.clients[members[k]] = subset(domains[d], idx);
        for (std::size_t& i : idx) i += offset;
        out.source_indices[members[k]] = std::move(idx);
      }
    }
    offset += domains[d].size();
  }
  out.weights = size_weights(out.clients);
  return out;
}

TrainTestSplit split_train_test(const LabeledDataset& data, double test_fraction,
                                std::uint64_t seed) {
  data.validate();
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw DataError("test fraction must be in [0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  if (data.size() < 2) {
    n_test = 0;
  } else {
    if (test_fraction > 0.0) n_test = std::max<std::size_t>(n_test, 1);
    n_test = std::min(n_test, data.size() - 1);
  }
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {subset(data, train), subset(data, test)};
}

double label_entropy(const LabeledDataset& data) {
  std::vector<double> counts(data.class_count, 0.0);
  for (std::size_t y : data.labels) counts[y] += 1.0;
  const double n = static_cast<double>(data.size());
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                   const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw IdxTruncatedError(fmt::format("{}: header truncated", path.string()));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), bytes.size());
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);
  if (be32(img, 0, images) != kIdxImagesMagic) {
    throw IdxMagicError(fmt::format("{}: bad magic, expected 0x00000803", images.string()));
  }
  if (be32(lab, 0, labels) != kIdxLabelsMagic) {
    throw IdxMagicError(fmt::format("{}: bad magic, expected 0x00000801", labels.string()));
  }
  const std::size_t n_images = be32(img, 4, images);
  const std::size_t rows = be32(img, 8, images);
  const std::size_t cols = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n_images != n_labels) {
    throw IdxCountMismatchError(
        fmt::format("{} images but {} labels", n_images, n_labels));
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n_images * pixels) {
    throw IdxTruncatedError(fmt::format("{}: pixel data truncated", images.string()));
  }
  if (lab.size() < 8 + n_labels) {
    throw IdxTruncatedError(fmt::format("{}: label data truncated", labels.string()));
  }
  LabeledDataset out;
  out.features = Matrix(n_images, pixels);
  out.labels.resize(n_images);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_images; ++i) {
    auto row = out.features.row(i);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = img[16 + i * pixels + p] / 255.0;
    out.labels[i] = lab[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.class_count = n_images == 0 ? 0 : max_label + 1;
  return out;
}

void write_idx(const LabeledDataset& data, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (data.features.cols() != image_rows * image_cols) {
    throw DataError("image geometry does not match feature dimension");
  }
  std::ofstream img(images, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw DataError("cannot open IDX output files");
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(image_rows));
  put_be32(img, static_cast<std::uint32_t>(image_cols));
  for (double x : data.features.data()) {
    const long v = std::lround(std::clamp(x, 0.0, 1.0) * 255.0);
    img.put(static_cast<char>(static_cast<unsigned char>(v)));
  }
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t y : data.labels) {
    if (y > 255) throw DataError("IDX labels must fit in one byte");
    lab.put(static_cast<char>(static_cast<unsigned char>(y)));
  }
}

}  // namespace subflot

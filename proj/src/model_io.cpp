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

#include "subflot/model_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "subflot/error.hpp"

namespace subflot {

namespace {

void put_f64(std::ostream& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  std::array<char, 8> bytes{};
  for (std::size_t k = 0; k < 8; ++k) bytes[k] = static_cast<char>((bits >> (8 * k)) & 0xffU);
  out.write(bytes.data(), bytes.size());
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("model blob is truncated");
  std::uint64_t bits = 0;
  for (std::size_t k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_model(const LayerStack& model, const std::filesystem::path& manifest) {
  model.validate();
  const auto blob_name = manifest.stem().string() + ".bin";
  const auto blob_path = manifest.parent_path() / blob_name;

  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw DataError(fmt::format("cannot write {}", blob_path.string()));
  for (const auto& layer : model.layers) {
    for (double w : layer.weight.data()) put_f64(blob, w);
    for (double b : layer.bias) put_f64(blob, b);
  }
  blob.close();
  if (!blob) throw DataError(fmt::format("failed writing {}", blob_path.string()));

  nlohmann::ordered_json doc;
  doc["version"] = kModelFormatVersion;
  doc["dims"] = model.dims();
  doc["data_file"] = blob_name;
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", manifest.string()));
  out << doc.dump(2) << '\n';
}

LayerStack load_model(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError(fmt::format("cannot open {}", manifest.string()));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: {}", manifest.string(), e.what()));
  }
  if (!doc.contains("version") || doc["version"] != kModelFormatVersion) {
    throw DataError(fmt::format("{}: unsupported model format version", manifest.string()));
  }
  const auto dims = doc.at("dims").get<std::vector<std::size_t>>();
  const auto blob_path = manifest.parent_path() / doc.at("data_file").get<std::string>();
  if (dims.size() < 2) throw DataError("model manifest needs at least two dims");

  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw DataError(fmt::format("cannot open {}", blob_path.string()));
  LayerStack model;
  for (std::size_t l = 1; l < dims.size(); ++l) {
    Layer layer{Matrix(dims[l], dims[l - 1]), Vector(dims[l])};
    for (double& w : layer.weight.data()) w = get_f64(blob);
    for (double& b : layer.bias) b = get_f64(blob);
    model.layers.push_back(std::move(layer));
  }
  if (blob.peek() != std::char_traits<char>::eof()) {
    throw DataError(fmt::format("{} has trailing bytes", blob_path.string()));
  }
  return model;
}

}  // namespace subflot

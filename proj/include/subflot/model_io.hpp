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

// Model persistence: a JSON manifest
//   {"version": 1, "dims": [in, h1, ..., out], "data_file": "<name>.bin"}
// next to a blob of little-endian IEEE-754 doubles holding, layer by layer,
// the row-major weight followed by the bias.

#include <filesystem>

#include "subflot/nn.hpp"

namespace subflot {

inline constexpr int kModelFormatVersion = 1;

/// Writes `manifest` and a sibling `<stem>.bin`.
void save_model(const LayerStack& model, const std::filesystem::path& manifest);
LayerStack load_model(const std::filesystem::path& manifest);

}  // namespace subflot

// Copyright 2026 The trfam Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "trfam/config.hpp"
#include "trfam/encoder.hpp"

namespace trf {

// Layout (all integers little-endian):
//   "TRFC" | u32 version | u32 kind | u32 header_bytes | header text
//   u32 num_tensors, then per tensor:
//     u32 name_bytes | name | u32 rank | u64 dims[rank] | f32 values
// The header is the canonical encoder config text, optionally followed by a
// line "---" and free-form provenance text (the full experiment config).

inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'F', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t {
  kInference = 0,  // auxiliary heads stripped
  kTraining = 1,   // every parameter
};

struct Checkpoint {
  EncoderConfig config;
  CheckpointKind kind = CheckpointKind::kInference;
  std::string provenance;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

Checkpoint make_checkpoint(const AcousticModel<float>& model, CheckpointKind kind,
                           std::string provenance = "");

/// Writes to a sibling temp file and renames it into place.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const AcousticModel<float>& model,
                CheckpointKind kind, const std::string& provenance = "");

/// Builds a model from a checkpoint. Inference checkpoints yield a model
/// without auxiliary heads.
AcousticModel<float> model_from_checkpoint(const Checkpoint& checkpoint);
AcousticModel<float> load_model(const std::filesystem::path& path);

}  // namespace trf

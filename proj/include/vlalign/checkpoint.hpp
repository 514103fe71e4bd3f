// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "vlalign/adapters.hpp"
#include "vlalign/model.hpp"

namespace vlalign {

// Single-file archive: magic, JSON header (model config, stage tag, LoRA
// config when attached, tensor index), then the raw little-endian float64
// payload in index order. save -> load -> save is byte-identical.
void save_checkpoint(const VisionLm& model, const std::string& stage_tag,
                     const std::optional<LoraConfig>& lora, const std::string& path);

struct LoadedCheckpoint {
  VisionLm model;
  std::string stage_tag;
  std::optional<LoraConfig> lora;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace vlalign

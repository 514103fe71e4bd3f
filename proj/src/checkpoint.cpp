// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace vlalign {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'A', 'L', 'N', 'C', 'K', '1'};

using json = nlohmann::json;

json lora_config_to_json(const LoraConfig& cfg) {
  return json{{"r", cfg.r},
              {"alpha", cfg.alpha},
              {"dropout", cfg.dropout},
              {"target", to_string(cfg.target)}};
}

LoraConfig lora_config_from_json(const json& j) {
  LoraConfig cfg;
  cfg.r = j.at("r").get<int>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.target = parse_lora_target(j.at("target").get<std::string>());
  return cfg;
}

}  // namespace

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"image_size", cfg.image_size},
              {"patch_size", cfg.patch_size},
              {"h_img", cfg.h_img},
              {"num_query_tokens", cfg.num_query_tokens},
              {"h_q", cfg.h_q},
              {"h_v", cfg.h_v},
              {"h_l", cfg.h_l},
              {"n_layers_vit", cfg.n_layers_vit},
              {"n_layers_qformer", cfg.n_layers_qformer},
              {"n_layers_lm", cfg.n_layers_lm},
              {"vocab_size", cfg.vocab_size},
              {"max_target_len", cfg.max_target_len},
              {"max_seq_len", cfg.max_seq_len}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.image_size = j.at("image_size").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.h_img = j.at("h_img").get<int>();
  cfg.num_query_tokens = j.at("num_query_tokens").get<int>();
  cfg.h_q = j.at("h_q").get<int>();
  cfg.h_v = j.at("h_v").get<int>();
  cfg.h_l = j.at("h_l").get<int>();
  cfg.n_layers_vit = j.at("n_layers_vit").get<int>();
  cfg.n_layers_qformer = j.at("n_layers_qformer").get<int>();
  cfg.n_layers_lm = j.at("n_layers_lm").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_target_len = j.at("max_target_len").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  return cfg;
}

void save_checkpoint(const VisionLm& model, const std::string& stage_tag,
                     const std::optional<LoraConfig>& lora, const std::string& path) {
  if (has_adapters(model) && !lora.has_value()) {
    throw std::logic_error("save_checkpoint: model has adapters but no LoraConfig given");
  }
  json header;
  header["config"] = model_config_to_json(model.config());
  header["stage"] = stage_tag;
  if (lora.has_value()) header["lora"] = lora_config_to_json(*lora);
  json tensors = json::array();
  for (const auto& [name, p] : model.params()) {
    tensors.push_back(json{{"name", name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["tensors"] = std::move(tensors);
  std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t hsize = header_str.size();
  out.write(reinterpret_cast<const char*>(&hsize), sizeof(hsize));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, p] : model.params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double) * p.value.size()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("load_checkpoint: " + path + " is not a vlalign checkpoint");
  }
  std::uint64_t hsize = 0;
  in.read(reinterpret_cast<char*>(&hsize), sizeof(hsize));
  std::string header_str(hsize, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hsize));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  json header = json::parse(header_str);

  ModelConfig cfg = model_config_from_json(header.at("config"));
  std::optional<LoraConfig> lora;
  if (header.contains("lora")) lora = lora_config_from_json(header.at("lora"));

  VisionLm model(cfg, /*seed=*/0);
  if (lora.has_value()) attach_lora(model, *lora, /*seed=*/0);

  for (const auto& tj : header.at("tensors")) {
    std::string name = tj.at("name").get<std::string>();
    Index rows = tj.at("rows").get<Index>();
    Index cols = tj.at("cols").get<Index>();
    Parameter& p = model.params().at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw std::runtime_error("load_checkpoint: tensor " + name + " shape mismatch");
    }
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload at " + name);
  }
  return LoadedCheckpoint{std::move(model), header.at("stage").get<std::string>(), lora};
}

}  // namespace vlalign

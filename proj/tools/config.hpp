// Pipeline configuration: JSON file + environment default + CLI overrides.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "midiseg/model.hpp"

namespace midiseg::cli {

struct EncodeOptions {
  int k = 3;  // overtones per note
  std::uint64_t seed = 0;
  bool overtones = true;
  bool drum_split = true;
  int margin_bars = 16;
};

struct EvalOptions {
  double threshold = 0.5;
  int tolerance_bars = 1;
  double tolerance_seconds = 0.5;
};

struct PipelineConfig {
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path out_dir = "run";
  std::filesystem::path annotations;  // empty -> <out_dir>/annotations.jsonl

  EncodeOptions encode;
  model::TrainConfig train;
  model::ModelConfig model;
  EvalOptions eval;

  std::filesystem::path annotations_path() const {
    return annotations.empty() ? out_dir / "annotations.jsonl" : annotations;
  }
  std::filesystem::path patches_dir() const { return out_dir / "patches"; }
  std::filesystem::path models_dir() const { return out_dir / "model"; }
  std::filesystem::path predictions_dir() const { return out_dir / "predictions"; }
  std::filesystem::path reports_dir() const { return out_dir / "reports"; }
};

// Defaults when `path` is empty; otherwise parses the JSON file, where every
// field is optional and missing ones keep their default.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

nlohmann::ordered_json pipeline_config_json(const PipelineConfig& config);

// FNV-1a 64 over the canonical JSON dump, as a hex string.
std::string config_hash(const PipelineConfig& config);

}  // namespace midiseg::cli

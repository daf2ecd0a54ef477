#include "config.hpp"

#include <fstream>
#include <stdexcept>

namespace midiseg::cli {
namespace {

using json = nlohmann::ordered_json;

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

void read_path_if(const json& j, const char* key, std::filesystem::path& out) {
  if (j.contains(key)) {
    out = j.at(key).get<std::string>();
  }
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig m;
  if (j.contains("input")) {
    read_if(j.at("input"), "channels", m.input.channels);
    read_if(j.at("input"), "height", m.input.height);
    read_if(j.at("input"), "width", m.input.width);
  }
  if (j.contains("conv")) {
    m.conv.clear();
    for (const json& c : j.at("conv")) {
      model::ConvSpec spec;
      read_if(c, "out_channels", spec.out_channels);
      read_if(c, "kernel_h", spec.kernel_h);
      read_if(c, "kernel_w", spec.kernel_w);
      read_if(c, "stride", spec.stride);
      read_if(c, "padding", spec.padding);
      m.conv.push_back(spec);
    }
  }
  read_if(j, "pool_size", m.pool_size);
  read_if(j, "hidden", m.hidden);
  read_if(j, "init_seed", m.init_seed);
  return m;
}

json model_config_to_json(const model::ModelConfig& m) {
  json j;
  j["input"] = {{"channels", m.input.channels},
                {"height", m.input.height},
                {"width", m.input.width}};
  j["conv"] = json::array();
  for (const model::ConvSpec& c : m.conv) {
    j["conv"].push_back({{"out_channels", c.out_channels},
                         {"kernel_h", c.kernel_h},
                         {"kernel_w", c.kernel_w},
                         {"stride", c.stride},
                         {"padding", c.padding}});
  }
  j["pool_size"] = m.pool_size;
  j["hidden"] = m.hidden;
  j["init_seed"] = m.init_seed;
  return j;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  PipelineConfig config;
  if (path.empty()) {
    return config;
  }
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("config: " + path.string() + ": " + e.what());
  }

  read_path_if(j, "corpus_dir", config.corpus_dir);
  read_path_if(j, "out_dir", config.out_dir);
  read_path_if(j, "annotations", config.annotations);
  if (j.contains("encode")) {
    const json& e = j.at("encode");
    read_if(e, "k", config.encode.k);
    read_if(e, "seed", config.encode.seed);
    read_if(e, "overtones", config.encode.overtones);
    read_if(e, "drum_split", config.encode.drum_split);
    read_if(e, "margin_bars", config.encode.margin_bars);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    read_if(t, "learning_rate", config.train.learning_rate);
    read_if(t, "weight_decay", config.train.weight_decay);
    read_if(t, "batch_size", config.train.batch_size);
    read_if(t, "max_epochs", config.train.max_epochs);
    read_if(t, "patience", config.train.patience);
    read_if(t, "positive_duplication", config.train.positive_duplication);
    read_if(t, "threshold", config.train.threshold);
    read_if(t, "seed", config.train.seed);
  }
  if (j.contains("model")) {
    config.model = model_config_from_json(j.at("model"));
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    read_if(e, "threshold", config.eval.threshold);
    read_if(e, "tolerance_bars", config.eval.tolerance_bars);
    read_if(e, "tolerance_seconds", config.eval.tolerance_seconds);
  }
  return config;
}

nlohmann::ordered_json pipeline_config_json(const PipelineConfig& config) {
  json j;
  j["corpus_dir"] = config.corpus_dir.string();
  j["out_dir"] = config.out_dir.string();
  j["annotations"] = config.annotations_path().string();
  j["encode"] = {{"k", config.encode.k},
                 {"seed", config.encode.seed},
                 {"overtones", config.encode.overtones},
                 {"drum_split", config.encode.drum_split},
                 {"margin_bars", config.encode.margin_bars}};
  j["train"] = {{"learning_rate", config.train.learning_rate},
                {"weight_decay", config.train.weight_decay},
                {"batch_size", config.train.batch_size},
                {"max_epochs", config.train.max_epochs},
                {"patience", config.train.patience},
                {"positive_duplication", config.train.positive_duplication},
                {"threshold", config.train.threshold},
                {"seed", config.train.seed}};
  j["model"] = model_config_to_json(config.model);
  j["eval"] = {{"threshold", config.eval.threshold},
               {"tolerance_bars", config.eval.tolerance_bars},
               {"tolerance_seconds", config.eval.tolerance_seconds}};
  return j;
}

std::string config_hash(const PipelineConfig& config) {
  const std::string dump = pipeline_config_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump) {
    h = (h ^ c) * 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace midiseg::cli

#include "midiseg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "midiseg/eval.hpp"

namespace midiseg::model {
namespace {

using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

std::span<const float> patch_span(const encode::Patch& patch) {
  return {patch.data.data(), patch.data.size()};
}

void validate_patch_shape(const ModelConfig& config, const encode::Patch& patch) {
  if (config.input.channels != encode::Patch::kChannels ||
      config.input.height != encode::Patch::kHeight ||
      config.input.width != encode::Patch::kWidth ||
      patch.data.size() != static_cast<std::size_t>(encode::Patch::kChannels) *
                               encode::Patch::kHeight * encode::Patch::kWidth) {
    throw ShapeMismatch("model: patch shape does not match the network input");
  }
}

json config_to_json(const ModelConfig& config) {
  json j;
  j["input"] = {{"channels", config.input.channels},
                {"height", config.input.height},
                {"width", config.input.width}};
  j["conv"] = json::array();
  for (const ConvSpec& c : config.conv) {
    j["conv"].push_back({{"out_channels", c.out_channels},
                         {"kernel_h", c.kernel_h},
                         {"kernel_w", c.kernel_w},
                         {"stride", c.stride},
                         {"padding", c.padding}});
  }
  j["pool_size"] = config.pool_size;
  j["hidden"] = config.hidden;
  j["init_seed"] = config.init_seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig config;
  config.input.channels = j.at("input").at("channels").get<int>();
  config.input.height = j.at("input").at("height").get<int>();
  config.input.width = j.at("input").at("width").get<int>();
  config.conv.clear();
  for (const json& c : j.at("conv")) {
    ConvSpec spec;
    spec.out_channels = c.at("out_channels").get<int>();
    spec.kernel_h = c.at("kernel_h").get<int>();
    spec.kernel_w = c.at("kernel_w").get<int>();
    spec.stride = c.at("stride").get<int>();
    spec.padding = c.at("padding").get<int>();
    config.conv.push_back(spec);
  }
  config.pool_size = j.at("pool_size").get<int>();
  config.hidden = j.at("hidden").get<int>();
  config.init_seed = j.at("init_seed").get<std::uint64_t>();
  return config;
}

void validate_train_config(const TrainConfig& t) {
  if (t.learning_rate <= 0.0 || t.weight_decay <= 0.0 || t.batch_size < 1 ||
      t.max_epochs < 1 || t.patience < 1 || t.positive_duplication < 1) {
    throw std::invalid_argument("train: config values must be positive");
  }
  if (!(t.threshold > 0.0 && t.threshold < 1.0)) {
    throw std::invalid_argument("train: threshold must lie in (0,1)");
  }
}

}  // namespace

double forward(const TrainedModel& model, const encode::Patch& patch) {
  validate_patch_shape(model.config(), patch);
  thread_local ForwardCache<float> cache;
  return sigmoid(static_cast<double>(model.net.forward(patch_span(patch), cache)));
}

double bce_loss(double prob, int label) {
  constexpr double kEps = 1e-7;
  const double p = std::clamp(prob, kEps, 1.0 - kEps);
  const double y = label ? 1.0 : 0.0;
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

TrainedModel train(std::span<const encode::Patch> train_set,
                   std::span<const encode::Patch> val_set, const ModelConfig& mconfig,
                   const TrainConfig& tconfig, const ValF1Override& val_f1_override) {
  validate_train_config(tconfig);
  if (val_set.empty()) {
    throw std::invalid_argument("train: validation split is empty");
  }
  std::size_t n_pos = 0;
  for (const encode::Patch& p : train_set) {
    n_pos += p.label ? 1 : 0;
  }
  if (n_pos == 0 || n_pos == train_set.size()) {
    throw DegenerateDataset("train: training split needs both classes");
  }

  NetworkT<float> net(mconfig);
  for (const encode::Patch& p : train_set) {
    validate_patch_shape(mconfig, p);
  }
  for (const encode::Patch& p : val_set) {
    validate_patch_shape(mconfig, p);
  }

  // Positives appear `positive_duplication` times per epoch, negatives once.
  std::vector<std::size_t> base_order;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const int copies = train_set[i].label ? tconfig.positive_duplication : 1;
    for (int c = 0; c < copies; ++c) {
      base_order.push_back(i);
    }
  }

  std::vector<TensorT<float>> grads = net.make_grads();
  AdamWState<float> opt;
  ForwardCache<float> cache;
  std::mt19937_64 rng(tconfig.seed);

  std::vector<TensorT<float>> best_params = net.params();
  std::vector<EpochStats> history;
  double best_f1 = -1.0;
  int best_epoch = -1;
  int stale_epochs = 0;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < tconfig.max_epochs; ++epoch) {
    std::vector<std::size_t> order = base_order;
    // Fisher-Yates with a raw modulo draw: biased by < 2^-50 for these sizes
    // and, unlike std::shuffle, identical on every platform.
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[rng() % k]);
    }

    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size();) {
      const std::size_t take =
          std::min<std::size_t>(tconfig.batch_size, order.size() - at);
      for (TensorT<float>& g : grads) {
        std::fill(g.data.begin(), g.data.end(), 0.0f);
      }
      for (std::size_t j = 0; j < take; ++j) {
        const encode::Patch& patch = train_set[order[at + j]];
        loss_sum += loss_and_gradients(net, patch_span(patch), patch.label ? 1 : 0,
                                       1.0 / static_cast<double>(take), grads, cache);
      }
      adamw_step(net.params(), grads, net.decay_mask(), opt, ++step, tconfig.learning_rate,
                 tconfig.weight_decay);
      at += take;
    }

    double val_f1;
    if (val_f1_override) {
      val_f1 = val_f1_override(epoch);
    } else {
      std::int64_t tp = 0, fp = 0, fn = 0;
      for (const encode::Patch& p : val_set) {
        const double prob =
            sigmoid(static_cast<double>(net.forward(patch_span(p), cache)));
        const bool hit = prob > tconfig.threshold;
        if (p.label && hit) {
          ++tp;
        } else if (!p.label && hit) {
          ++fp;
        } else if (p.label) {
          ++fn;
        }
      }
      val_f1 = eval::make_result(tp, fp, fn).f1;
    }
    history.push_back({loss_sum / static_cast<double>(order.size()), val_f1});

    if (val_f1 > best_f1) {
      best_f1 = val_f1;
      best_epoch = epoch;
      best_params = net.params();
      stale_epochs = 0;
    } else if (++stale_epochs >= tconfig.patience) {
      break;
    }
  }

  net.params() = std::move(best_params);
  return TrainedModel{std::move(net), std::move(history), best_epoch};
}

double ensemble_predict(std::span<const TrainedModel> models, const encode::Patch& patch) {
  if (models.empty()) {
    throw EmptyEnsemble("ensemble_predict: no models given");
  }
  double sum = 0.0;
  for (const TrainedModel& m : models) {
    sum += forward(m, patch);
  }
  return sum / static_cast<double>(models.size());
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  }
  json header;
  header["format"] = "midiseg-checkpoint";
  header["version"] = 1;
  header["config"] = config_to_json(model.config());
  header["param_count"] = model.net.param_count();
  out << header.dump() << '\n';

  for (const TensorT<float>& t : model.net.params()) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }

  json trailer;
  trailer["best_epoch"] = model.best_epoch;
  trailer["history"] = json::array();
  for (const EpochStats& e : model.history) {
    trailer["history"].push_back({e.train_loss, e.val_f1});
  }
  out << trailer.dump() << '\n';
  if (!out) {
    throw CheckpointError("checkpoint: write failed for " + path.string());
  }
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("checkpoint: cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw CheckpointError("checkpoint: missing header line");
  }
  json header;
  ModelConfig config;
  std::int64_t param_count = 0;
  try {
    header = json::parse(line);
    if (header.at("format").get<std::string>() != "midiseg-checkpoint") {
      throw CheckpointError("checkpoint: unrecognized format tag");
    }
    config = config_from_json(header.at("config"));
    param_count = header.at("param_count").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }

  NetworkT<float> net(config);
  if (net.param_count() != param_count) {
    throw CheckpointError("checkpoint: parameter count does not match config");
  }
  for (TensorT<float>& t : net.params()) {
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float))) {
      throw CheckpointError("checkpoint: truncated parameter blob");
    }
  }

  TrainedModel model{std::move(net), {}, -1};
  if (std::getline(in, line) && !line.empty()) {
    try {
      const json trailer = json::parse(line);
      model.best_epoch = trailer.at("best_epoch").get<int>();
      for (const json& e : trailer.at("history")) {
        model.history.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
      }
    } catch (const json::exception& e) {
      throw CheckpointError(std::string("checkpoint: malformed history: ") + e.what());
    }
  }
  return model;
}

}  // namespace midiseg::model

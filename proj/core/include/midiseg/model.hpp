// Training loop (BCE + AdamW + early stopping on validation F1), single-model
// and ensemble inference, and checkpoint serialization.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "midiseg/encode.hpp"
#include "midiseg/network.hpp"

namespace midiseg::model {

struct DegenerateDataset : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyEnsemble : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 5;
  int positive_duplication = 2;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_f1 = 0.0;
};

struct TrainedModel {
  NetworkT<float> net;
  std::vector<EpochStats> history;
  int best_epoch = -1;  // 0-based index into history; its parameters are the ones kept

  const ModelConfig& config() const { return net.config(); }
};

// Sigmoid of the network logit for one patch. Read-only over the parameters,
// so concurrent calls on the same model are safe.
double forward(const TrainedModel& model, const encode::Patch& patch);

// -(y ln p + (1-y) ln(1-p)) with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double prob, int label);

// Optional hook that replaces the computed validation F1 for an epoch
// (0-based); lets callers drive the early-stopping schedule directly.
using ValF1Override = std::function<double(int)>;

// Each epoch visits every negative once and every positive
// `positive_duplication` times, shuffled deterministically by seed. Stops
// after `patience` consecutive epochs without a validation-F1 improvement and
// returns the parameters of the best epoch.
TrainedModel train(std::span<const encode::Patch> train_set,
                   std::span<const encode::Patch> val_set, const ModelConfig& mconfig,
                   const TrainConfig& tconfig, const ValF1Override& val_f1_override = {});

// Arithmetic mean of member probabilities.
double ensemble_predict(std::span<const TrainedModel> models, const encode::Patch& patch);

// Checkpoint layout: one JSON line describing the config and parameter count,
// the raw little-endian float32 parameter blob in declaration order, then one
// JSON line with the training history.
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace midiseg::model

// Subcommand implementations behind the CLI front-end. Each returns a process
// exit code; per-file soft failures are logged and never abort a batch.
#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace midiseg::cli {

struct InspectArgs {
  std::string file;
};

struct CurateArgs {
  bool pickup_correction = false;
  std::string subset = "non_tubb";
  double val_frac = 0.1;
  double test_frac = 0.1;
  int jobs = 1;
};

struct EncodeArgs {
  int jobs = 1;
};

struct TrainArgs {
  std::string tag = "model";
};

struct PredictArgs {
  std::string model;                  // checkpoint path; empty -> <out>/model/model.ckpt
  std::vector<std::string> ensemble;  // overrides --model when non-empty
  std::string split;                  // keep only songs in this split; empty = all
  int jobs = 1;
};

struct EvaluateArgs {
  std::string mode = "measure";       // measure | bar | seconds
  std::string decoder = "threshold";  // threshold | peak (bar/seconds modes)
  std::string split;                  // empty = all songs with predictions
};

struct RenderPatchArgs {
  std::string patches;
  int index = 0;
  std::string out;  // empty -> <patches stem>_<index>.ppm beside the input
};

int cmd_inspect(const PipelineConfig& config, const InspectArgs& args);
int cmd_curate(const PipelineConfig& config, const CurateArgs& args);
int cmd_encode(const PipelineConfig& config, const EncodeArgs& args);
int cmd_train(const PipelineConfig& config, const TrainArgs& args);
int cmd_predict(const PipelineConfig& config, const PredictArgs& args);
int cmd_evaluate(const PipelineConfig& config, const EvaluateArgs& args);
int cmd_render_patch(const PipelineConfig& config, const RenderPatchArgs& args);

// Full argument-vector entry point (without the program name); used by main()
// and by the integration tests.
int run_cli(const std::vector<std::string>& args);

}  // namespace midiseg::cli

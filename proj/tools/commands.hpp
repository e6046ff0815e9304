#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mef/convlstm.hpp"
#include "mef/dataset.hpp"
#include "mef/eval.hpp"
#include "mef/fusion.hpp"
#include "mef/pyramid.hpp"

namespace mef::cli {

namespace fs = std::filesystem;

struct PredictorSection {
  ConvLstmConfig model;
  PredictorTrainConfig train;
};

struct RunConfig {
  std::uint64_t seed = 1;
  bool seed_from_env = false;
  bool quiet = false;  // suppress progress lines
  fs::path output = "run";

  // Either synthetic generation (written by `synth`) or existing FSEQ files.
  std::optional<SyntheticConfig> synthetic;
  std::size_t train_frames = 40;
  std::size_t test_frames = 24;
  fs::path train_fseq;
  fs::path test_fseq;

  PyramidSpec pyramid;
  std::vector<PredictorSection> predictors;  // one per level

  GanHyper gan;
  GeneratorConfig generator;          // in_channels filled from the data
  DiscriminatorConfig discriminator;  // in_channels filled from the data
  bool noise = true;

  std::vector<std::string> methods{"persistence", "flow", "single_scale", "mef"};
  std::size_t render = 0;
  MetricsConfig metrics;
  FlowConfig flow;

  std::string text;  // the config file exactly as read
};

// Parses the JSON text. Unknown keys and invalid values raise ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const fs::path& path);
// MEF_SEED, when set, replaces the config seed.
void apply_seed_override(RunConfig& config);

// Locks the output directory, records config.json and run_info.json.
class RunDirectory {
 public:
  // `invocation` (command and flags) is stored under invocations/<command>.json.
  RunDirectory(const RunConfig& config, const std::string& command, const std::vector<std::string>& invocation);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const fs::path& root() const noexcept { return root_; }

 private:
  fs::path root_;
  fs::path lock_;
};

fs::path train_data_path(const RunConfig& config);
fs::path test_data_path(const RunConfig& config);
fs::path predictor_path(const RunConfig& config, std::size_t level, std::optional<std::size_t> position = {});
fs::path fusion_dir(const RunConfig& config, FusionVariant variant);
fs::path gan_dir(const RunConfig& config, FusionVariant variant);

FusionVariant parse_variant(const std::string& name);
std::string variant_name(FusionVariant variant);

// Commands require the output directory to be held by a RunDirectory.
void cmd_synth(const RunConfig& config, const RunDirectory& run);
void cmd_train_p1(const RunConfig& config, const RunDirectory& run, std::size_t level, bool per_position);
// Returns the number of samples written.
std::size_t cmd_build_fusion(const RunConfig& config, const RunDirectory& run, FusionVariant variant);
void cmd_train_p2(const RunConfig& config, const RunDirectory& run, FusionVariant variant);
MetricsReport cmd_eval(const RunConfig& config, const RunDirectory& run);

// persistence, flow, predictor (shared level-0 model), per_position,
// single_scale or mef, built from the run's checkpoints.
Forecaster make_forecaster(const RunConfig& config, const std::string& method);

std::vector<FusionSample> load_fusion_dataset(const fs::path& dir);

// Full command line; returns the process exit code.
int run(int argc, char** argv);

// Keeps freed training buffers in the heap instead of returning them to the
// OS after every step. Call once at process start.
void retain_freed_memory();

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

}  // namespace mef::cli

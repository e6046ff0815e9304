#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"
#include "mef/checkpoint.hpp"
#include "mef/error.hpp"

using namespace mef;
using namespace mef::cli;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mef_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config(const fs::path& out) {
  auto config = json::parse(R"({
    "seed": 3,
    "dataset": {"synthetic": {"size": 32, "blob_count": 6, "radius_min": 2, "radius_max": 5},
                "train_frames": 11, "test_frames": 16},
    "pyramid": {"base_size": 32, "tile": 8, "levels": 3,
                "predictor": {"hidden": [4], "epochs": 2, "batch": 4}},
    "fusion": {"epochs": 1, "crop": 16, "lambda1": 0.1},
    "eval": {"methods": ["persistence", "flow", "predictor", "single_scale", "mef"]}
  })");
  config["output"] = out.string();
  return config;
}

fs::path write_config(const fs::path& dir, const json& config, const std::string& name = "input.json") {
  const auto path = dir / name;
  std::ofstream(path) << config.dump(2);
  return path;
}

int mef_main(std::vector<std::string> args) {
  args.insert(args.begin(), "mef");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& path) {
  const auto text = bytes(path);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config(small_config("/tmp/x").dump());
  CHECK(cfg.seed == 3);
  CHECK(cfg.pyramid.levels == 3);
  CHECK(cfg.predictors.size() == 3);
  CHECK(cfg.predictors[2].model.hidden == std::vector<std::size_t>{4});
  CHECK(cfg.gan.crop == 16);

  auto typo = small_config("/tmp/x");
  typo["fusion"]["lamda1"] = 1.0;
  CHECK_THROWS_WITH_AS(parse_config(typo.dump()), doctest::Contains("fusion.lamda1"), ConfigError);
  auto wrong_type = small_config("/tmp/x");
  wrong_type["pyramid"]["tile"] = "eight";
  CHECK_THROWS_AS(parse_config(wrong_type.dump()), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
  auto bad_pyramid = small_config("/tmp/x");
  bad_pyramid["pyramid"]["levels"] = 4;
  CHECK_THROWS_AS(parse_config(bad_pyramid.dump()), ConfigError);

  auto per_level = small_config("/tmp/x");
  per_level["pyramid"]["per_level"] = json::array({json{{"hidden", {6, 6}}}});
  const auto pl = parse_config(per_level.dump());
  CHECK(pl.predictors[0].model.hidden == std::vector<std::size_t>{6, 6});
  CHECK(pl.predictors[1].model.hidden == std::vector<std::size_t>{4});
}

TEST_CASE("synth writes deterministic data and validates first") {
  const auto dir = scratch("synth");
  const auto a = write_config(dir, small_config(dir / "a"));
  const auto b = write_config(dir, small_config(dir / "b"), "b.json");
  REQUIRE(mef_main({"-q", "-c", a.string(), "synth"}) == kExitOk);
  REQUIRE(mef_main({"-q", "-c", b.string(), "synth"}) == kExitOk);
  CHECK(read_fseq(dir / "a" / "data" / "train.fseq").size() == 11);
  CHECK(read_fseq(dir / "a" / "data" / "test.fseq").size() == 16);
  CHECK(bytes(dir / "a" / "data" / "train.fseq") == bytes(dir / "b" / "data" / "train.fseq"));
  CHECK(bytes(dir / "a" / "data" / "test.fseq") == bytes(dir / "b" / "data" / "test.fseq"));
  CHECK(bytes(dir / "a" / "config.json") == bytes(a));
  const auto info = json::parse(bytes(dir / "a" / "run_info.json"));
  CHECK(info["seed"] == 3);
  CHECK(info["version"] == MEF_VERSION);

  auto zero = small_config(dir / "zero");
  zero["dataset"]["train_frames"] = 0;
  CHECK(mef_main({"-q", "-c", write_config(dir, zero, "zero.json").string(), "synth"}) == kExitConfig);
  CHECK_FALSE(fs::exists(dir / "zero"));
}

TEST_CASE("seed override, lock and config guard") {
  const auto dir = scratch("guard");
  const auto path = write_config(dir, small_config(dir / "run"));
  ::setenv("MEF_SEED", "17", 1);
  CHECK(mef_main({"-q", "-c", path.string(), "synth"}) == kExitOk);
  ::unsetenv("MEF_SEED");
  const auto info = json::parse(bytes(dir / "run" / "run_info.json"));
  CHECK(info["seed"] == 17);
  CHECK(info["seed_source"] == "MEF_SEED");
  // Replaying without the override would mix seeds in one directory.
  CHECK(mef_main({"-q", "-c", path.string(), "synth"}) == kExitConfig);

  const auto other = write_config(dir, small_config(dir / "run2"), "run2.json");
  fs::create_directories(dir / "run2");
  std::ofstream(dir / "run2" / ".lock");
  CHECK(mef_main({"-q", "-c", other.string(), "synth"}) == kExitConfig);
  fs::remove(dir / "run2" / ".lock");
  CHECK(mef_main({"-q", "-c", other.string(), "synth"}) == kExitOk);
  CHECK_FALSE(fs::exists(dir / "run2" / ".lock"));

  auto changed = small_config(dir / "run2");
  changed["seed"] = 4;
  CHECK(mef_main({"-q", "-c", write_config(dir, changed, "changed.json").string(), "synth"}) == kExitConfig);
}

TEST_CASE("end-to-end pipeline on a small run") {
  const auto dir = scratch("pipeline");
  const auto path = write_config(dir, small_config(dir / "run"));
  const auto root = dir / "run";
  const auto c = path.string();

  CHECK(mef_main({"-q", "-c", c, "eval"}) == kExitConfig);  // no data yet
  REQUIRE(mef_main({"-q", "-c", c, "synth"}) == kExitOk);
  CHECK(mef_main({"-q", "-c", c, "build-fusion"}) == kExitConfig);  // no checkpoints yet
  for (int level = 0; level < 3; ++level) {
    REQUIRE(mef_main({"-q", "-c", c, "train-p1", "--level", std::to_string(level)}) == kExitOk);
  }
  CHECK(mef_main({"-q", "-c", c, "train-p1", "--level", "3"}) == kExitConfig);
  for (int level = 0; level < 3; ++level) {
    CHECK(fs::exists(root / "p1" / ("level" + std::to_string(level) + ".mefw")));
  }
  // 4 windows x 16 tiles at level 0, batch 4, 2 epochs.
  CHECK(line_count(root / "p1" / "level0_loss.csv") == 1 + 2 * 16);
  CHECK(line_count(root / "p1" / "level2_loss.csv") == 1 + 2 * 1);

  REQUIRE(mef_main({"-q", "-c", c, "train-p1", "--level", "0", "--per-position", "--max-steps", "1"}) == kExitOk);
  for (int p = 0; p < 16; ++p) CHECK(fs::exists(root / "p1" / ("level0_pos" + std::to_string(p) + ".mefw")));

  REQUIRE(mef_main({"-q", "-c", c, "build-fusion"}) == kExitOk);
  const auto first = bytes(root / "fusion" / "mef" / "sample_00003.mefw");
  REQUIRE(mef_main({"-q", "-c", c, "build-fusion"}) == kExitOk);
  CHECK(bytes(root / "fusion" / "mef" / "sample_00003.mefw") == first);
  const auto manifest = json::parse(bytes(root / "fusion" / "mef" / "manifest.json"));
  CHECK(manifest["samples"].size() == 8);
  for (const auto& e : manifest["samples"]) CHECK(fs::exists(root / "fusion" / "mef" / e["file"].get<std::string>()));
  CHECK(manifest["channels"] == 4);
  const auto samples = load_fusion_dataset(root / "fusion" / "mef");
  CHECK(samples.size() == 8);
  CHECK(samples[1].lead == 2);

  REQUIRE(mef_main({"-q", "-c", c, "build-fusion", "--variant", "single"}) == kExitOk);
  CHECK(load_fusion_dataset(root / "fusion" / "single")[0].x.channels() == 2);

  REQUIRE(mef_main({"-q", "-c", c, "train-p2"}) == kExitOk);
  const auto g1 = bytes(root / "p2" / "mef" / "generator.mefw");
  REQUIRE(mef_main({"-q", "-c", c, "train-p2"}) == kExitOk);
  CHECK(bytes(root / "p2" / "mef" / "generator.mefw") == g1);
  CHECK(fs::exists(root / "p2" / "mef" / "discriminator.mefw"));
  CHECK(line_count(root / "p2" / "mef" / "loss.csv") == 1 + 4);  // 8 samples, batch 2, 1 epoch

  CHECK(mef_main({"-q", "-c", c, "eval"}) == kExitConfig);  // single-scale generator missing
  REQUIRE(mef_main({"-q", "-c", c, "train-p2", "--variant", "single"}) == kExitOk);
  REQUIRE(mef_main({"-q", "-c", c, "eval", "--render", "2"}) == kExitOk);
  CHECK(line_count(root / "eval" / "report.csv") == 1 + 5 * 2);
  CHECK(fs::exists(root / "eval" / "panel_000.png"));
  CHECK(fs::exists(root / "eval" / "panel_001.png"));
  CHECK_FALSE(fs::exists(root / "eval" / "panel_002.png"));

  REQUIRE(mef_main({"-q", "-c", c, "eval", "--methods", "predictor,per_position"}) == kExitOk);
  CHECK(line_count(root / "eval" / "report.csv") == 1 + 2 * 2);
  CHECK(bytes(root / "eval" / "table1.csv").rfind("model,MAE,MSE\nshared,", 0) == 0);
  CHECK(mef_main({"-q", "-c", c, "eval", "--methods", "magic"}) == kExitConfig);
  CHECK_FALSE(fs::exists(root / ".lock"));
}

TEST_CASE("exit codes for data and numerical failures") {
  const auto dir = scratch("codes");
  auto cfg = small_config(dir / "run");
  cfg["pyramid"]["predictor"]["lr"] = 1e308;
  const auto c = write_config(dir, cfg).string();
  REQUIRE(mef_main({"-q", "-c", c, "synth"}) == kExitOk);
  CHECK(mef_main({"-q", "-c", c, "train-p1", "--level", "2"}) == kExitNumerical);

  std::ofstream(dir / "run" / "data" / "train.fseq", std::ios::trunc) << "FSEQ";
  CHECK(mef_main({"-q", "-c", c, "train-p1", "--level", "2"}) == kExitData);
  CHECK(mef_main({"-q", "-c", (dir / "missing.json").string(), "synth"}) == kExitConfig);
  CHECK(mef_main({"-q", "-c", c, "no-such-command"}) == kExitConfig);
}

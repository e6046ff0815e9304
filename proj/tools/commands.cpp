#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <iostream>
#include <set>
#include <sstream>

#include "mef/checkpoint.hpp"
#include "mef/error.hpp"

namespace mef::cli {

using json = nlohmann::json;

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads keys of one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) throw ConfigError("config: " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = node_.find(key);
    if (it == node_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: " + path(key) + " has the wrong type (" + it->dump() + ")");
    }
  }

  void get_path(const char* key, fs::path& out) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = s;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key " + path(key));
    }
  }

 private:
  const json& node_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_synthetic(Section& s, SyntheticConfig& c) {
  s.get("size", c.size);
  s.get("blob_count", c.blob_count);
  s.get("amplitude_min", c.amplitude_min);
  s.get("amplitude_max", c.amplitude_max);
  s.get("radius_min", c.radius_min);
  s.get("radius_max", c.radius_max);
  s.get("speed_max", c.speed_max);
  s.get("growth_max", c.growth_max);
  s.get("advection", c.advection);
  s.get("drift_x", c.drift_x);
  s.get("drift_y", c.drift_y);
  s.get("background", c.background);
  s.get("noise", c.noise);
  s.finish();
}

void read_predictor(Section& s, PredictorSection& p) {
  s.get("hidden", p.model.hidden);
  s.get("kernel", p.model.kernel);
  s.get("batch", p.train.batch);
  s.get("epochs", p.train.epochs);
  s.get("max_steps", p.train.max_steps);
  s.get("lr", p.train.adam.lr);
  s.get("beta1", p.train.adam.beta1);
  s.get("beta2", p.train.adam.beta2);
  s.finish();
}

template <class NetConfig>
void read_net(Section& s, NetConfig& c) {
  s.get("depth", c.depth);
  s.get("base", c.base);
  s.get("kernel", c.kernel);
  s.finish();
}

// FNV-1a of the tag mixed into the run seed with a splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) h = (h ^ ch) * 0x100000001b3ULL;
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void log(const RunConfig& config, const std::string& line) {
  if (!config.quiet) std::cout << line << std::endl;
}

FrameSequence load_sequence(const fs::path& path, const RunConfig& config) {
  if (!fs::exists(path)) throw ConfigError("missing data file " + path.string() + " (run `mef synth` first)");
  auto seq = read_fseq(path);
  if (seq.height() != config.pyramid.base_size || seq.width() != config.pyramid.base_size) {
    throw ConfigError(path.string() + " holds " + std::to_string(seq.height()) + "x" + std::to_string(seq.width()) +
                      " frames, pyramid expects " + std::to_string(config.pyramid.base_size));
  }
  return seq;
}

std::vector<InputsTargets> training_windows(const RunConfig& config) {
  const auto windows = window_train(load_sequence(train_data_path(config), config), WindowSpec{});
  if (windows.empty()) throw ConfigError("training sequence is shorter than one 8-frame window");
  return make_samples(windows);
}

ConvLstm load_predictor(const RunConfig& config, std::size_t level, std::optional<std::size_t> position = {}) {
  const auto path = predictor_path(config, level, position);
  if (!fs::exists(path)) {
    throw ConfigError("missing checkpoint " + path.string() + " (run `mef train-p1 --level " + std::to_string(level) +
                      (position ? " --per-position" : "") + "`)");
  }
  return ConvLstm(checkpoint::load(path));
}

std::vector<ConvLstm> level_models(const RunConfig& config, FusionVariant variant) {
  std::vector<ConvLstm> models;
  const std::size_t n = variant == FusionVariant::multiscale ? config.pyramid.levels : 1;
  for (std::size_t l = 0; l < n; ++l) models.push_back(load_predictor(config, l));
  return models;
}

ParamSet load_generator(const RunConfig& config, FusionVariant variant) {
  const auto path = gan_dir(config, variant) / "generator.mefw";
  if (!fs::exists(path)) {
    throw ConfigError("missing checkpoint " + path.string() + " (run `mef train-p2 --variant " +
                      variant_name(variant) + "`)");
  }
  return checkpoint::load(path);
}

std::string loss_csv(std::span<const LossRecord> log) {
  std::string out = "epoch,step,loss\n";
  char line[96];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.9g\n", r.epoch, r.step, r.loss);
    out += line;
  }
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  c.text = text;
  Section top(root, "");
  top.get("seed", c.seed);
  top.get_path("output", c.output);

  if (const json* node = top.child("dataset")) {
    Section s(*node, "dataset");
    if (const json* syn = s.child("synthetic")) {
      Section ss(*syn, "dataset.synthetic");
      c.synthetic.emplace();
      read_synthetic(ss, *c.synthetic);
    }
    s.get("train_frames", c.train_frames);
    s.get("test_frames", c.test_frames);
    s.get_path("train_fseq", c.train_fseq);
    s.get_path("test_fseq", c.test_fseq);
    s.finish();
  }
  if (c.synthetic && (c.train_frames == 0 || c.test_frames == 0)) {
    throw ConfigError("config: dataset.train_frames and dataset.test_frames must be positive");
  }
  if (!c.synthetic && (c.train_fseq.empty() || c.test_fseq.empty())) {
    throw ConfigError("config: dataset needs either `synthetic` or both `train_fseq` and `test_fseq`");
  }
  if (c.synthetic && (!c.train_fseq.empty() || !c.test_fseq.empty())) {
    throw ConfigError("config: dataset.synthetic and FSEQ paths are mutually exclusive");
  }

  PredictorSection common;
  std::vector<const json*> per_level;
  if (const json* node = top.child("pyramid")) {
    Section s(*node, "pyramid");
    s.get("base_size", c.pyramid.base_size);
    s.get("tile", c.pyramid.tile);
    s.get("levels", c.pyramid.levels);
    if (const json* p = s.child("predictor")) {
      Section ps(*p, "pyramid.predictor");
      read_predictor(ps, common);
    }
    if (const json* p = s.child("per_level")) {
      if (!p->is_array()) throw ConfigError("config: pyramid.per_level must be an array");
      for (const auto& item : *p) per_level.push_back(&item);
    }
    s.finish();
  }
  try {
    c.pyramid.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (per_level.size() > c.pyramid.levels) throw ConfigError("config: pyramid.per_level has more entries than levels");
  for (std::size_t l = 0; l < c.pyramid.levels; ++l) {
    PredictorSection p = common;
    if (l < per_level.size()) {
      Section ps(*per_level[l], "pyramid.per_level[" + std::to_string(l) + "]");
      read_predictor(ps, p);
    }
    c.predictors.push_back(p);
  }

  if (const json* node = top.child("fusion")) {
    Section s(*node, "fusion");
    s.get("lambda1", c.gan.lambda1);
    s.get("lambda2", c.gan.lambda2);
    s.get("batch", c.gan.batch);
    s.get("epochs", c.gan.epochs);
    s.get("max_rounds", c.gan.max_rounds);
    s.get("crop", c.gan.crop);
    s.get("lr", c.gan.adam.lr);
    s.get("beta1", c.gan.adam.beta1);
    s.get("beta2", c.gan.adam.beta2);
    s.get("noise", c.noise);
    if (const json* g = s.child("generator")) {
      Section gs(*g, "fusion.generator");
      read_net(gs, c.generator);
    }
    if (const json* d = s.child("discriminator")) {
      Section ds(*d, "fusion.discriminator");
      read_net(ds, c.discriminator);
    }
    s.finish();
  }

  if (const json* node = top.child("eval")) {
    Section s(*node, "eval");
    s.get("methods", c.methods);
    s.get("render", c.render);
    s.get("max_i", c.metrics.max_i);
    s.get("window", c.metrics.window);
    s.get("sigma", c.metrics.sigma);
    if (const json* f = s.child("flow")) {
      Section fs_(*f, "eval.flow");
      fs_.get("block", c.flow.block);
      fs_.get("radius", c.flow.radius);
      fs_.get("levels", c.flow.levels);
      fs_.finish();
    }
    s.finish();
  }
  top.finish();

  try {
    for (const auto& p : c.predictors) p.model.validate();
    c.gan.validate();
    c.metrics.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_config(const fs::path& path) { return parse_config(read_text(path)); }

void apply_seed_override(RunConfig& config) {
  const char* env = std::getenv("MEF_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    config.seed = value;
    config.seed_from_env = true;
  } catch (const std::exception&) {
    throw ConfigError(std::string("MEF_SEED must be an unsigned integer, got '") + env + "'");
  }
}

RunDirectory::RunDirectory(const RunConfig& config, const std::string& command,
                           const std::vector<std::string>& invocation)
    : root_(config.output), lock_(config.output / ".lock") {
  ensure_dir(root_);
  std::FILE* f = std::fopen(lock_.c_str(), "wx");
  if (f == nullptr) {
    if (fs::exists(lock_)) {
      throw ConfigError("output directory " + root_.string() + " is in use (remove " + lock_.string() +
                        " if no other run is active)");
    }
    throw IoError("cannot create lock file " + lock_.string());
  }
  std::fclose(f);
  try {
    const auto config_path = root_ / "config.json";
    if (fs::exists(config_path) && read_text(config_path) != config.text) {
      throw ConfigError("output directory " + root_.string() + " was created with a different config");
    }
    json info = {{"tool", "mef"}, {"version", MEF_VERSION}, {"seed", config.seed},
                 {"seed_source", config.seed_from_env ? "MEF_SEED" : "config"}};
    const auto info_path = root_ / "run_info.json";
    const std::string info_text = info.dump(2) + "\n";
    if (fs::exists(info_path) && read_text(info_path) != info_text) {
      throw ConfigError("output directory " + root_.string() + " was created with a different seed or tool version");
    }
    write_text(config_path, config.text);
    write_text(info_path, info_text);
    if (!command.empty()) {
      ensure_dir(root_ / "invocations");
      write_text(root_ / "invocations" / (command + ".json"), json(invocation).dump(2) + "\n");
    }
  } catch (...) {
    std::error_code ec;
    fs::remove(lock_, ec);
    throw;
  }
}

RunDirectory::~RunDirectory() {
  std::error_code ec;
  fs::remove(lock_, ec);
}

fs::path train_data_path(const RunConfig& c) {
  return c.synthetic ? c.output / "data" / "train.fseq" : c.train_fseq;
}
fs::path test_data_path(const RunConfig& c) { return c.synthetic ? c.output / "data" / "test.fseq" : c.test_fseq; }

fs::path predictor_path(const RunConfig& c, std::size_t level, std::optional<std::size_t> position) {
  std::string name = "level" + std::to_string(level);
  if (position) name += "_pos" + std::to_string(*position);
  return c.output / "p1" / (name + ".mefw");
}

fs::path fusion_dir(const RunConfig& c, FusionVariant v) { return c.output / "fusion" / variant_name(v); }
fs::path gan_dir(const RunConfig& c, FusionVariant v) { return c.output / "p2" / variant_name(v); }

FusionVariant parse_variant(const std::string& name) {
  if (name == "mef") return FusionVariant::multiscale;
  if (name == "single") return FusionVariant::single_scale;
  throw ConfigError("unknown fusion variant '" + name + "' (expected mef or single)");
}

std::string variant_name(FusionVariant v) { return v == FusionVariant::multiscale ? "mef" : "single"; }

void cmd_synth(const RunConfig& config, const RunDirectory& run) {
  if (!config.synthetic) throw ConfigError("synth: the dataset section names existing FSEQ files");
  SyntheticConfig train = *config.synthetic, test = *config.synthetic;
  train.frames = config.train_frames;
  test.frames = config.test_frames;
  train.seed = derive_seed(config.seed, "synth-train");
  test.seed = derive_seed(config.seed, "synth-test");
  if (train.size != config.pyramid.base_size) {
    throw ConfigError("synth: synthetic size " + std::to_string(train.size) + " differs from pyramid base_size " +
                      std::to_string(config.pyramid.base_size));
  }
  try {
    train.validate();
    test.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  const auto train_seq = gen_synthetic(train);
  const auto test_seq = gen_synthetic(test);
  const fs::path dir = run.root() / "data";
  ensure_dir(dir);
  write_fseq(train_seq, dir / "train.fseq");
  write_fseq(test_seq, dir / "test.fseq");
  const json manifest = {
      {"train", {{"file", "train.fseq"}, {"frames", train.frames}, {"size", train.size}, {"seed", train.seed}}},
      {"test", {{"file", "test.fseq"}, {"frames", test.frames}, {"size", test.size}, {"seed", test.seed}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  log(config, "synth: wrote " + std::to_string(train.frames) + " training and " + std::to_string(test.frames) +
                  " test frames to " + dir.string());
}

void cmd_train_p1(const RunConfig& config, const RunDirectory& run, std::size_t level, bool per_position) {
  if (level >= config.pyramid.levels) {
    throw ConfigError("train-p1: level " + std::to_string(level) + " outside 0.." +
                      std::to_string(config.pyramid.levels - 1));
  }
  const auto windows = training_windows(config);
  ensure_dir(run.root() / "p1");
  const PredictorSection& section = config.predictors[level];
  std::vector<std::optional<std::size_t>> positions{std::nullopt};
  if (per_position) {
    positions.clear();
    for (std::size_t p = 0; p < config.pyramid.tile_count(level); ++p) positions.emplace_back(p);
  }
  for (const auto& position : positions) {
    const std::string tag =
        "p1-level" + std::to_string(level) + (position ? "-pos" + std::to_string(*position) : std::string());
    const auto samples = level_samples(windows, config.pyramid, level, position);
    ConvLstm model(section.model, derive_seed(config.seed, tag + "-init"));
    PredictorTrainConfig train = section.train;
    train.seed = derive_seed(config.seed, tag + "-train");
    double epoch_sum = 0.0;
    std::size_t epoch_n = 0, epoch = 1;
    const std::size_t steps_per_epoch = (samples.size() + train.batch - 1) / train.batch;
    const auto report = [&](const LossRecord& r) {
      epoch_sum += r.loss;
      ++epoch_n;
      if (epoch_n == steps_per_epoch || (train.max_steps != 0 && r.step == train.max_steps)) {
        char line[160];
        std::snprintf(line, sizeof line, "train-p1 %s: epoch %zu step %zu mean loss %.6g", tag.c_str() + 3, epoch,
                      r.step, epoch_sum / static_cast<double>(epoch_n));
        log(config, line);
        epoch_sum = 0.0;
        epoch_n = 0;
        ++epoch;
      }
    };
    const auto history = train_predictor(model, samples, train, report);
    const auto path = predictor_path(config, level, position);
    checkpoint::save(model.params(), path);
    fs::path csv = path;
    csv.replace_extension();
    write_text(csv.string() + "_loss.csv", loss_csv(history));
  }
}

std::size_t cmd_build_fusion(const RunConfig& config, const RunDirectory&, FusionVariant variant) {
  const auto windows = training_windows(config);
  const auto models = level_models(config, variant);
  const auto samples = build_fusion_dataset(windows, models, config.pyramid, variant, config.noise,
                                            derive_seed(config.seed, "fusion-noise"));
  const fs::path dir = fusion_dir(config, variant);
  std::error_code ec;
  fs::remove_all(dir, ec);
  ensure_dir(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.mefw", i);
    ParamSet record;
    record.add("x", samples[i].x);
    record.add("y", samples[i].y);
    checkpoint::save(record, dir / name);
    entries.push_back({{"file", name}, {"window", i / 2}, {"lead", samples[i].lead}});
  }
  const json manifest = {{"variant", variant_name(variant)},
                         {"noise", config.noise},
                         {"channels", samples.empty() ? 0 : samples[0].x.channels()},
                         {"samples", entries}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  log(config, "build-fusion " + variant_name(variant) + ": " + std::to_string(samples.size()) + " samples from " +
                  std::to_string(windows.size()) + " windows");
  return samples.size();
}

std::vector<FusionSample> load_fusion_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw ConfigError("missing fusion dataset " + manifest_path.string() + " (run `mef build-fusion` first)");
  }
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path));
    std::vector<FusionSample> samples;
    for (const auto& entry : manifest.at("samples")) {
      const auto file = dir / entry.at("file").get<std::string>();
      if (!fs::exists(file)) throw ConfigError("fusion manifest references missing file " + file.string());
      const auto record = checkpoint::load(file);
      samples.push_back({record["x"], record["y"], entry.at("lead").get<std::size_t>()});
    }
    if (samples.empty()) throw ConfigError("fusion dataset " + dir.string() + " is empty");
    return samples;
  } catch (const json::exception& e) {
    throw FormatError("fusion manifest " + manifest_path.string() + ": " + e.what(), 0);
  }
}

void cmd_train_p2(const RunConfig& config, const RunDirectory&, FusionVariant variant) {
  const auto samples = load_fusion_dataset(fusion_dir(config, variant));
  GeneratorConfig gc = config.generator;
  DiscriminatorConfig dc = config.discriminator;
  gc.in_channels = samples[0].x.channels();
  dc.in_channels = gc.in_channels + 1;
  const std::string tag = "p2-" + variant_name(variant);
  ParamSet generator = init_generator(gc, derive_seed(config.seed, tag + "-g"));
  ParamSet discriminator = init_discriminator(dc, derive_seed(config.seed, tag + "-d"));
  GanHyper hyper = config.gan;
  hyper.seed = derive_seed(config.seed, tag + "-train");

  std::string csv = "round,epoch,loss_d,loss_g,mean_l1\n";
  GanObserver observer;
  observer.on_round = [&](const GanRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%zu,%.9g,%.9g,%.9g\n", r.round, r.epoch, r.loss_d, r.loss_g, r.mean_l1);
    csv += line;
    if (r.round % 100 == 0) {
      std::snprintf(line, sizeof line, "train-p2 %s: round %zu epoch %zu L_D %.4f L_G %.4f L1 %.5f",
                    variant_name(variant).c_str(), r.round, r.epoch, r.loss_d, r.loss_g, r.mean_l1);
      log(config, line);
    }
  };
  train_gan(generator, discriminator, samples, hyper, observer);
  const fs::path dir = gan_dir(config, variant);
  ensure_dir(dir);
  checkpoint::save(generator, dir / "generator.mefw");
  checkpoint::save(discriminator, dir / "discriminator.mefw");
  write_text(dir / "loss.csv", csv);
}

Forecaster make_forecaster(const RunConfig& config, const std::string& name) {
  if (name == "persistence") return [](std::span<const Grid> in) { return persistence_forecast(in); };
  if (name == "flow") {
    return [flow = config.flow](std::span<const Grid> in) { return optical_flow_forecast(in, flow); };
  }
  if (name == "predictor") return predictor_forecaster({load_predictor(config, 0)}, config.pyramid);
  if (name == "per_position") {
    std::vector<ConvLstm> models;
    for (std::size_t p = 0; p < config.pyramid.tile_count(0); ++p) models.push_back(load_predictor(config, 0, p));
    return predictor_forecaster(std::move(models), config.pyramid);
  }
  if (name == "single_scale" || name == "mef") {
    const auto variant = name == "mef" ? FusionVariant::multiscale : FusionVariant::single_scale;
    return fusion_forecaster(level_models(config, variant), load_generator(config, variant), config.pyramid, variant,
                             config.noise, derive_seed(config.seed, "eval-noise"));
  }
  throw ConfigError("eval: unknown method '" + name +
                    "' (expected persistence, flow, predictor, per_position, single_scale or mef)");
}

MetricsReport cmd_eval(const RunConfig& config, const RunDirectory& run) {
  const auto windows = window_test(load_sequence(test_data_path(config), config), WindowSpec{}.length);
  if (windows.empty()) throw ConfigError("eval: test sequence is shorter than one 8-frame window");

  std::vector<NamedForecaster> methods;
  for (const auto& name : config.methods) methods.push_back({name, make_forecaster(config, name)});

  const auto report = evaluate_all(windows, methods, config.metrics);
  const fs::path dir = run.root() / "eval";
  ensure_dir(dir);
  write_text(dir / "report.csv", report_csv(report));
  bool has_shared = false, has_per_position = false;
  for (const auto& m : config.methods) {
    has_shared |= m == "predictor";
    has_per_position |= m == "per_position";
  }
  if (has_shared && has_per_position) {
    char line[160];
    std::string table = "model,MAE,MSE\n";
    for (const auto& [label, method] : {std::pair{"shared", "predictor"}, std::pair{"per_position", "per_position"}}) {
      const auto& row = report.find(method, 1);
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f\n", label, row.mae, row.mse);
      table += line;
    }
    write_text(dir / "table1.csv", table);
  }

  const WindowSpec spec;
  for (std::size_t k = 0; k < std::min(config.render, windows.size()); ++k) {
    const auto io = split_io(windows[k], spec);
    std::vector<Forecast> predictions;
    for (const auto& m : methods) predictions.push_back(m.forecast(io.inputs));
    char name[32];
    std::snprintf(name, sizeof name, "panel_%03zu.png", k);
    write_png(render_panel(io.inputs, {io.targets[0], io.targets[1]}, predictions), dir / name);
  }
  for (const auto& row : report.rows) {
    char line[200];
    std::snprintf(line, sizeof line, "eval %-12s +%zuh  MAE %8.3f  RMSE %8.3f  PSNR %7.2f  SSIM %.4f",
                  row.method.c_str(), row.lead, row.mae, row.rmse, row.psnr, row.ssim);
    log(config, line);
  }
  return report;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-scale ConvLSTM + GAN nowcasting pipeline", "mef"};
  app.set_version_flag("--version", std::string(MEF_VERSION));
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run configuration")->required();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto* synth = app.add_subcommand("synth", "Generate synthetic training and test sequences");

  auto* p1 = app.add_subcommand("train-p1", "Train the phase-1 predictor for one pyramid level");
  std::size_t level = 0;
  bool per_position = false;
  std::optional<std::size_t> p1_epochs, p1_max_steps;
  p1->add_option("--level", level, "Pyramid level (0 = full resolution)")->required();
  p1->add_flag("--per-position", per_position, "Train one model per tile position");
  p1->add_option("--epochs", p1_epochs, "Override the configured epochs");
  p1->add_option("--max-steps", p1_max_steps, "Override the configured step limit");

  auto* fusion = app.add_subcommand("build-fusion", "Write the phase-2 dataset from phase-1 predictions");
  std::string fusion_variant = "mef";
  fusion->add_option("--variant", fusion_variant, "mef or single")->check(CLI::IsMember({"mef", "single"}));

  auto* p2 = app.add_subcommand("train-p2", "Train the fusion GAN");
  std::string p2_variant = "mef";
  std::optional<std::size_t> p2_epochs, p2_max_rounds;
  p2->add_option("--variant", p2_variant, "mef or single")->check(CLI::IsMember({"mef", "single"}));
  p2->add_option("--epochs", p2_epochs, "Override the configured epochs");
  p2->add_option("--max-rounds", p2_max_rounds, "Override the configured round limit");

  auto* ev = app.add_subcommand("eval", "Score all methods on the test windows");
  std::string methods;
  std::optional<std::size_t> render;
  ev->add_option("--methods", methods, "Comma-separated methods");
  ev->add_option("--render", render, "Write this many comparison panels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config = load_config(config_path);
    apply_seed_override(config);
    config.quiet = quiet;
    std::vector<std::string> invocation(argv + 1, argv + argc);

    if (synth->parsed()) {
      RunDirectory dir(config, "synth", invocation);
      cmd_synth(config, dir);
    } else if (p1->parsed()) {
      if (level < config.predictors.size()) {
        if (p1_epochs) config.predictors[level].train.epochs = *p1_epochs;
        if (p1_max_steps) config.predictors[level].train.max_steps = *p1_max_steps;
      }
      RunDirectory dir(config, "train-p1-level" + std::to_string(level) + (per_position ? "-per-position" : ""),
                       invocation);
      cmd_train_p1(config, dir, level, per_position);
    } else if (fusion->parsed()) {
      RunDirectory dir(config, "build-fusion-" + fusion_variant, invocation);
      cmd_build_fusion(config, dir, parse_variant(fusion_variant));
    } else if (p2->parsed()) {
      if (p2_epochs) config.gan.epochs = *p2_epochs;
      if (p2_max_rounds) config.gan.max_rounds = *p2_max_rounds;
      RunDirectory dir(config, "train-p2-" + p2_variant, invocation);
      cmd_train_p2(config, dir, parse_variant(p2_variant));
    } else if (ev->parsed()) {
      if (!methods.empty()) {
        config.methods.clear();
        std::stringstream ss(methods);
        for (std::string m; std::getline(ss, m, ',');) {
          if (!m.empty()) config.methods.push_back(m);
        }
      }
      if (render) config.render = *render;
      RunDirectory dir(config, "eval", invocation);
      cmd_eval(config, dir);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "mef: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "mef: configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "mef: numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    std::cerr << "mef: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "mef: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "mef: error: " << e.what() << "\n";
    return kExitData;
  }
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  constexpr int kOneGiB = 1 << 30;
  mallopt(M_MMAP_THRESHOLD, kOneGiB);
  mallopt(M_TRIM_THRESHOLD, kOneGiB);
#endif
}

}  // namespace mef::cli

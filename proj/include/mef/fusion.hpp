#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mef/adam.hpp"
#include "mef/convlstm.hpp"
#include "mef/grid.hpp"
#include "mef/params.hpp"
#include "mef/pyramid.hpp"
#include "mef/tape.hpp"

namespace mef {

struct FusionSample {
  Grid x;  // [L(+1),S,S] conditioning stack
  Grid y;  // [1,S,S] target in [0,1]
  std::size_t lead = 1;
};

// U-Net: full-resolution stem, `depth` stride-2 down levels doubling the width,
// nearest-upsample + conv up levels with skip concatenation, 1x1 conv + sigmoid.
struct GeneratorConfig {
  std::size_t in_channels = 4;
  std::size_t depth = 2;
  std::size_t base = 8;
  std::size_t kernel = 3;

  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

// Stride-2 convs over concat(x, y), global average pool, affine, sigmoid.
struct DiscriminatorConfig {
  std::size_t in_channels = 5;  // x channels + 1
  std::size_t depth = 3;
  std::size_t base = 8;
  std::size_t kernel = 3;

  void validate() const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

ParamSet init_generator(const GeneratorConfig& config, std::uint64_t seed);
ParamSet init_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);
// Architectures recovered from parameter shapes.
GeneratorConfig generator_config(const ParamSet& params);
DiscriminatorConfig discriminator_config(const ParamSet& params);

Var generator_forward(Var x, const BoundParams& params, const GeneratorConfig& config);
Grid generator_forward(const Grid& x, const ParamSet& params);
// Probability as a one-element [1,1,1] value.
Var discriminator_forward(Var x, Var y, const BoundParams& params, const DiscriminatorConfig& config);
double discriminator_forward(const Grid& x, const Grid& y, const ParamSet& params);

// -(1/N) sum(a log p + (1-a) log(1-p)), p clamped to [1e-7, 1-1e-7].
double bce(std::span<const double> probabilities, std::span<const double> labels);
double loss_d(double d_real, double d_fake);
double loss_g(double d_fake, const Grid& y_hat, const Grid& y, double lambda1, double lambda2);

struct GanHyper {
  double lambda1 = 1.0;
  double lambda2 = 100.0;
  std::size_t batch = 2;
  std::size_t epochs = 300;
  std::size_t max_rounds = 0;  // 0 = no limit
  std::size_t crop = 0;        // train on random crops of this side; 0 = full frames
  std::uint64_t seed = 1;
  AdamConfig adam;

  void validate() const;
};

struct GanRecord {
  std::size_t round = 0;  // 1-based
  std::size_t epoch = 0;  // 1-based
  double loss_d = 0.0;    // real-batch bce + fake-batch bce
  double loss_g = 0.0;
  double mean_l1 = 0.0;
};

enum class GanUpdate { discriminator_real, discriminator_fake, generator };

struct GanObserver {
  std::function<void(const GanRecord&)> on_round;
  // After every optimizer update, with both networks' current parameters.
  std::function<void(GanUpdate, const ParamSet& generator, const ParamSet& discriminator)> on_update;
};

// Each round draws one batch and performs a D update on it with real targets,
// a D update with generated targets (G frozen), then a G update (D frozen).
std::vector<GanRecord> train_gan(ParamSet& generator, ParamSet& discriminator, std::span<const FusionSample> samples,
                                 const GanHyper& hyper, const GanObserver& observer = {});

// Fraction of correct real (p > 0.5) and fake (p < 0.5) calls.
double discriminator_accuracy(std::span<const FusionSample> samples, const ParamSet& generator,
                              const ParamSet& discriminator);

// multiscale: every pyramid level, one model per level.
// single_scale: only the tiled full-resolution level, models[0].
enum class FusionVariant { multiscale, single_scale };

// Conditioning stacks for lead 1 and lead 2 from unit-range full-size inputs.
std::array<Grid, 2> fusion_conditioning(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                        const PyramidSpec& spec, FusionVariant variant, bool noise,
                                        std::uint64_t seed);

// Two samples per window (lead 1 and 2). Windows are unit-range, full size.
std::vector<FusionSample> build_fusion_dataset(std::span<const InputsTargets> windows, std::span<const ConvLstm> models,
                                               const PyramidSpec& spec, FusionVariant variant, bool noise,
                                               std::uint64_t seed);

// Square crop of x and y with its top-left corner at (top, left).
FusionSample crop_sample(const FusionSample& sample, std::size_t size, std::size_t top, std::size_t left);

}  // namespace mef

#pragma once

// Texture synthesis network: an encoder-decoder generator that expands a
// K x K patch to 2K x 2K (decoder stages also see the same-size encoder map
// through a skip concatenation), a DCGAN-style discriminator, a fixed
// random-feature style extractor, the three training losses and the
// stage-1 trainer.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "texhash/blob_io.hpp"
#include "texhash/dataset.hpp"
#include "texhash/optim.hpp"
#include "texhash/tensor.hpp"

namespace texhash {

struct GeneratorConfig {
  int patch_size = 32;   // K; power of two, >= 4
  int base_width = 8;    // channels at full input resolution
  int max_width = 64;    // cap for the doubling schedule
};

// Intermediate activations keyed by spatial size. Encoder maps exist for
// K, K/2, ..., 2 and decoder maps for 2, 4, ..., 2K.
struct ActivationTable {
  std::map<int, Tensor> encoder;
  std::map<int, Tensor> decoder;
};

struct ConvParams {
  std::string name;
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
  // Optional batch normalisation after the convolution.
  Tensor bn_gamma;
  Tensor bn_beta;
  Tensor running_mean;  // buffers, not trained by gradients
  Tensor running_var;
};

class GeneratorNet {
 public:
  GeneratorNet(const GeneratorConfig& config, std::mt19937_64& rng, double init_std = 0.02);

  struct Output {
    Tensor image;  // [N,3,2K,2K] in [0,1]
    ActivationTable activations;
  };
  // patches: [N,3,K,K] with values in [0,1].
  Output generate(const Tensor& patches) const;

  const GeneratorConfig& config() const { return config_; }
  int patch_size() const { return config_.patch_size; }
  int output_size() const { return 2 * config_.patch_size; }
  std::vector<int> encoder_sizes() const;  // K, K/2, ..., 2
  std::vector<int> decoder_sizes() const;  // 2, 4, ..., 2K
  int encoder_width(int size) const;
  int decoder_width(int size) const;
  int downsampling_stages() const { return static_cast<int>(down_.size()); }
  int upsampling_stages() const { return static_cast<int>(up_.size()); }

  // Trainable tensors.
  NamedTensors parameters() const;
  std::vector<Tensor> parameter_list() const;
  // parameters() plus batch-norm running statistics; what checkpoints store.
  NamedTensors state() const;
  // Frozen generators never record gradients for their weights.
  void set_trainable(bool trainable);
  // Training mode normalises with batch statistics and updates the running
  // ones; evaluation mode (the default) uses the running statistics, making
  // each sample's output independent of the rest of its batch.
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

 private:
  Tensor block(const ConvParams& p, const Tensor& x, bool transposed) const;

  GeneratorConfig config_;
  bool training_ = false;
  ConvParams stem_;
  std::vector<ConvParams> down_;
  ConvParams bottleneck_;
  std::vector<ConvParams> up_;
  ConvParams to_rgb_;
};

// Four stride-2 4x4 convolutions from 2K x 2K to a one-channel score map of
// logits; leaky-relu 0.2 between blocks.
class DiscriminatorNet {
 public:
  DiscriminatorNet(int input_size, int base_width, std::mt19937_64& rng, double init_std = 0.02);
  Tensor score(const Tensor& images) const;  // [N,1,2K/16,2K/16]

  NamedTensors parameters() const;
  std::vector<Tensor> parameter_list() const;
  int input_size() const { return input_size_; }
  int base_width() const { return base_width_; }

 private:
  int input_size_;
  int base_width_;
  std::vector<ConvParams> layers_;
};

// Fixed random conv stack with five relu taps at strides 1, 2, 4, 8, 16.
class StyleExtractor {
 public:
  static constexpr int kTaps = 5;
  explicit StyleExtractor(std::uint64_t seed, int base_width = 8);
  std::array<Tensor, kTaps> taps(const Tensor& images) const;

 private:
  std::vector<ConvParams> layers_;
};

enum class LossPreset { L1Style, Adv, AdvStyle, AdvStyleL1 };

std::string preset_name(LossPreset preset);
LossPreset parse_preset(const std::string& name);  // "l1+style", "adv", "adv+style", "adv+style+l1"
bool uses_adversarial(LossPreset p);
bool uses_style(LossPreset p);
bool uses_l1(LossPreset p);

struct LossWeights {
  double gamma1 = 100.0;  // style
  double gamma2 = 1.0;    // L1
  std::array<double, StyleExtractor::kTaps> tap_weights{0.244, 0.061, 0.15, 0.004, 0.004};
};

enum class AdversarialSide { Generator, Discriminator };

// Non-saturating sigmoid cross-entropy on logit maps. The discriminator side
// targets real = 1 and fake = 0 (one mean per term, summed); the generator
// side targets fake = 1 and ignores `real_logits`.
Tensor adversarial_loss(const Tensor& real_logits, const Tensor& fake_logits, AdversarialSide side);
Tensor style_loss(const Tensor& generated, const Tensor& ground_truth, const StyleExtractor& extractor,
                  const std::array<double, StyleExtractor::kTaps>& tap_weights);
Tensor l1_loss(const Tensor& generated, const Tensor& ground_truth);
Tensor total_loss(const Tensor& adv, const Tensor& style, const Tensor& l1, const LossWeights& w);
double total_loss(double adv, double style, double l1, const LossWeights& w);

struct TsnConfig {
  GeneratorConfig generator;
  int steps = 2000;
  int batch_size = 4;
  std::uint64_t seed = 1;
  LossPreset preset = LossPreset::AdvStyleL1;
  LossWeights weights;
  AdamOptions adam;  // lr 2e-4, beta1 0.5
  double init_std = 0.02;
};

struct LossRecord {
  int step = 0;
  double adv = 0.0;
  double style = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct TsnModel {
  TsnConfig config;
  GeneratorNet generator;
  DiscriminatorNet discriminator;
};

struct TsnTrainResult {
  TsnModel model;
  std::vector<LossRecord> history;  // one record per step, generator side
  bool style_extractor_built = false;
};

// Alternating discriminator / generator Adam steps on freshly sampled stage-1
// pairs. Throws NumericError naming the step when any loss goes non-finite.
TsnTrainResult train_tsn(const TextureDataset& data, const TsnConfig& config);

// Fresh, untrained networks for `config` (weights from its seed).
TsnModel make_tsn_model(const TsnConfig& config);

void save_tsn_checkpoint(const TsnModel& model, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_tsn_checkpoint(const TsnModel& model);
TsnModel load_tsn_checkpoint(const std::filesystem::path& path);

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace texhash

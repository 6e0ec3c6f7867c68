#include "texhash/tsn.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "texhash/errors.hpp"
#include "texhash/ops.hpp"
#include "texhash/seed.hpp"

namespace texhash {

namespace {

constexpr std::uint32_t kTsnVersion = 1;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

constexpr double kBnMomentum = 0.1;

ConvParams make_conv(std::string name, int in, int out, int k, int stride, int padding,
                     std::mt19937_64& rng, double stddev, bool transposed = false, bool bias = true) {
  ConvParams p;
  p.name = std::move(name);
  const Shape shape = transposed ? Shape{std::size_t(in), std::size_t(out), std::size_t(k), std::size_t(k)}
                                 : Shape{std::size_t(out), std::size_t(in), std::size_t(k), std::size_t(k)};
  p.weight = Tensor::randn(shape, rng, stddev);
  if (bias) p.bias = Tensor::randn(Shape{std::size_t(out)}, rng, stddev);
  p.stride = stride;
  p.padding = padding;
  return p;
}

Tensor apply(const ConvParams& p, const Tensor& x) { return conv2d(x, p.weight, p.bias, p.stride, p.padding); }
Tensor apply_transposed(const ConvParams& p, const Tensor& x) {
  return deconv2d(x, p.weight, p.bias, p.stride, p.padding);
}

void add_batch_norm(ConvParams& p, std::size_t channels, std::mt19937_64& rng, double stddev) {
  p.bn_gamma = Tensor::randn(Shape{channels}, rng, stddev, 1.0);
  p.bn_beta = Tensor(Shape{channels}, 0.0);
  p.running_mean = Tensor(Shape{channels}, 0.0);
  p.running_var = Tensor(Shape{channels}, 1.0);
}

void collect(const ConvParams& p, NamedTensors& out) {
  out.emplace_back(p.name + ".weight", p.weight);
  if (p.bias.defined()) out.emplace_back(p.name + ".bias", p.bias);
  if (p.bn_gamma.defined()) {
    out.emplace_back(p.name + ".bn.gamma", p.bn_gamma);
    out.emplace_back(p.name + ".bn.beta", p.bn_beta);
  }
}

void collect_buffers(const ConvParams& p, NamedTensors& out) {
  if (!p.running_mean.defined()) return;
  out.emplace_back(p.name + ".bn.running_mean", p.running_mean);
  out.emplace_back(p.name + ".bn.running_var", p.running_var);
}

}  // namespace

GeneratorNet::GeneratorNet(const GeneratorConfig& config, std::mt19937_64& rng, double init_std)
    : config_(config) {
  const int K = config.patch_size;
  if (!is_power_of_two(K) || K < 4) {
    throw ConfigError("generator: patch size must be a power of two >= 4, got " + std::to_string(K));
  }
  if (config.base_width < 1 || config.max_width < config.base_width) {
    throw ConfigError("generator: invalid widths " + std::to_string(config.base_width) + "/" +
                      std::to_string(config.max_width));
  }
  stem_ = make_conv("gen.stem", 3, encoder_width(K), 3, 1, 1, rng, init_std);
  for (int m = K; m > 2; m /= 2) {
    down_.push_back(make_conv("gen.down" + std::to_string(m / 2), encoder_width(m), encoder_width(m / 2), 3,
                              2, 1, rng, init_std));
  }
  bottleneck_ = make_conv("gen.bottleneck", encoder_width(2), decoder_width(2), 3, 1, 1, rng, init_std);
  for (int m = 2; m < 2 * K; m *= 2) {
    // Each upsampling stage also sees the encoder map of its input size.
    up_.push_back(make_conv("gen.up" + std::to_string(m * 2), decoder_width(m) + encoder_width(m),
                            decoder_width(m * 2), 4, 2, 1, rng, init_std, /*transposed=*/true));
  }
  to_rgb_ = make_conv("gen.to_rgb", decoder_width(2 * K), 3, 3, 1, 1, rng, init_std);
  add_batch_norm(stem_, static_cast<std::size_t>(encoder_width(K)), rng, init_std);
  for (std::size_t i = 0; i < down_.size(); ++i) {
    add_batch_norm(down_[i], static_cast<std::size_t>(encoder_width(K >> (i + 1))), rng, init_std);
  }
  add_batch_norm(bottleneck_, static_cast<std::size_t>(decoder_width(2)), rng, init_std);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    add_batch_norm(up_[i], static_cast<std::size_t>(decoder_width(4 << i)), rng, init_std);
  }
}

Tensor GeneratorNet::block(const ConvParams& p, const Tensor& x, bool transposed) const {
  Tensor y = transposed ? apply_transposed(p, x) : apply(p, x);
  if (training_) {
    ChannelStats batch;
    y = batch_norm(y, p.bn_gamma, p.bn_beta, nullptr, 1e-5, &batch);
    Tensor rm = p.running_mean, rv = p.running_var;
    auto m = rm.data_mut();
    auto v = rv.data_mut();
    for (std::size_t c = 0; c < m.size(); ++c) {
      m[c] = (1.0 - kBnMomentum) * m[c] + kBnMomentum * batch.mean[c];
      v[c] = (1.0 - kBnMomentum) * v[c] + kBnMomentum * batch.var[c];
    }
  } else {
    const ChannelStats running{std::vector<double>(p.running_mean.data().begin(), p.running_mean.data().end()),
                               std::vector<double>(p.running_var.data().begin(), p.running_var.data().end())};
    y = batch_norm(y, p.bn_gamma, p.bn_beta, &running);
  }
  return relu(y);
}

int GeneratorNet::encoder_width(int size) const {
  const int factor = config_.patch_size / size;
  return std::min(config_.base_width * factor, config_.max_width);
}

int GeneratorNet::decoder_width(int size) const {
  return size >= 2 * config_.patch_size ? config_.base_width : encoder_width(size);
}

std::vector<int> GeneratorNet::encoder_sizes() const {
  std::vector<int> out;
  for (int m = config_.patch_size; m >= 2; m /= 2) out.push_back(m);
  return out;
}

std::vector<int> GeneratorNet::decoder_sizes() const {
  std::vector<int> out;
  for (int m = 2; m <= 2 * config_.patch_size; m *= 2) out.push_back(m);
  return out;
}

GeneratorNet::Output GeneratorNet::generate(const Tensor& patches) const {
  const auto K = static_cast<std::size_t>(config_.patch_size);
  if (patches.rank() != 4 || patches.dim(1) != 3 || patches.dim(2) != K || patches.dim(3) != K) {
    throw ShapeError("generate: network built for [N,3," + std::to_string(K) + "," + std::to_string(K) +
                     "] patches, got " + shape_str(patches.shape()));
  }
  Output out;
  Tensor x = block(stem_, add_scalar(scale(patches, 2.0), -1.0), false);
  int size = config_.patch_size;
  out.activations.encoder[size] = x;
  for (const auto& layer : down_) {
    x = block(layer, x, false);
    size /= 2;
    out.activations.encoder[size] = x;
  }
  x = block(bottleneck_, x, false);
  out.activations.decoder[size] = x;
  for (const auto& layer : up_) {
    x = block(layer, channel_concat(x, out.activations.encoder.at(size)), true);
    size *= 2;
    out.activations.decoder[size] = x;
  }
  out.image = scale(add_scalar(tanh(apply(to_rgb_, x)), 1.0), 0.5);
  return out;
}

NamedTensors GeneratorNet::parameters() const {
  NamedTensors out;
  collect(stem_, out);
  for (const auto& l : down_) collect(l, out);
  collect(bottleneck_, out);
  for (const auto& l : up_) collect(l, out);
  collect(to_rgb_, out);
  return out;
}

NamedTensors GeneratorNet::state() const {
  NamedTensors out = parameters();
  collect_buffers(stem_, out);
  for (const auto& l : down_) collect_buffers(l, out);
  collect_buffers(bottleneck_, out);
  for (const auto& l : up_) collect_buffers(l, out);
  return out;
}

std::vector<Tensor> GeneratorNet::parameter_list() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

void GeneratorNet::set_trainable(bool trainable) {
  for (auto& t : parameter_list()) t.set_requires_grad(trainable);
}

DiscriminatorNet::DiscriminatorNet(int input_size, int base_width, std::mt19937_64& rng, double init_std)
    : input_size_(input_size), base_width_(base_width) {
  if (input_size < 32 || input_size % 16 != 0) {
    throw ConfigError("discriminator: input size must be a multiple of 16 and >= 32, got " +
                      std::to_string(input_size));
  }
  const int widths[5] = {3, base_width, 2 * base_width, 4 * base_width, 1};
  for (int i = 0; i < 4; ++i) {
    layers_.push_back(make_conv("disc.conv" + std::to_string(i), widths[i], widths[i + 1], 4, 2, 1, rng, init_std));
  }
}

Tensor DiscriminatorNet::score(const Tensor& images) const {
  Tensor x = add_scalar(scale(images, 2.0), -1.0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = apply(layers_[i], x);
    if (i + 1 < layers_.size()) x = leaky_relu(x, 0.2);
  }
  return x;
}

NamedTensors DiscriminatorNet::parameters() const {
  NamedTensors out;
  for (const auto& l : layers_) collect(l, out);
  return out;
}

std::vector<Tensor> DiscriminatorNet::parameter_list() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : parameters()) out.push_back(t);
  return out;
}

StyleExtractor::StyleExtractor(std::uint64_t seed, int base_width) {
  std::mt19937_64 rng(mix_seed(seed, 0x57));
  const int widths[6] = {3, base_width, 2 * base_width, 4 * base_width, 4 * base_width, 4 * base_width};
  for (int i = 0; i < kTaps; ++i) {
    const double he = std::sqrt(2.0 / (widths[i] * 9.0));
    layers_.push_back(make_conv("style.conv" + std::to_string(i), widths[i], widths[i + 1], 3, i == 0 ? 1 : 2, 1,
                                rng, he, false, /*bias=*/false));
  }
}

std::array<Tensor, StyleExtractor::kTaps> StyleExtractor::taps(const Tensor& images) const {
  std::array<Tensor, kTaps> out;
  // Pixels mapped to [-2, 2] so tap activations, and hence Gram entries, are
  // of order one.
  Tensor x = scale(add_scalar(images, -0.5), 4.0);
  for (int i = 0; i < kTaps; ++i) {
    x = relu(apply(layers_[static_cast<std::size_t>(i)], x));
    out[static_cast<std::size_t>(i)] = x;
  }
  return out;
}

std::string preset_name(LossPreset preset) {
  switch (preset) {
    case LossPreset::L1Style: return "l1+style";
    case LossPreset::Adv: return "adv";
    case LossPreset::AdvStyle: return "adv+style";
    case LossPreset::AdvStyleL1: return "adv+style+l1";
  }
  return "?";
}

LossPreset parse_preset(const std::string& name) {
  for (auto p : {LossPreset::L1Style, LossPreset::Adv, LossPreset::AdvStyle, LossPreset::AdvStyleL1}) {
    if (preset_name(p) == name) return p;
  }
  throw ConfigError("unknown TSN loss preset '" + name + "'");
}

bool uses_adversarial(LossPreset p) { return p != LossPreset::L1Style; }
bool uses_style(LossPreset p) { return p != LossPreset::Adv; }
bool uses_l1(LossPreset p) { return p == LossPreset::L1Style || p == LossPreset::AdvStyleL1; }

Tensor adversarial_loss(const Tensor& real_logits, const Tensor& fake_logits, AdversarialSide side) {
  if (side == AdversarialSide::Generator) return bce_with_logits(fake_logits, 1.0);
  return add(bce_with_logits(real_logits, 1.0), bce_with_logits(fake_logits, 0.0));
}

Tensor style_loss(const Tensor& generated, const Tensor& ground_truth, const StyleExtractor& extractor,
                  const std::array<double, StyleExtractor::kTaps>& tap_weights) {
  if (generated.shape() != ground_truth.shape()) {
    throw ShapeError("style_loss: " + shape_str(generated.shape()) + " vs " + shape_str(ground_truth.shape()));
  }
  const auto a = extractor.taps(generated);
  const auto b = extractor.taps(ground_truth);
  Tensor loss = Tensor::scalar(0.0);
  for (int t = 0; t < StyleExtractor::kTaps; ++t) {
    const auto i = static_cast<std::size_t>(t);
    loss = add(loss, scale(mse(gram_matrix(a[i]), gram_matrix(b[i])), tap_weights[i]));
  }
  return loss;
}

Tensor l1_loss(const Tensor& generated, const Tensor& ground_truth) { return l1_distance(generated, ground_truth); }

Tensor total_loss(const Tensor& adv, const Tensor& style, const Tensor& l1, const LossWeights& w) {
  return add(add(adv, scale(style, w.gamma1)), scale(l1, w.gamma2));
}

double total_loss(double adv, double style, double l1, const LossWeights& w) {
  return adv + w.gamma1 * style + w.gamma2 * l1;
}

TsnModel make_tsn_model(const TsnConfig& config) {
  std::mt19937_64 rng(mix_seed(config.seed, 1));
  GeneratorNet gen(config.generator, rng, config.init_std);
  DiscriminatorNet disc(2 * config.generator.patch_size, config.generator.base_width, rng, config.init_std);
  gen.set_trainable(true);
  for (auto& t : disc.parameter_list()) t.set_requires_grad(true);
  return TsnModel{config, std::move(gen), std::move(disc)};
}

TsnTrainResult train_tsn(const TextureDataset& data, const TsnConfig& config) {
  if (config.steps < 0 || config.batch_size < 1) throw ConfigError("train_tsn: invalid steps/batch size");
  TsnTrainResult result{make_tsn_model(config), {}, false};
  auto& gen = result.model.generator;
  auto& disc = result.model.discriminator;
  const int K = config.generator.patch_size;

  std::optional<StyleExtractor> extractor;
  if (uses_style(config.preset)) {
    extractor.emplace(mix_seed(config.seed, 2), config.generator.base_width);
    result.style_extractor_built = true;
  }
  gen.set_training(true);
  Adam opt_g(gen.parameter_list(), config.adam);
  Adam opt_d(disc.parameter_list(), config.adam);
  std::mt19937_64 sampler(mix_seed(config.seed, 3));

  LossRecord last_finite;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Image> inputs, truths;
    for (int b = 0; b < config.batch_size; ++b) {
      PatchPair pair = sample_stage1_pair(data, K, sampler);
      inputs.push_back(std::move(pair.input));
      truths.push_back(std::move(pair.ground_truth));
    }
    const Tensor x = images_to_tensor(inputs);
    const Tensor gt = images_to_tensor(truths);

    double d_loss_value = 0.0;
    if (uses_adversarial(config.preset)) {
      Tensor fake;
      {
        NoGradGuard no_grad;
        fake = gen.generate(x).image;
      }
      Tensor d_loss = adversarial_loss(disc.score(gt), disc.score(fake), AdversarialSide::Discriminator);
      d_loss_value = d_loss.item();
      d_loss.backward();
      opt_d.step();
    }

    const Tensor fake = gen.generate(x).image;
    Tensor adv = Tensor::scalar(0.0);
    Tensor style = Tensor::scalar(0.0);
    Tensor l1 = Tensor::scalar(0.0);
    if (uses_adversarial(config.preset)) adv = adversarial_loss(Tensor{}, disc.score(fake), AdversarialSide::Generator);
    if (uses_style(config.preset)) style = style_loss(fake, gt, *extractor, config.weights.tap_weights);
    // The L1 term is always measured; it only enters the objective when the
    // preset includes it.
    l1 = l1_loss(fake, gt);
    LossWeights w = config.weights;
    if (!uses_l1(config.preset)) w.gamma2 = 0.0;
    Tensor total = total_loss(adv, style, l1, w);

    const LossRecord rec{step, adv.item(), style.item(), l1.item(), total.item()};
    if (!std::isfinite(rec.total) || !std::isfinite(rec.l1) || !std::isfinite(d_loss_value)) {
      std::ostringstream os;
      os << "tsn training diverged at step " << step << " (last finite losses: adv=" << last_finite.adv
         << " style=" << last_finite.style << " l1=" << last_finite.l1 << " total=" << last_finite.total << ")";
      throw NumericError(os.str());
    }
    last_finite = rec;
    result.history.push_back(rec);

    total.backward();
    opt_g.step();
    opt_d.zero_grad();  // generator-side pass leaves gradients on D
  }
  gen.set_trainable(false);
  gen.set_training(false);
  for (auto& t : disc.parameter_list()) t.set_requires_grad(false);
  return result;
}

std::vector<std::uint8_t> encode_tsn_checkpoint(const TsnModel& model) {
  ByteWriter w;
  w.raw("TSNW");
  w.u32(kTsnVersion);
  const auto& c = model.config;
  w.u32(static_cast<std::uint32_t>(c.generator.patch_size));
  w.u32(static_cast<std::uint32_t>(c.generator.base_width));
  w.u32(static_cast<std::uint32_t>(c.generator.max_width));
  w.u64(c.seed);
  w.str(preset_name(c.preset));
  w.f64(c.weights.gamma1);
  w.f64(c.weights.gamma2);
  w.u32(static_cast<std::uint32_t>(c.steps));
  NamedTensors all = model.generator.state();
  for (auto& p : model.discriminator.parameters()) all.push_back(p);
  write_tensors(w, all);
  return w.bytes();
}

void save_tsn_checkpoint(const TsnModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tsn_checkpoint(model));
}

TsnModel load_tsn_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes, path.string());
  r.expect_magic("TSNW");
  const auto version = r.u32();
  if (version != kTsnVersion) r.fail("unsupported TSN checkpoint version " + std::to_string(version));
  TsnConfig c;
  c.generator.patch_size = static_cast<int>(r.u32());
  c.generator.base_width = static_cast<int>(r.u32());
  c.generator.max_width = static_cast<int>(r.u32());
  c.seed = r.u64();
  c.preset = parse_preset(r.str());
  c.weights.gamma1 = r.f64();
  c.weights.gamma2 = r.f64();
  c.steps = static_cast<int>(r.u32());
  const NamedTensors stored = read_tensors(r);
  TsnModel model = make_tsn_model(c);
  NamedTensors targets = model.generator.state();
  for (auto& p : model.discriminator.parameters()) targets.push_back(p);
  assign_tensors(stored, targets, path.string());
  model.generator.set_trainable(false);
  model.generator.set_training(false);
  for (auto& t : model.discriminator.parameter_list()) t.set_requires_grad(false);
  return model;
}

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "step,adv,style,l1,total\n" << std::setprecision(17);
  for (const auto& r : history) out << r.step << ',' << r.adv << ',' << r.style << ',' << r.l1 << ',' << r.total << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace texhash

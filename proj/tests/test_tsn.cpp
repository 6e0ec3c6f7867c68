#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "texhash/blob_io.hpp"
#include "texhash/errors.hpp"
#include "texhash/grad_check.hpp"
#include "texhash/ops.hpp"
#include "texhash/tsn.hpp"

using namespace texhash;

namespace {

TsnConfig small_config(std::uint64_t seed, int K = 16) {
  TsnConfig c;
  c.generator.patch_size = K;
  c.generator.base_width = 4;
  c.generator.max_width = 16;
  c.steps = 20;
  c.batch_size = 2;
  c.seed = seed;
  return c;
}

TextureDataset two_class_set() { return make_synthetic_dataset(default_class_specs(2, 3), 128, 64); }

Tensor random_images(std::size_t n, std::size_t side, std::mt19937_64& rng) {
  Tensor t(Shape{n, 3, side, side});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : t.data_mut()) v = u(rng);
  return t;
}

}  // namespace

TEST(Generator, ShapeContractAcrossPatchSizes) {
  for (int K : {16, 32, 64, 128}) {
    std::mt19937_64 rng(1);
    GeneratorNet g({K, 4, 16}, rng);
    std::mt19937_64 data_rng(2);
    const auto out = g.generate(random_images(1, K, data_rng));
    EXPECT_EQ(out.image.shape(), (Shape{1, 3, std::size_t(2 * K), std::size_t(2 * K)}));
    const int log2_2k = static_cast<int>(std::log2(2 * K));
    EXPECT_EQ(static_cast<int>(out.activations.decoder.size()), log2_2k);
    EXPECT_EQ(static_cast<int>(out.activations.encoder.size()), log2_2k - 1);
    EXPECT_EQ(g.upsampling_stages(), g.downsampling_stages() + 1);
    int m = 2;
    for (const auto& [size, t] : out.activations.decoder) {
      EXPECT_EQ(size, m);
      EXPECT_EQ(t.dim(2), std::size_t(m));
      m *= 2;
    }
    EXPECT_EQ(out.activations.encoder.begin()->first, 2);
    EXPECT_EQ(out.activations.encoder.rbegin()->first, K);
    for (const auto& [size, t] : out.activations.encoder) {
      EXPECT_EQ(t.dim(2), std::size_t(size));
      EXPECT_EQ(t.dim(3), std::size_t(size));
    }
  }
}

TEST(Generator, K128HasEightDecoderSizes) {
  std::mt19937_64 rng(1);
  GeneratorNet g({128, 4, 16}, rng);
  EXPECT_EQ(g.decoder_sizes(), (std::vector<int>{2, 4, 8, 16, 32, 64, 128, 256}));
}

TEST(Generator, UntrainedOutputFiniteInUnitRange) {
  std::mt19937_64 rng(5);
  GeneratorNet g({32, 8, 64}, rng);
  const auto out = g.generate(random_images(3, 32, rng));
  for (double v : out.image.data()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Generator, WrongPatchSizeRejected) {
  std::mt19937_64 rng(1);
  GeneratorNet g({16, 4, 16}, rng);
  EXPECT_THROW(g.generate(random_images(1, 32, rng)), ShapeError);
  EXPECT_THROW(GeneratorNet({24, 4, 16}, rng), ConfigError);
}

TEST(Generator, EvalModeIsPerSample) {
  // With running statistics, a sample's output does not depend on its batch.
  std::mt19937_64 rng(3);
  GeneratorNet g({16, 4, 16}, rng);
  const Tensor batch = random_images(3, 16, rng);
  const Tensor alone(Shape{1, 3, 16, 16},
                     std::vector<double>(batch.data().begin(), batch.data().begin() + 3 * 256));
  const auto a = g.generate(batch).image, b = g.generate(alone).image;
  for (std::size_t i = 0; i < b.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
}

TEST(Discriminator, ScoreMapShapeAndFinite) {
  std::mt19937_64 rng(1);
  DiscriminatorNet d(64, 4, rng);
  const Tensor s = d.score(random_images(2, 64, rng));
  EXPECT_EQ(s.shape(), (Shape{2, 1, 4, 4}));
  for (double v : s.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Losses, AdversarialSaturationAndClosedForm) {
  const Tensor hi(Shape{1, 1, 2, 2}, 20.0), lo(Shape{1, 1, 2, 2}, -20.0), zero(Shape{1, 1, 2, 2}, 0.0);
  EXPECT_LE(adversarial_loss(hi, lo, AdversarialSide::Discriminator).item(), 1e-6);
  EXPECT_LE(adversarial_loss(Tensor{}, hi, AdversarialSide::Generator).item(), 1e-6);
  EXPECT_NEAR(adversarial_loss(zero, zero, AdversarialSide::Discriminator).item(), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(adversarial_loss(Tensor{}, zero, AdversarialSide::Generator).item(), std::log(2.0), 1e-15);
}

TEST(Losses, GeneratorLossDecreasesWithFakeLogit) {
  double prev = INFINITY;
  for (double z = -10; z <= 10; z += 0.5) {
    const double l = adversarial_loss(Tensor{}, Tensor(Shape{1, 1, 1, 1}, z), AdversarialSide::Generator).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Losses, StyleIdentityNonNegativeAndOracle) {
  std::mt19937_64 rng(8);
  const StyleExtractor ex(4, 4);
  const LossWeights w;
  const Tensor a = random_images(2, 32, rng), b = random_images(2, 32, rng);
  EXPECT_EQ(style_loss(a, a, ex, w.tap_weights).item(), 0.0);
  const double s = style_loss(a, b, ex, w.tap_weights).item();
  EXPECT_GT(s, 0.0);
  // Recompute from raw taps with the oracle Gram matrix.
  const auto ta = ex.taps(a), tb = ex.taps(b);
  double ref = 0.0;
  for (int t = 0; t < StyleExtractor::kTaps; ++t) {
    const auto ga = oracle::gram(ta[t]), gb = oracle::gram(tb[t]);
    double m = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) m += (ga[i] - gb[i]) * (ga[i] - gb[i]);
    ref += w.tap_weights[t] * m / static_cast<double>(ga.size());
  }
  EXPECT_NEAR(s, ref, 1e-12 * std::max(1.0, ref));
}

TEST(Losses, StyleExtractorFixedBySeed) {
  std::mt19937_64 rng(2);
  const Tensor a = random_images(1, 32, rng);
  const auto t1 = StyleExtractor(9, 4).taps(a), t2 = StyleExtractor(9, 4).taps(a);
  for (int t = 0; t < StyleExtractor::kTaps; ++t) {
    EXPECT_FALSE(t1[t].requires_grad());
    for (std::size_t i = 0; i < t1[t].numel(); ++i) ASSERT_EQ(t1[t].data()[i], t2[t].data()[i]);
  }
}

TEST(Losses, L1Cases) {
  std::mt19937_64 rng(4);
  const Tensor a = random_images(1, 4, rng), b = random_images(1, 4, rng);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0);
  EXPECT_EQ(l1_loss(Tensor(Shape{1, 3, 2, 2}, 1.0), Tensor(Shape{1, 3, 2, 2}, 0.0)).item(), 1.0);
  double ref = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) ref += std::abs(a.data()[i] - b.data()[i]);
  EXPECT_NEAR(l1_loss(a, b).item(), ref / a.numel(), 1e-15);
}

TEST(Losses, TotalIsExactWeightedSum) {
  LossWeights w;
  EXPECT_EQ(total_loss(1.0, 0.0, 0.0, w), 1.0);
  EXPECT_NEAR(total_loss(0.5, 0.01, 0.2, w), 1.7, 1e-15);
  LossWeights zero;
  zero.gamma1 = zero.gamma2 = 0.0;
  EXPECT_EQ(total_loss(0.3, 5.0, 7.0, zero), 0.3);
  const Tensor t = total_loss(Tensor::scalar(0.5), Tensor::scalar(0.01), Tensor::scalar(0.2), w);
  EXPECT_NEAR(t.item(), 1.7, 1e-15);
  // Linearity with coefficients (1, gamma1, gamma2).
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    const double a = n(rng), s = n(rng), l = n(rng);
    EXPECT_NEAR(total_loss(a, s, l, w), a + 100.0 * s + 1.0 * l, 1e-12);
  }
}

TEST(Losses, GeneratorObjectivePassesGradCheck) {
  std::mt19937_64 rng(10);
  const StyleExtractor ex(3, 2);
  const LossWeights w;
  DiscriminatorNet d(32, 2, rng);
  const Tensor gt = random_images(1, 32, rng);
  const auto f = [&](const Tensor& x) {
    return total_loss(adversarial_loss(Tensor{}, d.score(x), AdversarialSide::Generator),
                      style_loss(x, gt, ex, w.tap_weights), l1_loss(x, gt), w);
  };
  const auto r = grad_check(f, random_images(1, 32, rng));
  EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error << " at " << r.worst_index;
}

TEST(Trainer, SmokeRunFiniteAndDeterministic) {
  const auto data = two_class_set();
  const auto a = train_tsn(data, small_config(3));
  const auto b = train_tsn(data, small_config(3));
  ASSERT_EQ(a.history.size(), 20u);
  for (const auto& r : a.history) {
    EXPECT_TRUE(std::isfinite(r.adv) && std::isfinite(r.style) && std::isfinite(r.l1) && std::isfinite(r.total));
    EXPECT_NEAR(r.total, total_loss(r.adv, r.style, r.l1, a.model.config.weights), 1e-12 * std::max(1.0, r.total));
  }
  EXPECT_EQ(encode_tsn_checkpoint(a.model), encode_tsn_checkpoint(b.model));
  EXPECT_NE(encode_tsn_checkpoint(a.model), encode_tsn_checkpoint(train_tsn(data, small_config(4)).model));
}

TEST(Trainer, AdversarialOnlySkipsStyleExtractor) {
  const auto data = two_class_set();
  auto c = small_config(1);
  c.steps = 3;
  c.preset = LossPreset::Adv;
  const auto r = train_tsn(data, c);
  EXPECT_FALSE(r.style_extractor_built);
  // L1 is still measured for monitoring but carries no weight.
  for (const auto& h : r.history) {
    EXPECT_EQ(h.style, 0.0);
    EXPECT_GT(h.l1, 0.0);
    EXPECT_EQ(h.total, h.adv);
  }
  c.preset = LossPreset::AdvStyleL1;
  EXPECT_TRUE(train_tsn(data, c).style_extractor_built);
}

TEST(Trainer, PresetNamesRoundTrip) {
  for (auto p : {LossPreset::L1Style, LossPreset::Adv, LossPreset::AdvStyle, LossPreset::AdvStyleL1})
    EXPECT_EQ(parse_preset(preset_name(p)), p);
  EXPECT_THROW(parse_preset("style"), ConfigError);
  EXPECT_FALSE(uses_adversarial(LossPreset::L1Style));
  EXPECT_TRUE(uses_l1(LossPreset::AdvStyleL1));
}

TEST(Trainer, DivergenceNamesStep) {
  auto c = small_config(2);
  c.adam.lr = 1e200;
  try {
    train_tsn(two_class_set(), c);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Trainer, L1DropsByStep200MedianOverSeeds) {
  // Baseline from the first smoke run: default preset, desk generator width.
  const auto data = two_class_set();
  std::vector<double> delta;
  for (std::uint64_t seed : {1, 2, 3}) {
    TsnConfig c;
    c.generator.patch_size = 16;
    c.steps = 201;
    c.seed = seed;
    const auto r = train_tsn(data, c);
    delta.push_back(r.history[200].l1 - r.history[0].l1);
  }
  std::sort(delta.begin(), delta.end());
  EXPECT_LT(delta[1], 0.0) << delta[0] << ' ' << delta[1] << ' ' << delta[2];
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  const auto r = train_tsn(two_class_set(), small_config(5));
  const auto path = std::filesystem::temp_directory_path() / "texhash_tsn_ckpt.bin";
  save_tsn_checkpoint(r.model, path);
  const TsnModel back = load_tsn_checkpoint(path);
  EXPECT_EQ(encode_tsn_checkpoint(back), encode_tsn_checkpoint(r.model));
  std::mt19937_64 rng(1);
  const Tensor x = random_images(2, 16, rng);
  const auto ya = r.model.generator.generate(x).image, yb = back.generator.generate(x).image;
  for (std::size_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya.data()[i], yb.data()[i]);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  EXPECT_THROW(load_tsn_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

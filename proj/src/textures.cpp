#include "texhash/textures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "texhash/errors.hpp"

namespace texhash {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in [0,1) from a (seed, i, j, salt) lattice coordinate.
double lattice_uniform(std::uint64_t seed, long i, long j, std::uint64_t salt) {
  std::uint64_t h = splitmix(seed ^ salt);
  h = splitmix(h ^ static_cast<std::uint64_t>(i));
  h = splitmix(h ^ static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Smooth value noise in [0,1] with one lattice cell per `cell` pixels.
double value_noise(std::uint64_t seed, double x, double y, double cell, std::uint64_t salt) {
  const double fx = x / cell, fy = y / cell;
  const long ix = static_cast<long>(std::floor(fx)), iy = static_cast<long>(std::floor(fy));
  const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
  const double v00 = lattice_uniform(seed, ix, iy, salt), v10 = lattice_uniform(seed, ix + 1, iy, salt);
  const double v01 = lattice_uniform(seed, ix, iy + 1, salt), v11 = lattice_uniform(seed, ix + 1, iy + 1, salt);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

double grating(double x, double y, double freq, double theta, double phase = 0.0) {
  return 0.5 + 0.5 * std::sin(kTwoPi * freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
}

// Mixing weight in [0,1] between color_a and color_b at pixel (x, y).
double pattern(const TextureClassSpec& s, double x, double y) {
  switch (s.kind) {
    case TextureKind::SinusoidGrating:
      return grating(x, y, s.frequency, s.orientation);
    case TextureKind::Checkerboard: {
      const double c = std::cos(s.orientation), sn = std::sin(s.orientation);
      const double u = x * c + y * sn, v = -x * sn + y * c;
      const long cu = static_cast<long>(std::floor(u / s.period));
      const long cv = static_cast<long>(std::floor(v / s.period));
      return ((cu + cv) % 2 + 2) % 2 == 0 ? 0.0 : 1.0;
    }
    case TextureKind::BlotchNoise: {
      const double v = 0.65 * value_noise(s.seed, x, y, s.scale, 11) +
                       0.35 * value_noise(s.seed, x, y, s.scale / 2.0, 12);
      return std::clamp((v - 0.5) * 3.0 + 0.5, 0.0, 1.0);
    }
    case TextureKind::StripeMix:
      return 0.5 * grating(x, y, s.frequency, s.orientation) +
             0.5 * grating(x, y, 2.3 * s.frequency, s.orientation + std::numbers::pi / 2.0, 1.0);
    case TextureKind::DotLattice: {
      const long ci = static_cast<long>(std::floor(x / s.period));
      const long cj = static_cast<long>(std::floor(y / s.period));
      double best = 1e30;
      for (long di = -1; di <= 1; ++di) {
        for (long dj = -1; dj <= 1; ++dj) {
          const long i = ci + di, j = cj + dj;
          const double jx = (lattice_uniform(s.seed, i, j, 21) - 0.5) * 0.3 * s.period;
          const double jy = (lattice_uniform(s.seed, i, j, 22) - 0.5) * 0.3 * s.period;
          const double cx = (i + 0.5) * s.period + jx, cy = (j + 0.5) * s.period + jy;
          best = std::min(best, std::hypot(x - cx, y - cy));
        }
      }
      const double radius = 0.3 * s.period;
      return std::clamp(radius + 0.5 - best, 0.0, 1.0);
    }
    case TextureKind::GradientWarp: {
      const double wx = (value_noise(s.seed, x, y, s.scale, 31) - 0.5) * 2.0 * s.scale;
      const double wy = (value_noise(s.seed, x, y, s.scale, 32) - 0.5) * 2.0 * s.scale;
      return grating(x + wx, y + wy, s.frequency, s.orientation);
    }
  }
  throw DataError("gen_class_image: unknown texture kind");
}

}  // namespace

std::string_view kind_name(TextureKind kind) {
  switch (kind) {
    case TextureKind::SinusoidGrating: return "sinusoid-grating";
    case TextureKind::Checkerboard: return "checkerboard";
    case TextureKind::BlotchNoise: return "blotch-noise";
    case TextureKind::StripeMix: return "stripe-mix";
    case TextureKind::DotLattice: return "dot-lattice";
    case TextureKind::GradientWarp: return "gradient-warp";
  }
  return "unknown";
}

TextureKind parse_kind(std::string_view name) {
  for (auto k : {TextureKind::SinusoidGrating, TextureKind::Checkerboard, TextureKind::BlotchNoise,
                 TextureKind::StripeMix, TextureKind::DotLattice, TextureKind::GradientWarp}) {
    if (kind_name(k) == name) return k;
  }
  throw DataError("unknown texture kind '" + std::string(name) + "'");
}

Image gen_class_image(const TextureClassSpec& spec, int size) {
  if (size <= 0) throw DataError("gen_class_image: non-positive size " + std::to_string(size));
  if (static_cast<int>(spec.kind) < 0 || static_cast<int>(spec.kind) > 5) {
    throw DataError("gen_class_image: unknown texture kind " + std::to_string(static_cast<int>(spec.kind)));
  }
  Image image(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = pattern(spec, x, y);
      const double jitter =
          spec.noise == 0.0 ? 0.0 : spec.noise * (2.0 * lattice_uniform(spec.seed, x, y, 99) - 1.0);
      for (int c = 0; c < 3; ++c) {
        const double v = spec.color_a[c] * (1.0 - t) + spec.color_b[c] * t + jitter;
        image.at(c, y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
  }
  return image;
}

std::vector<TextureClassSpec> default_class_specs(int num_classes, std::uint64_t seed) {
  using std::numbers::pi;
  // Base roster; classes beyond it reuse a family with shifted parameters.
  const std::vector<TextureClassSpec> roster = {
      {"grating-fine", TextureKind::SinusoidGrating, 1.0 / 6.0, pi / 6.0, 8, 8, 0.06, {0.15, 0.2, 0.5}, {0.85, 0.8, 0.6}, 0},
      {"checker", TextureKind::Checkerboard, 0.125, 0.0, 6, 8, 0.06, {0.2, 0.15, 0.1}, {0.8, 0.75, 0.6}, 0},
      {"blotch", TextureKind::BlotchNoise, 0.125, 0.0, 8, 7, 0.06, {0.2, 0.35, 0.15}, {0.7, 0.8, 0.4}, 0},
      {"stripe-mix", TextureKind::StripeMix, 1.0 / 12.0, pi / 4.0, 8, 8, 0.06, {0.4, 0.1, 0.1}, {0.9, 0.6, 0.5}, 0},
      {"dots", TextureKind::DotLattice, 0.125, 0.0, 9, 8, 0.06, {0.1, 0.1, 0.2}, {0.9, 0.9, 0.7}, 0},
      {"warp", TextureKind::GradientWarp, 1.0 / 9.0, pi / 2.0, 8, 10, 0.06, {0.3, 0.2, 0.4}, {0.8, 0.7, 0.9}, 0},
      {"grating-coarse", TextureKind::SinusoidGrating, 1.0 / 14.0, 2.0 * pi / 3.0, 8, 8, 0.06, {0.45, 0.45, 0.2}, {0.7, 0.9, 0.85}, 0},
      {"blotch-large", TextureKind::BlotchNoise, 0.125, 0.0, 8, 16, 0.06, {0.55, 0.4, 0.3}, {0.25, 0.2, 0.2}, 0},
  };
  std::vector<TextureClassSpec> out;
  for (int i = 0; i < num_classes; ++i) {
    TextureClassSpec s = roster[static_cast<std::size_t>(i) % roster.size()];
    const int round = i / static_cast<int>(roster.size());
    if (round > 0) {
      s.name += "-" + std::to_string(round);
      s.frequency *= 1.0 + 0.17 * round;
      s.orientation += 0.37 * round;
      s.period += 2.0 * round;
      s.scale += 3.0 * round;
      for (auto& v : s.color_a) v = std::fmod(v + 0.13 * round, 1.0);
    }
    s.seed = splitmix(seed ^ (0x5eedULL + static_cast<std::uint64_t>(i)));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace texhash

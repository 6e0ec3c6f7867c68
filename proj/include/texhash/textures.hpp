#pragma once

// Procedural stationary texture families used as stand-in texture classes.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "texhash/image.hpp"

namespace texhash {

enum class TextureKind { SinusoidGrating, Checkerboard, BlotchNoise, StripeMix, DotLattice, GradientWarp };

std::string_view kind_name(TextureKind kind);
// Throws DataError for names outside the six families.
TextureKind parse_kind(std::string_view name);

struct TextureClassSpec {
  std::string name;
  TextureKind kind = TextureKind::SinusoidGrating;
  double frequency = 0.125;  // cycles per pixel (gratings, warp carrier)
  double orientation = 0.0;  // radians; 0 means the pattern varies along x only
  double period = 8.0;       // pixels (checkerboard cell, dot spacing)
  double scale = 8.0;        // pixels per value-noise lattice cell
  double noise = 0.0;        // amplitude of additive per-pixel noise
  std::array<double, 3> color_a{0.1, 0.1, 0.1};
  std::array<double, 3> color_b{0.9, 0.9, 0.9};
  std::uint64_t seed = 0;
};

// Deterministic RGB image; identical (spec, size) always gives identical
// pixels.
Image gen_class_image(const TextureClassSpec& spec, int size);

// The built-in class roster: cycles through the six families with distinct
// parameters and palettes. `seed` perturbs the per-class noise streams.
std::vector<TextureClassSpec> default_class_specs(int num_classes, std::uint64_t seed);

}  // namespace texhash

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "texhash/tensor.hpp"

namespace texhash {

// Planar (channel-major) image with values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> pixels;  // [channels][height][width]

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  Image crop(int x0, int y0, int w, int h) const;
  Image to_gray() const;  // luma 0.299 / 0.587 / 0.114
  bool operator==(const Image&) const = default;
};

// Stacks equally sized images into [N,C,H,W].
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& image);
// Sample n of a [N,C,H,W] tensor, values clamped to [0,1].
Image tensor_to_image(const Tensor& t, std::size_t n = 0);

// Binary PPM (P6) or PGM (P5), maxval 255. Pixel values are stored as
// byte/255 so a read-write round trip is exact.
Image read_ppm(const std::filesystem::path& path);
Image parse_ppm(const std::vector<std::uint8_t>& bytes, const std::string& source = "buffer");
void write_ppm(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_ppm(const Image& image);

}  // namespace texhash

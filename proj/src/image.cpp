#include "texhash/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "texhash/blob_io.hpp"
#include "texhash/errors.hpp"

namespace texhash {

Image Image::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || w < 0 || h < 0 || x0 + w > width || y0 + h > height) {
    throw DataError("crop (" + std::to_string(x0) + "," + std::to_string(y0) + ") " +
                    std::to_string(w) + "x" + std::to_string(h) + " exceeds " +
                    std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  Image out(w, h, channels);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = at(c, y0 + y, x0 + x);
  return out;
}

Image Image::to_gray() const {
  if (channels == 1) return *this;
  if (channels != 3) throw DataError("to_gray: unsupported channel count " + std::to_string(channels));
  Image out(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out.at(0, y, x) = 0.299 * at(0, y, x) + 0.587 * at(1, y, x) + 0.114 * at(2, y, x);
  return out;
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const Image& first = images.front();
  std::vector<double> values;
  values.reserve(images.size() * first.pixels.size());
  for (const auto& im : images) {
    if (im.width != first.width || im.height != first.height || im.channels != first.channels) {
      throw ShapeError("images_to_tensor: mixed image sizes in batch");
    }
    values.insert(values.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor(Shape{images.size(), static_cast<std::size_t>(first.channels),
                      static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width)},
                std::move(values));
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

Image tensor_to_image(const Tensor& t, std::size_t n) {
  if (t.rank() != 4 || n >= t.dim(0)) throw ShapeError("tensor_to_image: bad tensor " + shape_str(t.shape()));
  Image out(static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)));
  const std::size_t len = out.pixels.size();
  for (std::size_t i = 0; i < len; ++i) out.pixels[i] = std::clamp(t.data()[n * len + i], 0.0, 1.0);
  return out;
}

namespace {

struct HeaderCursor {
  const std::vector<std::uint8_t>& b;
  const std::string& source;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(source + ": malformed PPM header: " + what + " at byte offset " + std::to_string(pos));
  }
  void skip_space_and_comments() {
    while (pos < b.size()) {
      if (std::isspace(b[pos])) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }
  long number(const char* what) {
    skip_space_and_comments();
    if (pos >= b.size() || !std::isdigit(b[pos])) fail(std::string("expected ") + what);
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > 1'000'000) fail(std::string(what) + " too large");
    }
    return v;
  }
};

}  // namespace

Image parse_ppm(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  HeaderCursor cur{bytes, source};
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    cur.fail("expected magic P6 or P5");
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  cur.pos = 2;
  const long width = cur.number("width");
  const long height = cur.number("height");
  const long maxval = cur.number("maxval");
  if (width <= 0 || height <= 0) cur.fail("zero image extent");
  if (maxval != 255) cur.fail("unsupported maxval " + std::to_string(maxval));
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos])) cur.fail("expected whitespace before payload");
  ++cur.pos;
  const std::size_t expected = static_cast<std::size_t>(width) * height * channels;
  const std::size_t actual = bytes.size() - cur.pos;
  if (actual < expected) {
    throw IoError(source + ": truncated PPM payload at byte offset " + std::to_string(cur.pos) +
                  ": expected " + std::to_string(expected) + " bytes, got " + std::to_string(actual));
  }
  Image image(static_cast<int>(width), static_cast<int>(height), channels);
  const std::uint8_t* p = bytes.data() + cur.pos;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < channels; ++c) image.at(c, y, x) = *p++ / 255.0;
  return image;
}

Image read_ppm(const std::filesystem::path& path) { return parse_ppm(read_file_bytes(path), path.string()); }

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw DataError("write_ppm: unsupported channel count " + std::to_string(image.channels));
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
  return out;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ppm(image));
}

}  // namespace texhash

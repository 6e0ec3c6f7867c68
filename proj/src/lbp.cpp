#include "texhash/lbp.hpp"

#include "texhash/errors.hpp"

namespace texhash {

std::vector<int> lbp_codes(const Image& gray) {
  if (gray.channels != 1) throw DataError("lbp: expected a single-channel image");
  if (gray.width < 3 || gray.height < 3) throw DataError("lbp: image smaller than 3x3");
  static constexpr int dx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  static constexpr int dy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  std::vector<int> codes;
  codes.reserve(static_cast<std::size_t>(gray.width - 2) * (gray.height - 2));
  for (int y = 1; y < gray.height - 1; ++y) {
    for (int x = 1; x < gray.width - 1; ++x) {
      const double centre = gray.at(0, y, x);
      int code = 0;
      for (int k = 0; k < 8; ++k) code = (code << 1) | (gray.at(0, y + dy[k], x + dx[k]) >= centre ? 1 : 0);
      codes.push_back(code);
    }
  }
  return codes;
}

std::vector<double> lbp_descriptor(const Image& image) {
  const auto codes = lbp_codes(image.to_gray());
  std::vector<double> hist(256, 0.0);
  for (int c : codes) hist[static_cast<std::size_t>(c)] += 1.0;
  const double n = static_cast<double>(codes.size());
  for (auto& h : hist) h /= n;
  return hist;
}

}  // namespace texhash

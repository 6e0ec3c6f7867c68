#pragma once

#include <array>
#include <vector>

#include "texhash/image.hpp"

namespace texhash {

// 8-neighbour LBP code of every interior pixel of a single-channel image,
// row-major over the (H-2) x (W-2) interior. Neighbours are visited
// clockwise from the top-left; the top-left neighbour is the most significant
// bit. A neighbour >= centre sets its bit.
std::vector<int> lbp_codes(const Image& gray);

// 256-bin LBP histogram normalised to sum 1. RGB inputs are converted to luma
// first.
std::vector<double> lbp_descriptor(const Image& image);

}  // namespace texhash

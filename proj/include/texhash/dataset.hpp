#pragma once

// Region-disjoint patch sampling over per-class source images, and the
// on-disk dataset layout.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "texhash/image.hpp"
#include "texhash/textures.hpp"

namespace texhash {

struct Region {
  int x0 = 0;
  int y0 = 0;
  int size = 0;  // square side
};

// Quadrant partition of one square source image. Quadrants are assigned in
// the order top-left, top-right, bottom-left to training; the remainder
// (bottom-right for the default 3/4 split) is held out for testing.
struct RegionSplit {
  std::vector<Region> train;
  std::vector<Region> test;
};

// `min_crop` is the largest crop that will be sampled (2K for stage-1 pairs).
RegionSplit make_region_split(const Image& image, double train_fraction, int min_crop);

struct TextureDataset {
  std::vector<std::string> class_names;
  std::vector<Image> sources;
  std::vector<int> source_labels;
  std::vector<RegionSplit> splits;  // parallel to sources

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

TextureDataset make_dataset(std::vector<std::string> class_names, std::vector<Image> sources,
                            std::vector<int> labels, int min_crop, double train_fraction = 0.75);

// One source image per class rendered from `specs`.
TextureDataset make_synthetic_dataset(const std::vector<TextureClassSpec>& specs, int image_size,
                                      int min_crop);

struct PatchOrigin {
  int source = 0;
  int x = 0;  // absolute pixel coordinates in the source image
  int y = 0;
  int size = 0;
};

struct PatchPair {
  Image input;         // K x K
  Image ground_truth;  // 2K x 2K
  int label = 0;
  PatchOrigin input_origin;
  PatchOrigin truth_origin;
};

struct LabeledPatch {
  Image image;
  int label = 0;
  PatchOrigin origin;
};

enum class SplitPart { Train, Test };

// Random 2K crop from a training region with a random K crop inside it.
PatchPair sample_stage1_pair(const TextureDataset& ds, int K, std::mt19937_64& rng);
// Random K crop from a training (or test) region of a random source.
LabeledPatch sample_stage2_patch(const TextureDataset& ds, int K, std::mt19937_64& rng,
                                 SplitPart part = SplitPart::Train);
// Class-balanced set: `per_class` patches for every class, grouped by class.
std::vector<LabeledPatch> sample_patch_set(const TextureDataset& ds, int K, int per_class,
                                           SplitPart part, std::mt19937_64& rng);

// Dataset directory: <root>/<class>/<index>.ppm patches,
// <root>/sources/<class>.ppm full images, <root>/manifest.tsv with lines
// patch_id<TAB>class<TAB>split (split is train, test or source).
struct ManifestEntry {
  std::string patch_id;  // path relative to root without extension
  std::string class_name;
  std::string split;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct DatasetOnDisk {
  TextureDataset dataset;               // rebuilt from the source images
  std::vector<LabeledPatch> train;      // materialised patches
  std::vector<LabeledPatch> test;
};

void save_dataset_dir(const std::filesystem::path& root, const TextureDataset& ds,
                      const std::vector<LabeledPatch>& train, const std::vector<LabeledPatch>& test);
DatasetOnDisk load_dataset_dir(const std::filesystem::path& root, int min_crop);

// Generic folder of <root>/<class>/<anything>.ppm full texture images; each
// image becomes a source split into quadrants.
TextureDataset load_image_folder(const std::filesystem::path& root, int min_crop);

}  // namespace texhash

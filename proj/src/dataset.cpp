#include "texhash/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "texhash/errors.hpp"

namespace texhash {

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Random square of side `size` fully inside `r`.
std::pair<int, int> random_anchor(const Region& r, int size, std::mt19937_64& rng) {
  const int x = uniform_int(rng, 0, r.size - size);
  const int y = uniform_int(rng, 0, r.size - size);
  return {r.x0 + x, r.y0 + y};
}

}  // namespace

RegionSplit make_region_split(const Image& image, double train_fraction, int min_crop) {
  if (image.width != image.height) {
    throw DataError("region split: image must be square, got " + std::to_string(image.width) + "x" +
                    std::to_string(image.height));
  }
  if (image.width % 2 != 0) throw DataError("region split: image side " + std::to_string(image.width) + " is odd");
  const double quarters = train_fraction * 4.0;
  const int n_train = static_cast<int>(std::lround(quarters));
  if (std::abs(quarters - n_train) > 1e-9 || n_train < 1 || n_train > 3) {
    throw DataError("region split: train fraction must be 0.25, 0.5 or 0.75, got " +
                    std::to_string(train_fraction));
  }
  const int half = image.width / 2;
  if (half < min_crop) {
    throw DataError("region split: quadrant " + std::to_string(half) + "x" + std::to_string(half) +
                    " cannot hold a " + std::to_string(min_crop) + "x" + std::to_string(min_crop) + " crop");
  }
  const Region quads[4] = {{0, 0, half}, {half, 0, half}, {0, half, half}, {half, half, half}};
  RegionSplit split;
  for (int i = 0; i < 4; ++i) (i < n_train ? split.train : split.test).push_back(quads[i]);
  return split;
}

TextureDataset make_dataset(std::vector<std::string> class_names, std::vector<Image> sources,
                            std::vector<int> labels, int min_crop, double train_fraction) {
  if (sources.size() != labels.size()) throw DataError("dataset: sources and labels differ in length");
  TextureDataset ds;
  ds.class_names = std::move(class_names);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= static_cast<int>(ds.class_names.size())) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " out of range");
    }
    ds.splits.push_back(make_region_split(sources[i], train_fraction, min_crop));
  }
  std::vector<bool> seen(ds.class_names.size(), false);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = true;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) throw DataError("dataset: class '" + ds.class_names[c] + "' has no source image");
  }
  ds.sources = std::move(sources);
  ds.source_labels = std::move(labels);
  return ds;
}

TextureDataset make_synthetic_dataset(const std::vector<TextureClassSpec>& specs, int image_size,
                                      int min_crop) {
  std::vector<std::string> names;
  std::vector<Image> images;
  std::vector<int> labels;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    names.push_back(specs[i].name);
    images.push_back(gen_class_image(specs[i], image_size));
    labels.push_back(static_cast<int>(i));
  }
  return make_dataset(std::move(names), std::move(images), std::move(labels), min_crop);
}

PatchPair sample_stage1_pair(const TextureDataset& ds, int K, std::mt19937_64& rng) {
  if (ds.sources.empty()) throw DataError("stage-1 sampling: empty dataset");
  const int src = uniform_int(rng, 0, static_cast<int>(ds.sources.size()) - 1);
  const auto& regions = ds.splits[static_cast<std::size_t>(src)].train;
  const Region& r = regions[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(regions.size()) - 1))];
  const auto [gx, gy] = random_anchor(r, 2 * K, rng);
  const int ix = gx + uniform_int(rng, 0, K);
  const int iy = gy + uniform_int(rng, 0, K);
  const Image& image = ds.sources[static_cast<std::size_t>(src)];
  PatchPair pair;
  pair.ground_truth = image.crop(gx, gy, 2 * K, 2 * K);
  pair.input = image.crop(ix, iy, K, K);
  pair.label = ds.source_labels[static_cast<std::size_t>(src)];
  pair.truth_origin = {src, gx, gy, 2 * K};
  pair.input_origin = {src, ix, iy, K};
  return pair;
}

namespace {

LabeledPatch sample_from_source(const TextureDataset& ds, int src, int K, std::mt19937_64& rng,
                                SplitPart part) {
  const auto& split = ds.splits[static_cast<std::size_t>(src)];
  const auto& regions = part == SplitPart::Train ? split.train : split.test;
  const Region& r = regions[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(regions.size()) - 1))];
  const auto [x, y] = random_anchor(r, K, rng);
  LabeledPatch p;
  p.image = ds.sources[static_cast<std::size_t>(src)].crop(x, y, K, K);
  p.label = ds.source_labels[static_cast<std::size_t>(src)];
  p.origin = {src, x, y, K};
  return p;
}

}  // namespace

LabeledPatch sample_stage2_patch(const TextureDataset& ds, int K, std::mt19937_64& rng, SplitPart part) {
  if (ds.sources.empty()) throw DataError("stage-2 sampling: empty dataset");
  const int src = uniform_int(rng, 0, static_cast<int>(ds.sources.size()) - 1);
  return sample_from_source(ds, src, K, rng, part);
}

std::vector<LabeledPatch> sample_patch_set(const TextureDataset& ds, int K, int per_class,
                                           SplitPart part, std::mt19937_64& rng) {
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes()));
  for (std::size_t i = 0; i < ds.sources.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.source_labels[i])].push_back(static_cast<int>(i));
  }
  std::vector<LabeledPatch> out;
  out.reserve(static_cast<std::size_t>(per_class) * by_class.size());
  for (const auto& sources : by_class) {
    for (int i = 0; i < per_class; ++i) {
      const int src = sources[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(sources.size()) - 1))];
      out.push_back(sample_from_source(ds, src, K, rng, part));
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) out << e.patch_id << '\t' << e.class_name << '\t' << e.split << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string extra;
    if (!std::getline(fields, e.patch_id, '\t') || !std::getline(fields, e.class_name, '\t') ||
        !std::getline(fields, e.split, '\t') || std::getline(fields, extra, '\t')) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    if (e.split != "train" && e.split != "test" && e.split != "source") {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": unknown split '" + e.split + "'");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_dataset_dir(const std::filesystem::path& root, const TextureDataset& ds,
                      const std::vector<LabeledPatch>& train, const std::vector<LabeledPatch>& test) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root / "sources", ec);
  if (ec) throw IoError("cannot create " + (root / "sources").string() + ": " + ec.message());
  std::vector<ManifestEntry> entries;
  std::vector<int> per_class(ds.class_names.size(), 0);
  for (int l : ds.source_labels) ++per_class[static_cast<std::size_t>(l)];
  std::vector<int> source_counters(ds.class_names.size(), 0);
  for (std::size_t i = 0; i < ds.sources.size(); ++i) {
    const auto label = static_cast<std::size_t>(ds.source_labels[i]);
    const std::string& cls = ds.class_names[label];
    std::string id = "sources/" + cls;
    if (per_class[label] > 1) id += "_" + std::to_string(source_counters[label]++);
    write_ppm(ds.sources[i], root / (id + ".ppm"));
    entries.push_back({id, cls, "source"});
  }
  std::vector<int> counters(ds.class_names.size(), 0);
  auto emit = [&](const std::vector<LabeledPatch>& patches, const char* split) {
    for (const auto& p : patches) {
      const std::string& cls = ds.class_names[static_cast<std::size_t>(p.label)];
      fs::create_directories(root / cls, ec);
      if (ec) throw IoError("cannot create " + (root / cls).string() + ": " + ec.message());
      const std::string id = cls + "/" + std::to_string(counters[static_cast<std::size_t>(p.label)]++);
      write_ppm(p.image, root / (id + ".ppm"));
      entries.push_back({id, cls, split});
    }
  };
  emit(train, "train");
  emit(test, "test");
  write_manifest(root / "manifest.tsv", entries);
}

DatasetOnDisk load_dataset_dir(const std::filesystem::path& root, int min_crop) {
  const auto entries = read_manifest(root / "manifest.tsv");
  std::map<std::string, int> class_index;
  std::vector<std::string> names;
  auto label_of = [&](const std::string& cls) {
    auto [it, inserted] = class_index.emplace(cls, static_cast<int>(names.size()));
    if (inserted) names.push_back(cls);
    return it->second;
  };
  std::vector<Image> sources;
  std::vector<int> labels;
  DatasetOnDisk out;
  for (const auto& e : entries) {
    const int label = label_of(e.class_name);
    Image image = read_ppm(root / (e.patch_id + ".ppm"));
    if (e.split == "source") {
      sources.push_back(std::move(image));
      labels.push_back(label);
    } else {
      LabeledPatch p{std::move(image), label, {}};
      (e.split == "train" ? out.train : out.test).push_back(std::move(p));
    }
  }
  if (sources.empty()) throw DataError(root.string() + ": manifest lists no source images");
  out.dataset = make_dataset(std::move(names), std::move(sources), std::move(labels), min_crop);
  return out;
}

TextureDataset load_image_folder(const std::filesystem::path& root, int min_crop) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  std::vector<std::string> names;
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto ext = entry.path().extension();
      if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    const int label = static_cast<int>(names.size());
    names.push_back(dir.filename().string());
    for (const auto& f : files) {
      images.push_back(read_ppm(f));
      labels.push_back(label);
    }
  }
  if (names.empty()) throw DataError(root.string() + ": no class folders with PPM images");
  return make_dataset(std::move(names), std::move(images), std::move(labels), min_crop);
}

}  // namespace texhash

#pragma once

// Pipeline glue shared by the command-line tool and the acceptance suite:
// config translation, code extraction for patch sets and the ablation grid.

#include <filesystem>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "texhash/code_index.hpp"
#include "texhash/config.hpp"
#include "texhash/dataset.hpp"
#include "texhash/eval.hpp"
#include "texhash/fusion.hpp"
#include "texhash/hashing.hpp"
#include "texhash/tsn.hpp"

namespace texhash {

struct DataParams {
  int classes = 8;
  int image_size = 256;
  int patch_size = 32;
  int train_per_class = 256;
  int test_per_class = 64;
  double noise = 0.06;
  std::uint64_t seed = 7;
};

DataParams data_params(const RunConfig& cfg);
TsnConfig tsn_config(const RunConfig& cfg);
HashConfig hash_config(const RunConfig& cfg);
EvalOptions eval_options(const RunConfig& cfg);

// Synthetic sources plus class-balanced train (database) and test (query)
// patch sets drawn from disjoint quadrants.
DatasetOnDisk generate_data(const DataParams& p);
// Same split protocol over a folder of real textures instead of synthetic ones.
DatasetOnDisk generate_data(const DataParams& p, const std::filesystem::path& image_root);

// First `per_class` patches of each class, preserving order.
std::vector<LabeledPatch> take_per_class(const std::vector<LabeledPatch>& patches, int per_class);

std::vector<SignCode> encode_patches(const GeneratorNet& generator, const FusionPipeline& fusion,
                                     const HashModel& model, const std::vector<LabeledPatch>& patches);
std::vector<SignCode> lbp_lsh_codes(const std::vector<LabeledPatch>& patches, int bits, std::uint64_t seed);

// Items get ids 0..N-1 in order.
CodeIndex index_from_codes(const std::vector<SignCode>& codes, const std::vector<LabeledPatch>& patches);
QuerySet queries_from_codes(const std::vector<SignCode>& codes, const std::vector<LabeledPatch>& patches);

enum class HashMethod { Learned, LshOnTsn, LbpLsh };

struct VariantSpec {
  std::string name;
  HashMethod method = HashMethod::Learned;
  LossPreset tsn_preset = LossPreset::AdvStyleL1;
  bool attention = true;
  bool augment = true;
};

// Variant lists for the named presets: tsn-losses, no-ca, no-augmentation,
// lsh-baseline, lbp-lsh-baseline, trend (full, no-ca, no-augmentation and
// LBP+LSH together).
std::vector<VariantSpec> ablation_variants(const std::string& preset);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double map = 0.0;
  double precision_radius = 0.0;
  double precision_at_t = 0.0;
};

struct AblationResult {
  std::string preset;
  int bits = 0;
  int top_t = 0;
  std::vector<AblationRow> rows;
  std::vector<std::string> variant_order;
  std::map<std::string, double> median_map;
};

using ProgressFn = std::function<void(const std::string&)>;

// Every variant under every seed of run.seeds (or `seeds` when given). One
// stage-1 model is trained per (seed, loss preset) and shared by variants.
AblationResult run_ablation(const RunConfig& cfg, const DatasetOnDisk& data, const std::vector<VariantSpec>& variants,
                            const std::string& preset_name, std::optional<std::vector<int>> seeds = std::nullopt,
                            const ProgressFn& progress = {});

std::string ablation_table(const AblationResult& result);
std::string ablation_jsonl(const AblationResult& result, const RunConfig& cfg);

double median(std::vector<double> v);

}  // namespace texhash

#include "texhash/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "texhash/errors.hpp"
#include "texhash/lbp.hpp"
#include "texhash/seed.hpp"

namespace texhash {

DataParams data_params(const RunConfig& cfg) {
  DataParams p;
  p.classes = cfg.get_int("data.classes");
  p.image_size = cfg.get_int("data.image_size");
  p.patch_size = cfg.get_int("data.patch_size");
  p.train_per_class = cfg.get_int("data.train_per_class");
  p.test_per_class = cfg.get_int("data.test_per_class");
  p.noise = cfg.get_double("data.noise");
  p.seed = cfg.get_u64("data.seed");
  if (p.classes < 2) throw ConfigError("data.classes must be >= 2");
  if (p.train_per_class < 1 || p.test_per_class < 1) throw ConfigError("patch counts must be positive");
  return p;
}

TsnConfig tsn_config(const RunConfig& cfg) {
  TsnConfig c;
  c.generator.patch_size = cfg.get_int("data.patch_size");
  c.generator.base_width = cfg.get_int("tsn.base_width");
  c.generator.max_width = cfg.get_int("tsn.max_width");
  c.steps = cfg.get_int("tsn.steps");
  c.batch_size = cfg.get_int("tsn.batch_size");
  c.seed = cfg.get_u64("tsn.seed");
  c.preset = parse_preset(cfg.get_string("tsn.preset"));
  c.weights.gamma1 = cfg.get_double("tsn.gamma1");
  c.weights.gamma2 = cfg.get_double("tsn.gamma2");
  c.adam.lr = cfg.get_double("tsn.lr");
  return c;
}

HashConfig hash_config(const RunConfig& cfg) {
  HashConfig h;
  h.bits = cfg.get_int("hash.bits");
  h.nu = cfg.get_double("hash.nu");
  h.lambda = cfg.get_double("hash.lambda");
  h.mu = cfg.get_double("hash.mu");
  h.epochs = cfg.get_int("hash.epochs");
  h.batch_size = cfg.get_int("hash.batch_size");
  h.adam.lr = cfg.get_double("hash.lr");
  h.augment = cfg.get_bool("hash.augment");
  h.use_attention = cfg.get_bool("hash.attention");
  h.code_sweeps = cfg.get_int("hash.code_sweeps");
  h.seed = cfg.get_u64("hash.seed");
  return h;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions e;
  e.top_t = cfg.get_int("eval.top_t");
  e.radius = cfg.get_int("eval.radius");
  e.precision_ts = cfg.get_int_list("eval.precision_ts");
  e.timing_repetitions = cfg.get_int("eval.timing_repetitions");
  if (e.top_t < 1) throw ConfigError("eval.top_t must be >= 1");
  if (e.radius < 0) throw ConfigError("eval.radius must be >= 0");
  return e;
}

namespace {

DatasetOnDisk sample_splits(TextureDataset dataset, const DataParams& p) {
  DatasetOnDisk out;
  out.dataset = std::move(dataset);
  std::mt19937_64 rng(mix_seed(p.seed, 21));
  out.train = sample_patch_set(out.dataset, p.patch_size, p.train_per_class, SplitPart::Train, rng);
  out.test = sample_patch_set(out.dataset, p.patch_size, p.test_per_class, SplitPart::Test, rng);
  return out;
}

}  // namespace

DatasetOnDisk generate_data(const DataParams& p) {
  auto specs = default_class_specs(p.classes, p.seed);
  for (auto& s : specs) s.noise = p.noise;
  return sample_splits(make_synthetic_dataset(specs, p.image_size, 2 * p.patch_size), p);
}

DatasetOnDisk generate_data(const DataParams& p, const std::filesystem::path& image_root) {
  return sample_splits(load_image_folder(image_root, 2 * p.patch_size), p);
}

std::vector<LabeledPatch> take_per_class(const std::vector<LabeledPatch>& patches, int per_class) {
  std::map<int, int> taken;
  std::vector<LabeledPatch> out;
  for (const auto& p : patches) {
    if (taken[p.label] < per_class) {
      ++taken[p.label];
      out.push_back(p);
    }
  }
  return out;
}

std::vector<SignCode> encode_patches(const GeneratorNet& generator, const FusionPipeline& fusion,
                                     const HashModel& model, const std::vector<LabeledPatch>& patches) {
  if (patches.empty()) return {};
  return model.encode(compute_descriptors(generator, fusion, patches));
}

std::vector<SignCode> lbp_lsh_codes(const std::vector<LabeledPatch>& patches, int bits, std::uint64_t seed) {
  LshHasher hasher(256, bits, seed);
  std::vector<SignCode> out;
  out.reserve(patches.size());
  for (const auto& p : patches) out.push_back(hasher.encode(lbp_descriptor(p.image)));
  return out;
}

CodeIndex index_from_codes(const std::vector<SignCode>& codes, const std::vector<LabeledPatch>& patches) {
  if (codes.size() != patches.size()) throw std::invalid_argument("index_from_codes: size mismatch");
  if (codes.empty()) throw DataError("cannot build an index from zero patches");
  std::vector<BinaryCode> packed;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    packed.push_back(BinaryCode::pack(codes[i]));
    ids.push_back(i);
    labels.push_back(static_cast<std::uint32_t>(patches[i].label));
  }
  return CodeIndex::build(static_cast<int>(codes.front().size()), packed, ids, labels);
}

QuerySet queries_from_codes(const std::vector<SignCode>& codes, const std::vector<LabeledPatch>& patches) {
  if (codes.size() != patches.size()) throw std::invalid_argument("queries_from_codes: size mismatch");
  QuerySet q;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    q.codes.push_back(BinaryCode::pack(codes[i]));
    q.labels.push_back(static_cast<std::uint32_t>(patches[i].label));
  }
  return q;
}

std::vector<VariantSpec> ablation_variants(const std::string& preset) {
  const VariantSpec full{"full", HashMethod::Learned, LossPreset::AdvStyleL1, true, true};
  auto with = [&](std::string name, auto edit) {
    VariantSpec v = full;
    v.name = std::move(name);
    edit(v);
    return v;
  };
  const VariantSpec no_ca = with("no-ca", [](VariantSpec& v) { v.attention = false; });
  const VariantSpec no_aug = with("no-augmentation", [](VariantSpec& v) { v.augment = false; });
  const VariantSpec lsh = with("lsh-tsn", [](VariantSpec& v) { v.method = HashMethod::LshOnTsn; });
  const VariantSpec lbp = with("lbp-lsh", [](VariantSpec& v) { v.method = HashMethod::LbpLsh; });
  if (preset == "no-ca") return {full, no_ca};
  if (preset == "no-augmentation") return {full, no_aug};
  if (preset == "lsh-baseline") return {full, lsh};
  if (preset == "lbp-lsh-baseline") return {full, lbp};
  if (preset == "trend") return {full, no_ca, no_aug, lbp};
  if (preset == "tsn-losses") {
    std::vector<VariantSpec> out;
    for (LossPreset p : {LossPreset::L1Style, LossPreset::Adv, LossPreset::AdvStyle, LossPreset::AdvStyleL1}) {
      out.push_back(with("tsn:" + preset_name(p), [p](VariantSpec& v) { v.tsn_preset = p; }));
    }
    return out;
  }
  throw ConfigError("unknown ablation preset '" + preset +
                    "' (expected tsn-losses, no-ca, no-augmentation, lsh-baseline, lbp-lsh-baseline or trend)");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

AblationResult run_ablation(const RunConfig& cfg, const DatasetOnDisk& data, const std::vector<VariantSpec>& variants,
                            const std::string& preset_name_str, std::optional<std::vector<int>> seeds,
                            const ProgressFn& progress) {
  const std::vector<int> seed_list = seeds ? *seeds : cfg.get_int_list("run.seeds");
  const HashConfig base_hash = hash_config(cfg);
  const EvalOptions eval = eval_options(cfg);
  const auto queries_patches = take_per_class(data.test, cfg.get_int("eval.queries_per_class"));
  const int num_classes = data.dataset.num_classes();
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };

  AblationResult result;
  result.preset = preset_name_str;
  result.bits = base_hash.bits;
  result.top_t = eval.top_t;
  for (const auto& v : variants) result.variant_order.push_back(v.name);

  for (int seed : seed_list) {
    std::map<LossPreset, TsnModel> tsn_cache;
    auto tsn_for = [&](LossPreset preset) -> const TsnModel& {
      auto it = tsn_cache.find(preset);
      if (it != tsn_cache.end()) return it->second;
      TsnConfig tc = tsn_config(cfg);
      tc.seed = static_cast<std::uint64_t>(seed);
      tc.preset = preset;
      note("seed " + std::to_string(seed) + ": training stage 1 (" + preset_name(preset) + ")");
      return tsn_cache.emplace(preset, train_tsn(data.dataset, tc).model).first->second;
    };

    for (const auto& v : variants) {
      note("seed " + std::to_string(seed) + ": " + v.name);
      std::vector<SignCode> db, qs;
      switch (v.method) {
        case HashMethod::LbpLsh: {
          const auto lsh_seed = mix_seed(static_cast<std::uint64_t>(seed), 41);
          db = lbp_lsh_codes(data.train, base_hash.bits, lsh_seed);
          qs = lbp_lsh_codes(queries_patches, base_hash.bits, lsh_seed);
          break;
        }
        case HashMethod::LshOnTsn: {
          const TsnModel& tsn = tsn_for(v.tsn_preset);
          std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(seed), 42));
          FusionPipeline fusion(tsn.generator, v.attention, rng);
          LshHasher hasher(fusion.descriptor_dim(), base_hash.bits, mix_seed(static_cast<std::uint64_t>(seed), 43));
          auto encode = [&](const std::vector<LabeledPatch>& ps) {
            const Tensor d = compute_descriptors(tsn.generator, fusion, ps);
            std::vector<SignCode> out;
            const auto dim = static_cast<std::size_t>(fusion.descriptor_dim());
            for (std::size_t i = 0; i < ps.size(); ++i) out.push_back(hasher.encode(d.data().subspan(i * dim, dim)));
            return out;
          };
          db = encode(data.train);
          qs = encode(queries_patches);
          break;
        }
        case HashMethod::Learned: {
          const TsnModel& tsn = tsn_for(v.tsn_preset);
          HashConfig hc = base_hash;
          hc.seed = static_cast<std::uint64_t>(seed);
          hc.use_attention = v.attention;
          hc.augment = v.augment;
          const HashTrainResult trained = train_hash(tsn.generator, data.train, num_classes, hc);
          db = encode_patches(tsn.generator, trained.fusion, trained.model, data.train);
          qs = encode_patches(tsn.generator, trained.fusion, trained.model, queries_patches);
          break;
        }
      }
      const CodeIndex index = index_from_codes(db, data.train);
      const QuerySet queries = queries_from_codes(qs, queries_patches);
      AblationRow row;
      row.variant = v.name;
      row.seed = static_cast<std::uint64_t>(seed);
      row.map = map_at(index, queries, eval.top_t);
      row.precision_radius = precision_at_radius(index, queries, eval.radius);
      row.precision_at_t = precision_at_top(index, queries, eval.top_t);
      char buf[96];
      std::snprintf(buf, sizeof buf, "seed %d: %s MAP@%d = %.4f", seed, v.name.c_str(), eval.top_t, row.map);
      note(buf);
      result.rows.push_back(row);
    }
  }
  for (const auto& name : result.variant_order) {
    std::vector<double> maps;
    for (const auto& r : result.rows)
      if (r.variant == name) maps.push_back(r.map);
    result.median_map[name] = median(maps);
  }
  return result;
}

std::string ablation_table(const AblationResult& result) {
  std::string s = "| variant | median MAP@" + std::to_string(result.top_t) + " | per-seed MAP |\n|---|---|---|\n";
  for (const auto& name : result.variant_order) {
    std::string per;
    for (const auto& r : result.rows) {
      if (r.variant != name) continue;
      char buf[48];
      std::snprintf(buf, sizeof buf, "%s%llu:%.4f", per.empty() ? "" : " ", static_cast<unsigned long long>(r.seed),
                    r.map);
      per += buf;
    }
    char med[32];
    std::snprintf(med, sizeof med, "%.4f", result.median_map.at(name));
    s += "| " + name + " | " + med + " | " + per + " |\n";
  }
  return s;
}

std::string ablation_jsonl(const AblationResult& result, const RunConfig& cfg) {
  using nlohmann::ordered_json;
  ordered_json config = ordered_json::object();
  for (const auto& [k, v] : cfg.echo()) config[k] = v;
  std::string out;
  out += ordered_json{{"record", "header"}, {"schema", 1}, {"preset", result.preset}, {"bits", result.bits},
                      {"T", result.top_t}, {"config", config}}
             .dump() +
         "\n";
  for (const auto& r : result.rows) {
    out += ordered_json{{"record", "run"},
                        {"variant", r.variant},
                        {"seed", r.seed},
                        {"map", r.map},
                        {"precision_radius", r.precision_radius},
                        {"precision_at_t", r.precision_at_t}}
               .dump() +
           "\n";
  }
  for (const auto& name : result.variant_order) {
    out += ordered_json{{"record", "median"}, {"variant", name}, {"map", result.median_map.at(name)}}.dump() + "\n";
  }
  return out;
}

}  // namespace texhash

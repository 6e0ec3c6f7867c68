// Command-line front end over the texhash pipeline. Every failure prints one
// line `error code=<n> kind=<kind> msg="<text>"` to stderr and exits with n.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "texhash/errors.hpp"
#include "texhash/experiment.hpp"
#include "texhash/image.hpp"

namespace fs = std::filesystem;
using namespace texhash;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4, kIo = 5 };

int fail(int code, const char* kind, const std::string& message) {
  std::string flat;
  for (char c : message) flat += (c == '\n' || c == '"') ? '\'' : c;
  std::cerr << "error code=" << code << " kind=" << kind << " msg=\"" << flat << "\"\n";
  return code;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  RunConfig load() const {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
    for (const auto& o : overrides) cfg.set_assignment(o);
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "key = value config file (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "override one key, e.g. --set hash.bits=64")->take_all();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

int K_of(const RunConfig& cfg) { return cfg.get_int("data.patch_size"); }

DatasetOnDisk load_data(const RunConfig& cfg, const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  return load_dataset_dir(dir, 2 * K_of(cfg));
}

// Checkpoint references are stored relative to the model file so a model
// directory can be moved as a unit.
std::string relative_ref(const fs::path& target, const fs::path& model) {
  const fs::path base = fs::absolute(model).parent_path();
  return fs::absolute(target).lexically_normal().lexically_relative(base).generic_string();
}

fs::path resolve_ref(const std::string& ref, const fs::path& model) {
  const fs::path p(ref);
  return p.is_absolute() ? p : fs::absolute(model).parent_path() / p;
}

struct LoadedModel {
  TsnModel tsn;
  FusionPipeline fusion;
  HashModel hash;
};

LoadedModel load_model(const fs::path& model_path) {
  HashCheckpointRefs refs;
  HashModel hash = load_hash_model(model_path, &refs);
  TsnModel tsn = load_tsn_checkpoint(resolve_ref(refs.tsn_checkpoint, model_path));
  FusionPipeline fusion = load_fusion_checkpoint(resolve_ref(refs.fusion_checkpoint, model_path), tsn.generator);
  if (fusion.descriptor_dim() != hash.descriptor_dim)
    throw DataError("fusion descriptor length " + std::to_string(fusion.descriptor_dim()) +
                    " does not match hash model input " + std::to_string(hash.descriptor_dim));
  return {std::move(tsn), std::move(fusion), std::move(hash)};
}

void progress(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Texture retrieval with synthesis-network features and learned binary codes"};
  app.require_subcommand(1);

  ConfigArgs gen_cfg;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "render the synthetic texture set and write patches + manifest");
  add_config_options(gen, gen_cfg);
  gen->add_option("-o,--out", gen_out, "output dataset directory")->required();
  std::string gen_images;
  gen->add_option("--images", gen_images, "sample from <dir>/<class>/*.ppm instead of rendering")
      ->check(CLI::ExistingDirectory);

  ConfigArgs tsn_cfg;
  std::string tsn_data, tsn_out, tsn_history;
  auto* tsn = app.add_subcommand("train-tsn", "stage 1: train the texture synthesis network");
  add_config_options(tsn, tsn_cfg);
  tsn->add_option("-d,--data", tsn_data, "dataset directory")->required();
  tsn->add_option("-o,--out", tsn_out, "output checkpoint")->required();
  tsn->add_option("--history", tsn_history, "loss history CSV (default <out>.losses.csv)");

  std::string synth_ckpt, synth_in, synth_out;
  auto* synth = app.add_subcommand("synth", "expand one K x K patch to 2K x 2K");
  synth->add_option("-m,--checkpoint", synth_ckpt, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  synth->add_option("-i,--patch", synth_in, "input PPM")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--out", synth_out, "output PPM")->required();

  ConfigArgs hash_cfg;
  std::string hash_data, hash_tsn, hash_out;
  auto* hash = app.add_subcommand("train-hash", "stage 2: train fusion + hash projection on a frozen TSN");
  add_config_options(hash, hash_cfg);
  hash->add_option("-d,--data", hash_data, "dataset directory")->required();
  hash->add_option("-t,--tsn", hash_tsn, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  hash->add_option("-o,--out", hash_out, "output hash model; fusion weights go to <out>.fusion")->required();

  std::string idx_model, idx_data, idx_out;
  ConfigArgs idx_cfg;
  auto* idx = app.add_subcommand("build-index", "encode the database patches into a packed code index");
  add_config_options(idx, idx_cfg);
  idx->add_option("-m,--model", idx_model, "hash model")->required()->check(CLI::ExistingFile);
  idx->add_option("-d,--data", idx_data, "dataset directory")->required();
  idx->add_option("-o,--out", idx_out, "output index")->required();

  std::string q_index, q_model, q_patch;
  std::optional<int> q_top, q_radius;
  auto* query = app.add_subcommand("query", "rank index entries against one patch");
  query->add_option("-x,--index", q_index, "code index")->required()->check(CLI::ExistingFile);
  query->add_option("-m,--model", q_model, "hash model")->required()->check(CLI::ExistingFile);
  query->add_option("-i,--patch", q_patch, "query PPM, K x K")->required()->check(CLI::ExistingFile);
  auto* top_opt = query->add_option("--top", q_top, "return the T nearest codes")->check(CLI::PositiveNumber);
  auto* rad_opt = query->add_option("--radius", q_radius, "return every code within Hamming radius r")
                      ->check(CLI::NonNegativeNumber);
  top_opt->excludes(rad_opt);
  rad_opt->excludes(top_opt);

  ConfigArgs ev_cfg;
  std::string ev_index, ev_model, ev_data, ev_out, ev_plots;
  auto* ev = app.add_subcommand("evaluate", "score held-out queries against an index");
  add_config_options(ev, ev_cfg);
  ev->add_option("-x,--index", ev_index, "code index")->required()->check(CLI::ExistingFile);
  ev->add_option("-m,--model", ev_model, "hash model")->required()->check(CLI::ExistingFile);
  ev->add_option("-d,--data", ev_data, "dataset directory")->required();
  ev->add_option("-o,--out", ev_out, "report (JSON lines); timing goes to <out>.timing.jsonl")->required();
  ev->add_option("--plots", ev_plots, "directory for PR and precision@T plots (default: report directory)");

  ConfigArgs ab_cfg;
  std::string ab_preset, ab_data, ab_out;
  auto* ab = app.add_subcommand("ablate", "run a comparison grid over run.seeds and print a table");
  add_config_options(ab, ab_cfg);
  ab->add_option("preset", ab_preset,
                 "tsn-losses | no-ca | no-augmentation | lsh-baseline | lbp-lsh-baseline | trend")
      ->required();
  ab->add_option("-d,--data", ab_data, "dataset directory (generated from the config when omitted)");
  ab->add_option("-o,--out", ab_out, "write the per-run records as JSON lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "usage", e.what());
  }

  try {
    if (*gen) {
      const RunConfig cfg = gen_cfg.load();
      const DatasetOnDisk data =
          gen_images.empty() ? generate_data(data_params(cfg)) : generate_data(data_params(cfg), gen_images);
      save_dataset_dir(gen_out, data.dataset, data.train, data.test);
      write_text(fs::path(gen_out) / "config.cfg", cfg.to_text());
      std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test patches to "
                << gen_out << '\n';
    } else if (*tsn) {
      const RunConfig cfg = tsn_cfg.load();
      const DatasetOnDisk data = load_data(cfg, tsn_data);
      const TsnTrainResult r = train_tsn(data.dataset, tsn_config(cfg));
      save_tsn_checkpoint(r.model, tsn_out);
      write_loss_history_csv(r.history, tsn_history.empty() ? tsn_out + ".losses.csv" : tsn_history);
      const auto& last = r.history.empty() ? LossRecord{} : r.history.back();
      std::cout << "trained " << r.history.size() << " steps; final adv=" << last.adv << " style=" << last.style
                << " l1=" << last.l1 << '\n';
    } else if (*synth) {
      const TsnModel model = load_tsn_checkpoint(synth_ckpt);
      const Image patch = read_ppm(synth_in);
      const int K = model.generator.patch_size();
      if (patch.width != K || patch.height != K || patch.channels != 3)
        throw DataError("synth expects a " + std::to_string(K) + "x" + std::to_string(K) + " colour patch, got " +
                        std::to_string(patch.width) + "x" + std::to_string(patch.height));
      const std::vector<Image> batch{patch};
      NoGradGuard no_grad;
      const Tensor out = model.generator.generate(images_to_tensor(batch)).image;
      write_ppm(tensor_to_image(out, 0), synth_out);
    } else if (*hash) {
      const RunConfig cfg = hash_cfg.load();
      const DatasetOnDisk data = load_data(cfg, hash_data);
      const TsnModel tsn_model = load_tsn_checkpoint(hash_tsn);
      if (tsn_model.generator.patch_size() != K_of(cfg))
        throw DataError("checkpoint K=" + std::to_string(tsn_model.generator.patch_size()) +
                        " but data.patch_size=" + std::to_string(K_of(cfg)));
      const HashTrainResult r = train_hash(tsn_model.generator, data.train, data.dataset.num_classes(), hash_config(cfg));
      const std::string fusion_path = hash_out + ".fusion";
      save_fusion_checkpoint(r.fusion, tsn_model.generator.config(), fusion_path);
      save_hash_model(r.model, {relative_ref(hash_tsn, hash_out), relative_ref(fusion_path, hash_out)}, hash_out);
      for (const auto& h : r.history)
        std::cerr << "epoch " << h.epoch << " J=" << h.pairwise << " Q=" << h.classification
                  << " flips=" << h.bits_flipped << '\n';
      std::cout << "trained on " << r.original_samples << " patches + " << r.augmented_samples
                << " generated; wrote " << hash_out << '\n';
    } else if (*idx) {
      const RunConfig cfg = idx_cfg.load();
      const LoadedModel m = load_model(idx_model);
      const DatasetOnDisk data = load_data(cfg, idx_data);
      const auto codes = encode_patches(m.tsn.generator, m.fusion, m.hash, data.train);
      const CodeIndex index = index_from_codes(codes, data.train);
      save_index(index, idx_out);
      std::cout << "indexed " << index.size() << " codes of " << index.bits() << " bits\n";
    } else if (*query) {
      if (!q_top && !q_radius) throw ConfigError("query needs --top or --radius");
      const CodeIndex index = load_index(q_index);
      const LoadedModel m = load_model(q_model);
      if (m.hash.bits != index.bits())
        throw DataError("index holds " + std::to_string(index.bits()) + "-bit codes, model emits " +
                        std::to_string(m.hash.bits));
      LabeledPatch p;
      p.image = read_ppm(q_patch);
      const int K = m.tsn.generator.patch_size();
      if (p.image.width != K || p.image.height != K || p.image.channels != 3)
        throw DataError("query patch must be " + std::to_string(K) + "x" + std::to_string(K) + " colour");
      const auto codes = encode_patches(m.tsn.generator, m.fusion, m.hash, {p});
      const BinaryCode q = BinaryCode::pack(codes.front());
      const auto hits = q_top ? index.query_topk(q, *q_top) : index.query_radius(q, *q_radius);
      std::cout << "rank\tid\tlabel\tdistance\n";
      for (std::size_t i = 0; i < hits.size(); ++i)
        std::cout << i + 1 << '\t' << hits[i].id << '\t' << hits[i].label << '\t' << hits[i].distance << '\n';
    } else if (*ev) {
      const RunConfig cfg = ev_cfg.load();
      const CodeIndex index = load_index(ev_index);
      const LoadedModel m = load_model(ev_model);
      if (m.hash.bits != index.bits())
        throw DataError("index holds " + std::to_string(index.bits()) + "-bit codes, model emits " +
                        std::to_string(m.hash.bits));
      const DatasetOnDisk data = load_data(cfg, ev_data);
      const auto query_patches = take_per_class(data.test, cfg.get_int("eval.queries_per_class"));
      const auto codes = encode_patches(m.tsn.generator, m.fusion, m.hash, query_patches);
      EvalReport report = evaluate(index, queries_from_codes(codes, query_patches), eval_options(cfg));
      report.dataset_id = cfg.get_string("run.name");
      report.seed = cfg.get_u64("hash.seed");
      report.config = cfg.echo();
      write_report(report, ev_out);
      write_text(ev_out + ".timing.jsonl", timing_jsonl(report));
      const fs::path plot_dir = ev_plots.empty() ? fs::absolute(ev_out).parent_path() : fs::path(ev_plots);
      emit_plots(report, plot_dir);
      std::printf("MAP@%d %.4f  precision@r%d %.4f  mean query %.3g s\n", report.top_t, report.map_at_t,
                  report.radius, report.precision_radius, report.mean_query_seconds);
    } else if (*ab) {
      const RunConfig cfg = ab_cfg.load();
      const auto variants = ablation_variants(ab_preset);
      const DatasetOnDisk data = ab_data.empty() ? generate_data(data_params(cfg)) : load_data(cfg, ab_data);
      const AblationResult r = run_ablation(cfg, data, variants, ab_preset, std::nullopt, progress);
      if (!ab_out.empty()) write_text(ab_out, ablation_jsonl(r, cfg));
      std::cout << ablation_table(r);
    }
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const NumericError& e) {
    return fail(kNumeric, "numeric", e.what());
  } catch (const IoError& e) {
    return fail(kIo, "io", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kIo, "io", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kData, "data", e.what());
  } catch (const std::exception& e) {
    return fail(kData, "data", e.what());
  }
  return kOk;
}

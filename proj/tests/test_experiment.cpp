#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "texhash/blob_io.hpp"
#include "texhash/config.hpp"
#include "texhash/dataset.hpp"
#include "texhash/errors.hpp"
#include "texhash/experiment.hpp"
#include "texhash/image.hpp"

namespace fs = std::filesystem;
using namespace texhash;

namespace {

const fs::path kSmoke = fs::path(TEXHASH_SOURCE_DIR) / "configs" / "smoke.cfg";

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + TEXHASH_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// The whole smoke pipeline run into `dir`; every step must succeed.
void run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string c = " -c " + q(kSmoke);
  const fs::path data = dir / "data";
  auto step = [&](const std::string& args) {
    const CliResult r = cli(args, dir);
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
  };
  step("gen-data" + c + " -o " + q(data));
  step("train-tsn" + c + " -d " + q(data) + " -o " + q(dir / "tsn.ckpt"));
  const auto manifest = read_manifest(data / "manifest.tsv");
  fs::path patch;
  for (const auto& e : manifest)
    if (e.split == "test") {
      patch = data / (e.patch_id + ".ppm");
      break;
    }
  ASSERT_FALSE(patch.empty());
  fs::copy_file(patch, dir / "query.ppm");
  step("synth -m " + q(dir / "tsn.ckpt") + " -i " + q(dir / "query.ppm") + " -o " + q(dir / "synth.ppm"));
  step("train-hash" + c + " -d " + q(data) + " -t " + q(dir / "tsn.ckpt") + " -o " + q(dir / "hash.model"));
  step("build-index" + c + " -m " + q(dir / "hash.model") + " -d " + q(data) + " -o " + q(dir / "codes.txix"));
  step("query -x " + q(dir / "codes.txix") + " -m " + q(dir / "hash.model") + " -i " + q(dir / "query.ppm") +
       " --top 5");
  fs::copy_file(dir / "stdout.txt", dir / "query.tsv");
  step("evaluate" + c + " -x " + q(dir / "codes.txix") + " -m " + q(dir / "hash.model") + " -d " + q(data) +
       " -o " + q(dir / "report.jsonl") + " --plots " + q(dir / "plots"));
  step("ablate no-ca" + c + " -o " + q(dir / "ablate.jsonl"));
  fs::copy_file(dir / "stdout.txt", dir / "ablate.txt");
}

class Pipeline : public ::testing::Test {
 protected:
  static fs::path a_, b_;

  static void SetUpTestSuite() {
    const fs::path root = fs::temp_directory_path() / "texhash_cli_test";
    a_ = root / "a";
    b_ = root / "b";
    run_pipeline(a_);
    run_pipeline(b_);
  }
};

fs::path Pipeline::a_;
fs::path Pipeline::b_;

std::vector<nlohmann::json> json_lines(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_F(Pipeline, StepsSucceedAndSynthDoublesThePatch) {
  ASSERT_FALSE(HasFatalFailure());
  const Image in = read_ppm(a_ / "query.ppm");
  const Image out = read_ppm(a_ / "synth.ppm");
  EXPECT_EQ(out.width, 2 * in.width);
  EXPECT_EQ(out.height, 2 * in.height);
  EXPECT_EQ(out.channels, 3);
  EXPECT_TRUE(fs::exists(a_ / "tsn.ckpt.losses.csv"));
  EXPECT_TRUE(fs::exists(a_ / "hash.model.fusion"));
  EXPECT_TRUE(fs::exists(a_ / "report.jsonl.timing.jsonl"));
}

TEST_F(Pipeline, QueryListsTopRanks) {
  std::istringstream in(slurp(a_ / "query.tsv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "rank\tid\tlabel\tdistance");
  int rows = 0, last = -1;
  while (std::getline(in, line)) {
    int rank = 0, id = 0, label = 0, dist = 0;
    std::istringstream ls(line);
    ls >> rank >> id >> label >> dist;
    EXPECT_EQ(rank, ++rows);
    EXPECT_GE(dist, last);
    last = dist;
  }
  EXPECT_EQ(rows, 5);
}

TEST_F(Pipeline, ReportEchoesEveryConfigKey) {
  const std::string report = slurp(a_ / "report.jsonl");
  ASSERT_FALSE(report.empty());
  for (const auto& k : config_keys()) EXPECT_NE(report.find(std::string("\"") + k.name + "\""), std::string::npos) << k.name;
  EXPECT_NE(report.find("\"smoke\""), std::string::npos);
  EXPECT_EQ(report.find("seconds"), std::string::npos);
  EXPECT_NE(slurp(a_ / "report.jsonl.timing.jsonl").find("seconds"), std::string::npos);
  EXPECT_FALSE(fs::is_empty(a_ / "plots"));
}

TEST_F(Pipeline, AblationPairsVariantsUnderIdenticalSeeds) {
  const auto rows = json_lines(a_ / "ablate.jsonl");
  std::map<std::string, std::set<std::uint64_t>> seeds;
  for (const auto& r : rows)
    if (r.contains("variant") && r.contains("seed")) seeds[r["variant"].get<std::string>()].insert(r["seed"].get<std::uint64_t>());
  ASSERT_EQ(seeds.size(), 2u) << slurp(a_ / "ablate.jsonl");
  EXPECT_EQ(seeds.begin()->second, seeds.rbegin()->second);
  EXPECT_FALSE(seeds.begin()->second.empty());
  const std::string table = slurp(a_ / "ablate.txt");
  for (const auto& [name, s] : seeds) EXPECT_NE(table.find(name), std::string::npos) << table;
}

TEST_F(Pipeline, TwoRunsAreByteIdentical) {
  for (const char* f : {"tsn.ckpt", "tsn.ckpt.losses.csv", "synth.ppm", "hash.model", "hash.model.fusion",
                        "codes.txix", "query.tsv", "report.jsonl", "ablate.jsonl", "ablate.txt",
                        "data/manifest.tsv"}) {
    ASSERT_TRUE(fs::exists(a_ / f)) << f;
    EXPECT_EQ(read_file_bytes(a_ / f), read_file_bytes(b_ / f)) << f;
  }
  int plots = 0;
  for (const auto& e : fs::directory_iterator(a_ / "plots")) {
    EXPECT_EQ(read_file_bytes(e.path()), read_file_bytes(b_ / "plots" / e.path().filename())) << e.path();
    ++plots;
  }
  EXPECT_GT(plots, 0);
}

TEST_F(Pipeline, ErrorsPrintOneCodedLine) {
  const fs::path d = a_;
  struct Case {
    std::string args;
    int code;
    const char* kind;
  };
  const std::vector<Case> cases{
      {"train-tsn -c " + q(kSmoke) + " --set bogus.key=1 -d " + q(d / "data") + " -o " + q(d / "x"), 2, "config"},
      {"train-tsn -c " + q(kSmoke) + " -d " + q(d / "missing") + " -o " + q(d / "x"), 5, "io"},
      {"synth -m " + q(d / "tsn.ckpt") + " -i " + q(d / "synth.ppm") + " -o " + q(d / "x.ppm"), 3, "data"},
      {"query -x " + q(d / "codes.txix") + " -m " + q(d / "hash.model") + " -i " + q(d / "query.ppm"), 2, "config"},
      {"query -x " + q(d / "hash.model") + " -m " + q(d / "hash.model") + " -i " + q(d / "query.ppm") + " --top 3",
       5, "io"},
      {"", 2, "usage"},
      {"frobnicate", 2, "usage"},
  };
  for (const auto& c : cases) {
    const CliResult r = cli(c.args, d);
    EXPECT_EQ(r.code, c.code) << c.args << "\n" << r.err;
    const std::string prefix = "error code=" + std::to_string(c.code) + " kind=" + c.kind + " msg=\"";
    EXPECT_EQ(r.err.rfind(prefix, 0), 0u) << c.args << "\n" << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }
}

TEST(Cli, HelpExitsZero) {
  const fs::path d = fs::temp_directory_path();
  for (const char* args : {"--help", "train-hash --help", "ablate --help"}) {
    const CliResult r = cli(args, d);
    EXPECT_EQ(r.code, 0) << args;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << r.out;
  }
}

TEST(Experiment, GenerateDataIsSeededAndSplitIsDisjoint) {
  DataParams p;
  p.classes = 3;
  p.image_size = 128;
  p.patch_size = 16;
  p.train_per_class = 10;
  p.test_per_class = 4;
  const DatasetOnDisk a = generate_data(p), b = generate_data(p);
  ASSERT_EQ(a.train.size(), 30u);
  ASSERT_EQ(a.test.size(), 12u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].image.pixels, b.train[i].image.pixels);
  // The test quadrant of every source lies in the bottom-right; training crops never enter it.
  for (const auto& t : a.test) {
    EXPECT_GE(t.origin.x, 64);
    EXPECT_GE(t.origin.y, 64);
  }
  for (const auto& t : a.train) EXPECT_TRUE(t.origin.x + 16 <= 64 || t.origin.y + 16 <= 64);
  p.seed = 8;
  EXPECT_NE(generate_data(p).train[0].image.pixels, a.train[0].image.pixels);
}

TEST(Experiment, GenerateDataFromImageFolder) {
  const fs::path root = fs::temp_directory_path() / "texhash_folder_test";
  fs::remove_all(root);
  std::mt19937_64 rng(1);
  for (const char* cls : {"bark", "brick"}) {
    fs::create_directories(root / cls);
    for (int i = 0; i < 2; ++i) {
      Image img(64, 64, 3);
      for (auto& v : img.pixels) v = static_cast<double>(rng() % 256) / 255.0;
      write_ppm(img, root / cls / (std::to_string(i) + ".ppm"));
    }
  }
  DataParams p;
  p.patch_size = 8;
  p.train_per_class = 5;
  p.test_per_class = 2;
  const DatasetOnDisk d = generate_data(p, root);
  EXPECT_EQ(d.dataset.num_classes(), 2);
  EXPECT_EQ(d.dataset.sources.size(), 4u);
  EXPECT_EQ(d.train.size(), 10u);
  EXPECT_EQ(d.test.size(), 4u);
  for (const auto& t : d.train) EXPECT_EQ(t.image.width, 8);
  fs::remove_all(root);
}

TEST(Experiment, TakePerClassAndMedian) {
  std::vector<LabeledPatch> v(7);
  const int labels[] = {0, 1, 0, 0, 2, 1, 0};
  for (int i = 0; i < 7; ++i) v[i].label = labels[i], v[i].origin.x = i;
  const auto t = take_per_class(v, 2);
  std::vector<int> xs;
  for (const auto& p : t) xs.push_back(p.origin.x);
  EXPECT_EQ(xs, (std::vector<int>{0, 1, 2, 4, 5}));
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
}

TEST(Experiment, AblationPresets) {
  auto names = [](const std::string& preset) {
    std::vector<std::string> n;
    for (const auto& v : ablation_variants(preset)) n.push_back(v.name);
    return n;
  };
  EXPECT_EQ(names("no-ca").size(), 2u);
  EXPECT_EQ(names("no-augmentation").size(), 2u);
  EXPECT_EQ(names("tsn-losses").size(), 4u);
  EXPECT_EQ(names("trend").size(), 4u);
  const auto ca = ablation_variants("no-ca");
  EXPECT_NE(ca[0].attention, ca[1].attention);
  EXPECT_EQ(ca[0].augment, ca[1].augment);
  EXPECT_THROW(ablation_variants("everything"), ConfigError);
}

TEST(Experiment, LbpLshCodesAreSeededSigns) {
  DataParams p;
  p.classes = 2;
  p.image_size = 64;
  p.patch_size = 16;
  p.train_per_class = 4;
  p.test_per_class = 1;
  const auto d = generate_data(p);
  const auto a = lbp_lsh_codes(d.train, 24, 3), b = lbp_lsh_codes(d.train, 24, 3);
  ASSERT_EQ(a.size(), 8u);
  EXPECT_EQ(a, b);
  for (const auto& c : a) {
    ASSERT_EQ(c.size(), 24u);
    for (auto s : c) EXPECT_TRUE(s == 1 || s == -1);
  }
  EXPECT_NE(lbp_lsh_codes(d.train, 24, 4), a);
}

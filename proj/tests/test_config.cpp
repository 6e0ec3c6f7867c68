#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "texhash/config.hpp"
#include "texhash/errors.hpp"
#include "texhash/experiment.hpp"

using namespace texhash;

namespace {

std::string message_of(const std::string& text) {
  try {
    RunConfig::parse(text, "t.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsCoverEveryKeyAndParse) {
  const RunConfig cfg;
  std::set<std::string> names;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(names.insert(k.name).second) << "declared twice: " << k.name;
    switch (k.type) {
      case ValueType::Int: EXPECT_NO_THROW(cfg.get_int(k.name)) << k.name; break;
      case ValueType::Double: EXPECT_NO_THROW(cfg.get_double(k.name)) << k.name; break;
      case ValueType::Bool: EXPECT_NO_THROW(cfg.get_bool(k.name)) << k.name; break;
      case ValueType::String: EXPECT_FALSE(cfg.get_string(k.name).empty()) << k.name; break;
      case ValueType::IntList: EXPECT_FALSE(cfg.get_int_list(k.name).empty()) << k.name; break;
    }
  }
  EXPECT_NO_THROW(data_params(cfg));
  EXPECT_NO_THROW(tsn_config(cfg));
  EXPECT_NO_THROW(hash_config(cfg));
  EXPECT_NO_THROW(eval_options(cfg));
}

TEST(Config, ParsesCommentsWhitespaceAndLists) {
  const RunConfig cfg = RunConfig::parse(
      "# header\n\n  hash.bits =  64  # trailing\n"
      "eval.precision_ts = 5, 10 ,20\r\nhash.augment = off\nhash.lr = 1e-3\nrun.name = unit\n");
  EXPECT_EQ(cfg.get_int("hash.bits"), 64);
  EXPECT_EQ(cfg.get_int_list("eval.precision_ts"), (std::vector<int>{5, 10, 20}));
  EXPECT_FALSE(cfg.get_bool("hash.augment"));
  EXPECT_DOUBLE_EQ(cfg.get_double("hash.lr"), 1e-3);
  EXPECT_EQ(cfg.get_string("run.name"), "unit");
  EXPECT_EQ(cfg.get_int("data.classes"), RunConfig().get_int("data.classes"));
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_NE(message_of("hash.bitz = 3\n").find("hash.bitz"), std::string::npos);
  const std::string dup = message_of("hash.bits = 8\n\nhash.bits = 16\n");
  EXPECT_NE(dup.find("duplicate"), std::string::npos) << dup;
  EXPECT_NE(dup.find("t.cfg:3"), std::string::npos) << dup;
  EXPECT_NE(message_of("hash.bits 8\n").find("t.cfg:1"), std::string::npos);
  for (const char* bad : {"hash.bits = 8.5", "hash.bits = ", "hash.lr = fast", "hash.augment = maybe",
                          "eval.precision_ts = 5,x", "run.name = ", "hash.bits = 12abc"}) {
    const std::string m = message_of(std::string(bad) + "\n");
    EXPECT_NE(m.find("t.cfg:1"), std::string::npos) << bad << " -> " << m;
  }
}

TEST(Config, SetAndAssignmentOverride) {
  RunConfig cfg = RunConfig::parse("hash.bits = 16\n");
  cfg.set_assignment("hash.bits=64");
  EXPECT_EQ(cfg.get_int("hash.bits"), 64);
  cfg.set_assignment(" tsn.preset = adv ");
  EXPECT_EQ(cfg.get_string("tsn.preset"), "adv");
  EXPECT_THROW(cfg.set_assignment("hash.bits"), ConfigError);
  EXPECT_THROW(cfg.set_assignment("nope=1"), ConfigError);
  EXPECT_THROW(cfg.set("hash.bits", "x"), ConfigError);
  EXPECT_EQ(cfg.get_int("hash.bits"), 64);
}

TEST(Config, EchoIsDeclarationOrderAndRoundTrips) {
  RunConfig cfg;
  cfg.set("hash.bits", "16");
  cfg.set("run.seeds", "4,5");
  const auto echo = cfg.echo();
  ASSERT_EQ(echo.size(), config_keys().size());
  for (std::size_t i = 0; i < echo.size(); ++i) EXPECT_EQ(echo[i].first, config_keys()[i].name);
  const RunConfig back = RunConfig::parse(cfg.to_text());
  EXPECT_EQ(back.echo(), echo);
  EXPECT_EQ(back.to_text(), cfg.to_text());
}

TEST(Config, LoadFromFile) {
  const auto p = std::filesystem::temp_directory_path() / "texhash_test.cfg";
  {
    std::ofstream(p) << "hash.bits = 8\n";
  }
  EXPECT_EQ(RunConfig::load(p).get_int("hash.bits"), 8);
  std::filesystem::remove(p);
  EXPECT_THROW(RunConfig::load(p), IoError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"desk.cfg", "acceptance.cfg", "smoke.cfg", "full.cfg"}) {
    const auto path = std::filesystem::path(TEXHASH_SOURCE_DIR) / "configs" / name;
    RunConfig cfg;
    ASSERT_NO_THROW(cfg = RunConfig::load(path)) << name;
    EXPECT_NO_THROW(data_params(cfg)) << name;
    EXPECT_NO_THROW(tsn_config(cfg)) << name;
    EXPECT_NO_THROW(hash_config(cfg)) << name;
  }
}

TEST(Config, DerivedValidation) {
  RunConfig cfg;
  cfg.set("data.classes", "1");
  EXPECT_THROW(data_params(cfg), ConfigError);
  cfg = RunConfig();
  cfg.set("eval.top_t", "0");
  EXPECT_THROW(eval_options(cfg), ConfigError);
}

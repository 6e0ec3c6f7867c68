#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "texhash/eval.hpp"

using namespace texhash;

namespace {

struct Db {
  std::vector<std::vector<std::int8_t>> item_signs;
  std::vector<std::uint32_t> item_labels;
  std::vector<std::vector<std::int8_t>> query_signs;
  CodeIndex index;
  QuerySet queries;
};

Db random_db(int k, int n_items, int n_queries, int classes, std::mt19937_64& rng) {
  Db db;
  std::vector<BinaryCode> codes;
  std::vector<std::uint64_t> ids;
  for (int i = 0; i < n_items; ++i) {
    db.item_signs.push_back(oracle::random_code(k, rng));
    db.item_labels.push_back(static_cast<std::uint32_t>(i % classes));
    codes.push_back(BinaryCode::pack(db.item_signs.back()));
    ids.push_back(static_cast<std::uint64_t>(i));
  }
  db.index = CodeIndex::build(k, codes, ids, db.item_labels);
  for (int q = 0; q < n_queries; ++q) {
    db.query_signs.push_back(oracle::random_code(k, rng));
    db.queries.codes.push_back(BinaryCode::pack(db.query_signs.back()));
    db.queries.labels.push_back(static_cast<std::uint32_t>(rng() % classes));
  }
  return db;
}

double naive_map(const Db& db, int T) {
  double s = 0.0;
  for (std::size_t q = 0; q < db.query_signs.size(); ++q)
    s += oracle::average_precision(oracle::ranked(db.item_signs, db.item_labels, db.query_signs[q]),
                                   db.queries.labels[q], T);
  return s / db.query_signs.size();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(AveragePrecision, HandCases) {
  const std::vector<int> perfect{1, 1, 1}, second{0, 1}, none{0, 0, 0};
  EXPECT_DOUBLE_EQ(average_precision(perfect, 3), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(second, 1), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(none, 5), 0.0);
  EXPECT_DOUBLE_EQ(average_precision(none, 0), 0.0);
  // Denominator min(R_total, T): 2 of 3 relevant in a list of 2.
  const std::vector<int> two{1, 1};
  EXPECT_DOUBLE_EQ(average_precision(two, 10), 1.0);
}

TEST(AveragePrecision, InvariantBeyondRankT) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> full(40);
    for (auto& v : full) v = rng() % 3 == 0;
    const int T = 10;
    const std::vector<int> head(full.begin(), full.begin() + T);
    std::vector<int> shuffled(full);
    std::shuffle(shuffled.begin() + T, shuffled.end(), rng);
    const std::vector<int> head2(shuffled.begin(), shuffled.begin() + T);
    const int r = std::accumulate(full.begin(), full.end(), 0);
    EXPECT_EQ(average_precision(head, r), average_precision(head2, r));
  }
}

TEST(Map, PerfectConstructedIndex) {
  // Class c codes sit at distance <= 1 of query c; other classes are far.
  const int k = 16;
  std::vector<BinaryCode> codes;
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;
  QuerySet queries;
  for (std::uint32_t c = 0; c < 3; ++c) {
    std::vector<std::int8_t> base(k, -1);
    for (int i = 0; i < 5; ++i) base[c * 5 + i] = 1;
    queries.codes.push_back(BinaryCode::pack(base));
    queries.labels.push_back(c);
    for (int j = 0; j < 4; ++j) {
      auto s = base;
      s[15] = j % 2 ? 1 : -1;
      if (j >= 2) s[c * 5] = -1;
      codes.push_back(BinaryCode::pack(s));
      ids.push_back(ids.size());
      labels.push_back(c);
    }
  }
  const auto index = CodeIndex::build(k, codes, ids, labels);
  EXPECT_DOUBLE_EQ(map_at(index, queries, 4), 1.0);
  EXPECT_DOUBLE_EQ(precision_at_top(index, queries, 4), 1.0);
}

TEST(Map, MatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Db db = random_db(trial % 2 ? 8 : 16, 500, 50, 2 + trial % 5, rng);
    for (int T : {1, 50, 500}) ASSERT_NEAR(map_at(db.index, db.queries, T), naive_map(db, T), 1e-12);
  }
}

TEST(Map, RandomCodesNearChanceLevel) {
  // Permutation null: shuffle index labels, recompute MAP; the spread of the
  // null distribution bounds how far a random-code MAP can sit from 1/C.
  // Full-depth ranking (T = N): with T below the class size the min(R, T)
  // denominator pulls random AP far under 1/C.
  constexpr int C = 4;
  std::mt19937_64 rng(3);
  const Db db = random_db(16, 1000, 100, C, rng);
  std::vector<double> null;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<std::uint32_t> perm(db.item_labels);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<BinaryCode> codes;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      codes.push_back(db.index.code(i));
      ids.push_back(i);
    }
    null.push_back(map_at(CodeIndex::build(16, codes, ids, perm), db.queries, 1000));
  }
  double mean = 0, var = 0;
  for (double v : null) mean += v;
  mean /= null.size();
  for (double v : null) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (null.size() - 1));
  const double observed = map_at(db.index, db.queries, 1000);
  EXPECT_LT(std::abs(observed - mean), 3 * sd) << observed << " " << mean << " " << sd;
  // AP of a random full ranking carries a small positive bias over R / N.
  EXPECT_NEAR(mean, 1.0 / C, 0.02);
}

TEST(MapTies, RankOnlyDependence) {
  // Flipping the same bit in every item and query preserves all distances,
  // so the ranking and MAP are unchanged.
  std::mt19937_64 rng(4);
  Db db = random_db(16, 300, 30, 3, rng);
  const double before = map_at(db.index, db.queries, 30);
  auto flip = [](std::vector<std::int8_t> s) {
    s[3] = static_cast<std::int8_t>(-s[3]);
    return BinaryCode::pack(s);
  };
  std::vector<BinaryCode> codes;
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < db.item_signs.size(); ++i) {
    codes.push_back(flip(db.item_signs[i]));
    ids.push_back(i);
  }
  QuerySet q2;
  for (std::size_t i = 0; i < db.query_signs.size(); ++i) q2.codes.push_back(flip(db.query_signs[i]));
  q2.labels = db.queries.labels;
  EXPECT_EQ(map_at(CodeIndex::build(16, codes, ids, db.item_labels), q2, 30), before);
}

TEST(PrecisionAtRadius, CasesAndOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Db db = random_db(8, 200, 20, 3, rng);
    const int r = trial % 4;
    double ref = 0.0;
    for (std::size_t q = 0; q < db.query_signs.size(); ++q) {
      int in = 0, rel = 0;
      for (std::size_t i = 0; i < db.item_signs.size(); ++i) {
        if (oracle::hamming_pm1(db.item_signs[i], db.query_signs[q]) > r) continue;
        ++in;
        rel += db.item_labels[i] == db.queries.labels[q];
      }
      ref += in ? static_cast<double>(rel) / in : 0.0;
    }
    ASSERT_NEAR(precision_at_radius(db.index, db.queries, r), ref / db.query_signs.size(), 1e-12);
  }
  // Same-class items at distance 0 only.
  const std::vector<std::int8_t> a(8, 1), b(8, -1);
  const auto index = CodeIndex::build(8, {BinaryCode::pack(a), BinaryCode::pack(a), BinaryCode::pack(b)}, {1, 2, 3},
                                      {0, 0, 1});
  QuerySet q{{BinaryCode::pack(a)}, {0}};
  EXPECT_DOUBLE_EQ(precision_at_radius(index, q, 2), 1.0);
  std::vector<std::int8_t> mid(8, 1);
  for (int i = 0; i < 4; ++i) mid[i] = -1;
  QuerySet empty_ball{{BinaryCode::pack(mid)}, {0}};
  EXPECT_DOUBLE_EQ(precision_at_radius(index, empty_ball, 2), 0.0);
}

TEST(PrCurve, ShapeAndToyCase) {
  std::mt19937_64 rng(6);
  const Db db = random_db(12, 100, 10, 3, rng);
  const auto pr = pr_curve(db.index, db.queries);
  ASSERT_EQ(pr.size(), 13u);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    EXPECT_EQ(pr[i].radius, static_cast<int>(i));
    EXPECT_GE(pr[i].precision, 0.0);
    EXPECT_LE(pr[i].precision, 1.0);
    if (i) EXPECT_GE(pr[i].recall, pr[i - 1].recall);
  }
  EXPECT_DOUBLE_EQ(pr.back().recall, 1.0);
  // Toy: relevant item at distance 0, irrelevant one at distance 1, k = 2.
  const auto toy = CodeIndex::build(2, {BinaryCode::pack(std::vector<std::int8_t>{1, 1}),
                                        BinaryCode::pack(std::vector<std::int8_t>{1, -1})},
                                    {0, 1}, {7, 8});
  const auto t = pr_curve(toy, QuerySet{{BinaryCode::pack(std::vector<std::int8_t>{1, 1})}, {7}});
  ASSERT_EQ(t.size(), 3u);
  EXPECT_DOUBLE_EQ(t[0].recall, 1.0);
  EXPECT_DOUBLE_EQ(t[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(t[1].precision, 0.5);
  EXPECT_DOUBLE_EQ(t[2].precision, 0.5);
}

TEST(Timing, PositiveAndScalesWithN) {
  std::mt19937_64 rng(7);
  const Db small = random_db(64, 50000, 20, 5, rng);
  Db big = random_db(64, 100000, 20, 5, rng);
  big.queries = small.queries;
  EXPECT_GT(time_queries(small.index, small.queries, 50, 3), 0.0);
  std::vector<double> ratios;
  for (int trial = 0; trial < 5; ++trial)
    ratios.push_back(time_queries(big.index, big.queries, 50, 3) / time_queries(small.index, small.queries, 50, 3));
  std::sort(ratios.begin(), ratios.end());
  EXPECT_GE(ratios[2], 1.5);
  EXPECT_LE(ratios[2], 3.0);
  EXPECT_THROW(time_queries(small.index, small.queries, 50, 2), std::invalid_argument);
}

TEST(Report, MetricRangesAndDeterministicOutputs) {
  std::mt19937_64 rng(8);
  const Db db = random_db(16, 400, 40, 4, rng);
  EvalReport rep = evaluate(db.index, db.queries, EvalOptions{});
  rep.dataset_id = "unit";
  rep.seed = 5;
  rep.config = {{"hash.bits", "16"}};
  for (double v : {rep.map_at_t, rep.precision_radius}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (const auto& [t, p] : rep.precision_at_t) EXPECT_LE(p, 1.0);
  EXPECT_EQ(rep.pr.size(), 17u);
  const std::string text = report_jsonl(rep);
  EXPECT_EQ(text, report_jsonl(rep));
  EXPECT_NE(text.find("\"dataset\":\"unit\""), std::string::npos) << text;
  EXPECT_EQ(text.find("seconds"), std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "texhash_plots";
  std::filesystem::remove_all(dir);
  emit_plots(rep, dir);
  const std::string pr_csv = slurp(dir / "pr_curve.csv");
  EXPECT_EQ(std::count(pr_csv.begin(), pr_csv.end(), '\n'), 1 + 17);
  const std::string svg = slurp(dir / "pr_curve.svg");
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0, true);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  emit_plots(rep, dir);
  EXPECT_EQ(slurp(dir / "pr_curve.csv"), pr_csv);
  EXPECT_EQ(slurp(dir / "pr_curve.svg"), svg);
  std::filesystem::remove_all(dir);
}

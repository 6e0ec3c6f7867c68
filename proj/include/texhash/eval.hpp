#pragma once

// Retrieval metrics over a CodeIndex and a set of pre-encoded queries.
// Relevance is label equality; queries are never members of the index.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "texhash/code_index.hpp"

namespace texhash {

struct QuerySet {
  std::vector<BinaryCode> codes;
  std::vector<std::uint32_t> labels;
  std::size_t size() const { return codes.size(); }
};

// Sum of precision@t over relevant ranks, divided by min(r_total, T) where
// T = rel.size(); 0 when that minimum is 0.
double average_precision(std::span<const int> rel, int r_total);

// Per-query AP on the top-T ranking.
std::vector<double> average_precisions(const CodeIndex& index, const QuerySet& queries, int T);
double map_at(const CodeIndex& index, const QuerySet& queries, int T);
// Mean over queries of (relevant among top-T) / min(T, N).
double precision_at_top(const CodeIndex& index, const QuerySet& queries, int T);
// Mean over queries of the relevant fraction inside the radius-r ball;
// an empty ball scores 0.
double precision_at_radius(const CodeIndex& index, const QuerySet& queries, int r);

struct PrPoint {
  int radius = 0;
  double recall = 0.0;
  double precision = 0.0;
};
// One point per Hamming radius 0..k, each the mean over queries.
std::vector<PrPoint> pr_curve(const CodeIndex& index, const QuerySet& queries);

// Mean seconds per top-T scan, after one discarded warm-up pass.
double time_queries(const CodeIndex& index, const QuerySet& queries, int T, int repetitions);

struct EvalOptions {
  int top_t = 50;
  int radius = 2;
  std::vector<int> precision_ts{10, 25, 50, 100};
  int timing_repetitions = 3;
};

struct EvalReport {
  int bits = 0;
  int top_t = 0;
  int radius = 0;
  std::size_t num_queries = 0;
  std::size_t num_items = 0;
  double map_at_t = 0.0;
  std::vector<std::pair<int, double>> precision_at_t;
  double precision_radius = 0.0;
  std::vector<PrPoint> pr;
  double mean_query_seconds = 0.0;
  std::string dataset_id;
  std::uint64_t seed = 0;
  // Run configuration, in the order it was given.
  std::vector<std::pair<std::string, std::string>> config;
};

EvalReport evaluate(const CodeIndex& index, const QuerySet& queries, const EvalOptions& options);

// JSON-lines: a header record with schema version, config echo and identity,
// then one record per metric. Wall-clock timing is omitted so the text is a
// pure function of the inputs.
std::string report_jsonl(const EvalReport& report);
std::string timing_jsonl(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);

// pr_curve.csv/.svg and precision_at_t.csv/.svg under `dir`.
void emit_plots(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace texhash

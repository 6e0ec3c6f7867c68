#include "texhash/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "texhash/errors.hpp"

namespace texhash {

namespace {

constexpr int kReportSchema = 1;

std::map<std::uint32_t, int> label_counts(const CodeIndex& index) {
  std::map<std::uint32_t, int> counts;
  for (std::uint32_t l : index.labels()) ++counts[l];
  return counts;
}

int count_of(const std::map<std::uint32_t, int>& counts, std::uint32_t label) {
  auto it = counts.find(label);
  return it == counts.end() ? 0 : it->second;
}

void check_queries(const QuerySet& q) {
  if (q.codes.size() != q.labels.size()) throw std::invalid_argument("query codes and labels differ in length");
}

// Fixed six-significant-digit text for CSV/SVG so outputs diff cleanly.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string csv(const std::string& xname, const std::string& yname, const std::vector<std::pair<double, double>>& pts) {
  std::string s = xname + "," + yname + "\n";
  for (auto [x, y] : pts) s += num(x) + "," + num(y) + "\n";
  return s;
}

std::string svg(const std::string& title, const std::string& xname, const std::string& yname,
                const std::vector<std::pair<double, double>>& pts) {
  constexpr double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!pts.empty()) {
    xmin = xmax = pts.front().first;
    for (auto [x, y] : pts) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    if (xmax == xmin) xmax = xmin + 1;
  }
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n"
    << "  <title>" << title << "</title>\n"
    << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "  <line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "  <line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "  <text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">" << xname
    << "</text>\n"
    << "  <text x=\"14\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
    << H / 2 << ")\">" << yname << "</text>\n"
    << "  <text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
    << "  <text x=\"" << L - 6 << "\" y=\"" << py(0) + 4 << "\" text-anchor=\"end\" font-size=\"10\">0</text>\n"
    << "  <text x=\"" << L - 6 << "\" y=\"" << py(1) + 4 << "\" text-anchor=\"end\" font-size=\"10\">1</text>\n"
    << "  <text x=\"" << L << "\" y=\"" << H - B + 14 << "\" text-anchor=\"middle\" font-size=\"10\">" << num(xmin)
    << "</text>\n"
    << "  <text x=\"" << W - R << "\" y=\"" << H - B + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
    << num(xmax) << "</text>\n";
  if (!pts.empty()) {
    o << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) o << ' ';
      o << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    o << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace

double average_precision(std::span<const int> rel, int r_total) {
  if (r_total < 0) throw std::invalid_argument("average_precision: negative relevant count");
  const int denom = std::min<int>(r_total, static_cast<int>(rel.size()));
  if (denom == 0) return 0.0;
  double acc = 0.0;
  int hits = 0;
  for (std::size_t t = 0; t < rel.size(); ++t) {
    if (rel[t]) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(t + 1);
    }
  }
  return acc / denom;
}

std::vector<double> average_precisions(const CodeIndex& index, const QuerySet& queries, int T) {
  check_queries(queries);
  const auto counts = label_counts(index);
  std::vector<double> out;
  out.reserve(queries.size());
  std::vector<int> rel;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto hits = index.query_topk(queries.codes[q], T);
    rel.assign(static_cast<std::size_t>(T), 0);
    for (std::size_t i = 0; i < hits.size(); ++i) rel[i] = hits[i].label == queries.labels[q] ? 1 : 0;
    out.push_back(average_precision(rel, count_of(counts, queries.labels[q])));
  }
  return out;
}

double map_at(const CodeIndex& index, const QuerySet& queries, int T) {
  const auto ap = average_precisions(index, queries, T);
  if (ap.empty()) return 0.0;
  double s = 0.0;
  for (double v : ap) s += v;
  return s / static_cast<double>(ap.size());
}

double precision_at_top(const CodeIndex& index, const QuerySet& queries, int T) {
  check_queries(queries);
  if (queries.size() == 0 || index.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto hits = index.query_topk(queries.codes[q], T);
    int rel = 0;
    for (const auto& h : hits) rel += h.label == queries.labels[q] ? 1 : 0;
    s += static_cast<double>(rel) / static_cast<double>(hits.size());
  }
  return s / static_cast<double>(queries.size());
}

double precision_at_radius(const CodeIndex& index, const QuerySet& queries, int r) {
  check_queries(queries);
  if (queries.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto hits = index.query_radius(queries.codes[q], r);
    if (hits.empty()) continue;
    int rel = 0;
    for (const auto& h : hits) rel += h.label == queries.labels[q] ? 1 : 0;
    s += static_cast<double>(rel) / static_cast<double>(hits.size());
  }
  return s / static_cast<double>(queries.size());
}

std::vector<PrPoint> pr_curve(const CodeIndex& index, const QuerySet& queries) {
  check_queries(queries);
  const int k = index.bits();
  const auto counts = label_counts(index);
  std::vector<double> recall(static_cast<std::size_t>(k) + 1, 0.0), precision(recall.size(), 0.0);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto dist = index.distances(queries.codes[q]);
    std::vector<int> all(recall.size(), 0), good(recall.size(), 0);
    for (std::size_t i = 0; i < dist.size(); ++i) {
      ++all[static_cast<std::size_t>(dist[i])];
      if (index.label(i) == queries.labels[q]) ++good[static_cast<std::size_t>(dist[i])];
    }
    const int r_total = count_of(counts, queries.labels[q]);
    int cum_all = 0, cum_good = 0;
    for (std::size_t r = 0; r < recall.size(); ++r) {
      cum_all += all[r];
      cum_good += good[r];
      if (r_total > 0) recall[r] += static_cast<double>(cum_good) / r_total;
      if (cum_all > 0) precision[r] += static_cast<double>(cum_good) / cum_all;
    }
  }
  std::vector<PrPoint> out;
  const double n = queries.size() ? static_cast<double>(queries.size()) : 1.0;
  for (std::size_t r = 0; r < recall.size(); ++r) out.push_back(PrPoint{static_cast<int>(r), recall[r] / n, precision[r] / n});
  return out;
}

double time_queries(const CodeIndex& index, const QuerySet& queries, int T, int repetitions) {
  if (repetitions < 3) throw std::invalid_argument("time_queries: need at least 3 repetitions");
  if (queries.size() == 0) return 0.0;
  std::size_t sink = 0;
  for (const auto& q : queries.codes) sink += index.query_topk(q, T).size();
  const auto t0 = std::chrono::steady_clock::now();
  for (int rep = 0; rep < repetitions; ++rep)
    for (const auto& q : queries.codes) sink += index.query_topk(q, T).size();
  const auto t1 = std::chrono::steady_clock::now();
  volatile std::size_t keep = sink;
  (void)keep;
  return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(repetitions * queries.size());
}

EvalReport evaluate(const CodeIndex& index, const QuerySet& queries, const EvalOptions& options) {
  EvalReport r;
  r.bits = index.bits();
  r.top_t = options.top_t;
  r.radius = options.radius;
  r.num_queries = queries.size();
  r.num_items = index.size();
  r.map_at_t = map_at(index, queries, options.top_t);
  for (int t : options.precision_ts) r.precision_at_t.emplace_back(t, precision_at_top(index, queries, t));
  r.precision_radius = precision_at_radius(index, queries, options.radius);
  r.pr = pr_curve(index, queries);
  r.mean_query_seconds = time_queries(index, queries, options.top_t, options.timing_repetitions);
  return r;
}

std::string report_jsonl(const EvalReport& report) {
  using nlohmann::ordered_json;
  ordered_json config = ordered_json::object();
  for (const auto& [k, v] : report.config) config[k] = v;
  std::string out;
  auto line = [&](const ordered_json& j) { out += j.dump() + "\n"; };
  line({{"record", "header"},
        {"schema", kReportSchema},
        {"dataset", report.dataset_id},
        {"seed", report.seed},
        {"bits", report.bits},
        {"queries", report.num_queries},
        {"items", report.num_items},
        {"config", config}});
  line({{"record", "map"}, {"T", report.top_t}, {"value", report.map_at_t}});
  for (auto [t, p] : report.precision_at_t) line({{"record", "precision_at_t"}, {"T", t}, {"value", p}});
  line({{"record", "precision_radius"}, {"radius", report.radius}, {"value", report.precision_radius}});
  for (const auto& p : report.pr) {
    line({{"record", "pr_point"}, {"radius", p.radius}, {"recall", p.recall}, {"precision", p.precision}});
  }
  return out;
}

std::string timing_jsonl(const EvalReport& report) {
  nlohmann::ordered_json j{{"record", "timing"},
                           {"schema", kReportSchema},
                           {"T", report.top_t},
                           {"items", report.num_items},
                           {"mean_query_seconds", report.mean_query_seconds}};
  return j.dump() + "\n";
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  write_text(path, report_jsonl(report));
}

void emit_plots(const EvalReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::pair<double, double>> pr, pt;
  for (const auto& p : report.pr) pr.emplace_back(p.recall, p.precision);
  for (auto [t, p] : report.precision_at_t) pt.emplace_back(static_cast<double>(t), p);
  write_text(dir / "pr_curve.csv", csv("recall", "precision", pr));
  write_text(dir / "pr_curve.svg", svg("precision vs recall", "recall", "precision", pr));
  write_text(dir / "precision_at_t.csv", csv("top_t", "precision", pt));
  write_text(dir / "precision_at_t.svg", svg("precision vs number retrieved", "top_t", "precision", pt));
}

}  // namespace texhash

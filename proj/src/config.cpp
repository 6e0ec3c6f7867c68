#include "texhash/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "texhash/errors.hpp"

namespace texhash {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return &k;
  return nullptr;
}

bool parse_long(const std::string& v, long long& out) {
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end && !v.empty();
}

bool parse_real(const std::string& v, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(v, &used);
    return used == v.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_flag(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return out = true, true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return out = false, true;
  return false;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

void validate(const ConfigKey& key, const std::string& value) {
  bool ok = true;
  long long i = 0;
  double d = 0;
  bool b = false;
  switch (key.type) {
    case ValueType::Int: ok = parse_long(value, i); break;
    case ValueType::Double: ok = parse_real(value, d); break;
    case ValueType::Bool: ok = parse_flag(value, b); break;
    case ValueType::String: ok = !value.empty(); break;
    case ValueType::IntList:
      for (const auto& part : split_list(value)) ok = ok && parse_long(part, i);
      break;
  }
  if (!ok) throw ConfigError("invalid value '" + value + "' for key " + key.name);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"run.name", ValueType::String, "desk", "dataset / run identifier echoed into reports"},
      {"run.seeds", ValueType::IntList, "1,2,3", "seeds used by ablate"},
      {"data.classes", ValueType::Int, "8", "number of synthetic texture classes"},
      {"data.image_size", ValueType::Int, "256", "side of each synthetic source image"},
      {"data.patch_size", ValueType::Int, "32", "K, the patch side"},
      {"data.train_per_class", ValueType::Int, "256", "database patches per class"},
      {"data.test_per_class", ValueType::Int, "64", "held-out query patches per class"},
      {"data.noise", ValueType::Double, "0.06", "pixel noise amplitude of synthetic textures"},
      {"data.seed", ValueType::Int, "7", "texture rendering and patch sampling seed"},
      {"tsn.steps", ValueType::Int, "2000", "stage-1 optimisation steps"},
      {"tsn.batch_size", ValueType::Int, "4", "stage-1 pairs per step"},
      {"tsn.base_width", ValueType::Int, "8", "generator channels at full resolution"},
      {"tsn.max_width", ValueType::Int, "64", "generator channel cap"},
      {"tsn.preset", ValueType::String, "adv+style+l1", "loss preset: l1+style, adv, adv+style, adv+style+l1"},
      {"tsn.gamma1", ValueType::Double, "100", "style loss weight"},
      {"tsn.gamma2", ValueType::Double, "1", "L1 loss weight"},
      {"tsn.lr", ValueType::Double, "0.0002", "stage-1 Adam learning rate"},
      {"tsn.seed", ValueType::Int, "1", "stage-1 seed"},
      {"hash.bits", ValueType::Int, "32", "code length k"},
      {"hash.nu", ValueType::Double, "0.1", "classification term weight"},
      {"hash.lambda", ValueType::Double, "1", "ridge weight of the classifier"},
      {"hash.mu", ValueType::Double, "1", "code fitting penalty"},
      {"hash.epochs", ValueType::Int, "30", "stage-2 epochs"},
      {"hash.batch_size", ValueType::Int, "32", "stage-2 batch size"},
      {"hash.lr", ValueType::Double, "0.003", "stage-2 Adam learning rate"},
      {"hash.augment", ValueType::Bool, "true", "add crops of generated expansions to training"},
      {"hash.attention", ValueType::Bool, "true", "channel attention in the fusion pipeline"},
      {"hash.code_sweeps", ValueType::Int, "1", "bitwise code update sweeps per epoch"},
      {"hash.seed", ValueType::Int, "1", "stage-2 seed"},
      {"eval.top_t", ValueType::Int, "50", "T for MAP@T"},
      {"eval.radius", ValueType::Int, "2", "Hamming radius for ball precision"},
      {"eval.precision_ts", ValueType::IntList, "10,25,50,100", "T values for precision@T"},
      {"eval.queries_per_class", ValueType::Int, "64", "queries drawn from the held-out patches per class"},
      {"eval.timing_repetitions", ValueType::Int, "3", "timed passes over the query set"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key " + key);
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const ConfigKey* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  validate(*spec, value);
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  long long v = 0;
  if (!parse_long(raw(key), v)) throw ConfigError(key + " is not an integer");
  return static_cast<int>(v);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  long long v = 0;
  if (!parse_long(raw(key), v) || v < 0) throw ConfigError(key + " is not a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0;
  if (!parse_real(raw(key), v)) throw ConfigError(key + " is not a number");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  if (!parse_flag(raw(key), v)) throw ConfigError(key + " is not a boolean");
  return v;
}

const std::string& RunConfig::get_string(const std::string& key) const { return raw(key); }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& part : split_list(raw(key))) {
    long long v = 0;
    if (!parse_long(part, v)) throw ConfigError(key + " contains a non-integer entry");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, values_.at(k.name));
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [k, v] : echo()) s += k + " = " + v + "\n";
  return s;
}

}  // namespace texhash

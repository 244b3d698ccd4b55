#pragma once

// Experiment plumbing: a resolved run configuration that round-trips through
// JSON, content-addressed output directories, and the run record with a
// SHA-256 manifest of every file a run writes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "fraclt/fractal.hpp"
#include "fraclt/regime.hpp"
#include "fraclt/verify.hpp"

namespace fraclt {

inline constexpr const char* kToolVersion = "1.0.0";

inline const std::vector<std::string>& known_commands() {
  static const std::vector<std::string> c{"regime",       "simulate", "iepsilon-sweep", "moment-fit",
                                          "scaling-check", "dim-m2",  "dim-d2",         "verify"};
  return c;
}

/// Invalid configuration, tagged with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

  nlohmann::json diagnostics() const {
    return {{"error", "invalid configuration"}, {"field", field_}, {"message", what()}};
  }

 private:
  std::string field_;
};

/// Every parameter a command may read. Unset optionals are filled with the
/// command's defaults by resolve(); a resolved config is what runs and what
/// gets hashed.
struct ExperimentConfig {
  std::string command;
  std::string spec;
  std::uint64_t seed = 1;
  std::optional<int> replications;
  std::vector<int> grid;  ///< nodes per axis for the first and second field
  std::optional<double> radius;
  std::optional<double> eps_min, eps_max;
  std::optional<int> eps_points;
  std::optional<double> r_min, r_max;
  std::optional<int> r_points;
  std::vector<double> scales;
  std::optional<double> kappa;
  std::optional<std::uint64_t> pair_cap;
  std::map<std::string, double> tolerances;
  std::string out = "runs";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

template <class T>
void put(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <class T>
void get(const nlohmann::json& j, const char* key, std::optional<T>& v) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    v = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

template <class T>
void get(const nlohmann::json& j, const char* key, T& v) {
  if (!j.contains(key)) return;
  try {
    v = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"command", c.command}, {"spec", c.spec}, {"seed", c.seed}, {"out", c.out}};
  detail::put(j, "replications", c.replications);
  if (!c.grid.empty()) j["grid"] = c.grid;
  detail::put(j, "radius", c.radius);
  detail::put(j, "eps_min", c.eps_min);
  detail::put(j, "eps_max", c.eps_max);
  detail::put(j, "eps_points", c.eps_points);
  detail::put(j, "r_min", c.r_min);
  detail::put(j, "r_max", c.r_max);
  detail::put(j, "r_points", c.r_points);
  if (!c.scales.empty()) j["scales"] = c.scales;
  detail::put(j, "kappa", c.kappa);
  detail::put(j, "pair_cap", c.pair_cap);
  if (!c.tolerances.empty()) j["tolerances"] = c.tolerances;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("", "configuration must be a JSON object");
  static const std::vector<std::string> keys{"command", "spec",      "seed",  "out",     "replications",
                                             "grid",    "radius",    "eps_min", "eps_max", "eps_points",
                                             "r_min",   "r_max",     "r_points", "scales", "kappa",
                                             "pair_cap", "tolerances"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError(k, "unknown field");
  ExperimentConfig c;
  detail::get(j, "command", c.command);
  detail::get(j, "spec", c.spec);
  detail::get(j, "seed", c.seed);
  detail::get(j, "out", c.out);
  detail::get(j, "replications", c.replications);
  detail::get(j, "grid", c.grid);
  detail::get(j, "radius", c.radius);
  detail::get(j, "eps_min", c.eps_min);
  detail::get(j, "eps_max", c.eps_max);
  detail::get(j, "eps_points", c.eps_points);
  detail::get(j, "r_min", c.r_min);
  detail::get(j, "r_max", c.r_max);
  detail::get(j, "r_points", c.r_points);
  detail::get(j, "scales", c.scales);
  detail::get(j, "kappa", c.kappa);
  detail::get(j, "pair_cap", c.pair_cap);
  detail::get(j, "tolerances", c.tolerances);
  return c;
}

inline ExperimentConfig read_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot read " + path);
  try {
    return config_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", e.what());
  }
}

/// Default tolerance of each verdict a command emits.
inline std::map<std::string, double> default_tolerances(const std::string& command) {
  if (command == "iepsilon-sweep") return {{"exponent", 0.05}, {"log_r2", 0.99}};
  if (command == "moment-fit") return {{"slope", 0.05}};
  if (command == "scaling-check") return {{"relative", 1e-3}};
  if (command == "dim-m2") return {{"dimension", 0.15}};
  if (command == "dim-d2") return {{"dimension", 0.25}};
  if (command == "verify") return {{"detcov", 1e-8}, {"moment_identity", 0.01}};
  return {};
}

/// Fills command defaults and validates; throws ConfigError naming the field.
inline ExperimentConfig resolve(ExperimentConfig c) {
  const auto& cmds = known_commands();
  if (std::find(cmds.begin(), cmds.end(), c.command) == cmds.end())
    throw ConfigError("command", "unknown command '" + c.command + "'");
  const bool needs_spec = c.command != "verify";
  if (needs_spec && c.spec.empty()) throw ConfigError("spec", "a problem spec n1,n2,alpha1,alpha2,d is required");
  if (!c.spec.empty()) {
    try {
      ProblemSpec::parse(c.spec);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("spec", e.what());
    }
  }
  auto fill = [](auto& field, auto value) {
    if (!field) field = value;
  };
  const std::string& cmd = c.command;
  if (cmd == "simulate") {
    fill(c.radius, 1.0);
    // Largest default that stays under the Cholesky point cap in every dimension.
    if (c.grid.empty()) {
      const ProblemSpec spec = ProblemSpec::parse(c.spec);
      auto count = [](int n) { return n == 1 ? 1025 : static_cast<int>(std::floor(std::pow(4096.0, 1.0 / n) + 1e-9)); };
      c.grid = {count(spec.n1()), count(spec.n2())};
    }
  } else if (cmd == "iepsilon-sweep") {
    fill(c.radius, 1.0);
    fill(c.eps_min, 1e-8);
    fill(c.eps_max, 1e-2);
    fill(c.eps_points, 13);
    fill(c.replications, 0);
    if (c.grid.empty()) c.grid = {64};
  } else if (cmd == "moment-fit") {
    fill(c.r_min, 1e-7);
    fill(c.r_max, 1e-4);
    fill(c.r_points, 10);
  } else if (cmd == "scaling-check") {
    fill(c.radius, 1.0);
    if (c.scales.empty()) c.scales = {2.0, 5.0};
  } else if (cmd == "dim-m2" || cmd == "dim-d2") {
    fill(c.replications, 8);
    fill(c.kappa, 2.0);
    // The sorted sweep costs O(n log n + hits), so the nominal product cap is generous here.
    fill(c.pair_cap, std::uint64_t{1} << 40);
    if (c.grid.empty()) c.grid = cmd == "dim-m2" ? std::vector<int>{2048} : std::vector<int>{16385};
  }
  if (c.grid.size() == 1) c.grid.push_back(c.grid[0]);
  for (const auto& [k, v] : default_tolerances(cmd)) c.tolerances.try_emplace(k, v);

  if (c.grid.size() > 2) throw ConfigError("grid", "grid takes one or two per-axis node counts");
  for (int g : c.grid)
    if (g < 2) throw ConfigError("grid", "per-axis node counts must be >= 2");
  if (c.replications && *c.replications < 0) throw ConfigError("replications", "must be >= 0");
  if (c.radius && !(*c.radius > 0.0)) throw ConfigError("radius", "must be positive");
  if (c.eps_min && !(*c.eps_min > 0.0)) throw ConfigError("eps_min", "must be positive");
  if (c.eps_min && c.eps_max && !(*c.eps_max > *c.eps_min)) throw ConfigError("eps_max", "must exceed eps_min");
  if (c.eps_points && *c.eps_points < 2) throw ConfigError("eps_points", "must be >= 2");
  if (c.r_min && !(*c.r_min > 0.0)) throw ConfigError("r_min", "must be positive");
  if (c.r_min && c.r_max && !(*c.r_max > *c.r_min)) throw ConfigError("r_max", "must exceed r_min");
  if (c.r_points && *c.r_points < 2) throw ConfigError("r_points", "must be >= 2");
  for (std::size_t i = 0; i < c.scales.size(); ++i)
    if (!(c.scales[i] > 0.0)) throw ConfigError("scales[" + std::to_string(i) + "]", "must be positive");
  if (c.kappa && !(*c.kappa > 0.0)) throw ConfigError("kappa", "must be positive");
  if (c.pair_cap && *c.pair_cap < 1) throw ConfigError("pair_cap", "must be positive");
  for (const auto& [k, v] : c.tolerances)
    if (!(v >= 0.0)) throw ConfigError("tolerances." + k, "must be non-negative");
  if (c.out.empty()) throw ConfigError("out", "output root must not be empty");
  return c;
}

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s.push_back(hex[md[i] >> 4]);
    s.push_back(hex[md[i] & 15]);
  }
  return s;
}

inline std::string file_sha256(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return sha256_hex(os.str());
}

/// Hash of the resolved config without the output root; the worker count is
/// never part of the config, so it cannot change the address.
inline std::string config_hash(const ExperimentConfig& resolved) {
  nlohmann::json j = to_json(resolved);
  j.erase("out");
  return sha256_hex(j.dump()).substr(0, 16);
}

inline std::filesystem::path run_directory(const ExperimentConfig& resolved) {
  return std::filesystem::path(resolved.out) / (resolved.command + "-" + config_hash(resolved));
}

/// Creates the run directory. An existing one is only cleared with overwrite.
inline std::filesystem::path prepare_run_directory(const ExperimentConfig& resolved, bool overwrite) {
  namespace fs = std::filesystem;
  const fs::path dir = run_directory(resolved);
  if (fs::exists(dir)) {
    if (!overwrite)
      throw ConfigError("out", "run directory " + dir.string() + " already exists; pass --overwrite to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

struct ManifestEntry {
  std::string file;
  std::uintmax_t bytes = 0;
  std::string sha256;
};

/// Sorted listing of the regular files in dir, excluding `skip`.
inline std::vector<ManifestEntry> manifest(const std::filesystem::path& dir, const std::string& skip) {
  std::vector<ManifestEntry> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == skip) continue;
    out.push_back({e.path().filename().string(), e.file_size(), file_sha256(e.path())});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.file < b.file; });
  return out;
}

struct RunRecord {
  ExperimentConfig config;
  std::string version = kToolVersion;
  double wall_seconds = 0.0;
  int threads = 1;
  std::vector<Verdict> verdicts;
  std::vector<ManifestEntry> files;
  std::filesystem::path directory;

  bool passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
  }
};

inline nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : r.verdicts) verdicts.push_back(to_json(v));
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : r.files) files.push_back({{"file", f.file}, {"bytes", f.bytes}, {"sha256", f.sha256}});
  return {{"config", to_json(r.config)},
          {"config_hash", config_hash(r.config)},
          {"version", r.version},
          {"wall_seconds", r.wall_seconds},
          {"threads", r.threads},
          {"passed", r.passed()},
          {"verdicts", verdicts},
          {"files", files}};
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

}  // namespace fraclt

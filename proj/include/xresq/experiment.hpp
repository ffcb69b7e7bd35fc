#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "xresq/ensemble.hpp"
#include "xresq/metrics.hpp"

namespace xresq {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kWorkersEnv = "XRESQ_WORKERS";

/// Sweep description. Text form is `key = value` per line, lists comma separated,
/// `#` starts a comment. Overrides given on the command line replace file values.
///
/// The antenna grid is the product of n_t and n_r with combinations where
/// n_r < n_t dropped.
struct ExperimentConfig {
  std::vector<std::size_t> n_t{4};
  std::vector<std::size_t> n_r{4};
  std::vector<Modulation> modulation{Modulation::QPSK};
  std::vector<double> snr_db{20.0};
  std::vector<Strategy> detectors{Strategy::MmseOnly};
  std::vector<std::size_t> l_p{1};
  /// Full-expansion depth for IoTResQ; its l_p is |O|^n_fs regardless of the l_p list.
  std::size_t n_fs = 1;
  std::size_t instances_per_point = 100;
  std::size_t n_sweeps = 50;
  std::size_t replicas = 8;
  std::uint64_t master_seed = 1;
  std::string output_dir = "results";
  std::size_t packet_bits = 12000;
  /// "iid" or a channel-trace file path.
  std::string channel = "iid";
  /// Largest candidate count the exhaustive ML reference may enumerate.
  double ml_budget = 1048576.0;
  /// Cached ML objectives written by the oracle pass (empty: <output_dir>/oracle.json if present).
  std::string oracle_cache;

  void validate() const {
    if (n_t.empty() || n_r.empty() || modulation.empty() || snr_db.empty() || detectors.empty() || l_p.empty())
      throw ConfigError("grid lists must be nonempty");
    if (instances_per_point < 1) throw ConfigError("instances_per_point must be at least 1");
    if (n_sweeps < 1 || replicas < 1) throw ConfigError("n_sweeps and replicas must be at least 1");
    if (packet_bits < 1) throw ConfigError("packet_bits must be positive");
    for (auto v : l_p)
      if (v < 1) throw ConfigError("l_p values must be at least 1");
    for (auto v : n_t)
      if (v < 1) throw ConfigError("n_t values must be at least 1");
    if (antenna_pairs().empty()) throw ConfigError("no antenna combination has n_r >= n_t");
  }

  std::vector<std::pair<std::size_t, std::size_t>> antenna_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (auto t : n_t)
      for (auto r : n_r)
        if (r >= t) out.emplace_back(t, r);
    return out;
  }

  PtSettings pt() const {
    PtSettings s;
    s.n_replicas = replicas;
    s.n_sweeps = n_sweeps;
    return s;
  }

  ChannelSpec channel_spec() const {
    return channel == "iid" ? ChannelSpec::iid(master_seed) : ChannelSpec::trace(channel, master_seed);
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_list(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list: " + s);
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end) throw ConfigError("bad value for " + key + ": '" + s + "'");
  return v;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& raw, F&& f) {
  std::vector<T> out;
  for (const auto& item : split_list(raw)) out.push_back(f(item));
  if (out.empty()) throw ConfigError(key + " must not be empty");
  return out;
}

inline std::string single(const std::string& key, const std::string& raw) {
  const auto items = split_list(raw);
  if (items.size() != 1) throw ConfigError(key + " takes a single value");
  return items.front();
}

}  // namespace detail

inline void apply_setting(ExperimentConfig& cfg, const std::string& key_raw, const std::string& value) {
  using namespace detail;
  const std::string key = trim(key_raw);
  auto size_list = [&](const std::string& k) {
    return parse_list<std::size_t>(k, value, [&](const std::string& s) { return parse_number<std::size_t>(k, s); });
  };
  if (key == "n_t") cfg.n_t = size_list(key);
  else if (key == "n_r") cfg.n_r = size_list(key);
  else if (key == "modulation")
    cfg.modulation = parse_list<Modulation>(key, value, [](const std::string& s) {
      try {
        return parse_modulation(s);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    });
  else if (key == "snr_db")
    cfg.snr_db = parse_list<double>(key, value, [&](const std::string& s) {
      if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
      return parse_number<double>(key, s);
    });
  else if (key == "detectors")
    cfg.detectors = parse_list<Strategy>(key, value, [](const std::string& s) { return parse_strategy(s); });
  else if (key == "l_p") cfg.l_p = size_list(key);
  else if (key == "n_fs") cfg.n_fs = parse_number<std::size_t>(key, single(key, value));
  else if (key == "instances_per_point") cfg.instances_per_point = parse_number<std::size_t>(key, single(key, value));
  else if (key == "n_sweeps") cfg.n_sweeps = parse_number<std::size_t>(key, single(key, value));
  else if (key == "replicas") cfg.replicas = parse_number<std::size_t>(key, single(key, value));
  else if (key == "master_seed") cfg.master_seed = parse_number<std::uint64_t>(key, single(key, value));
  else if (key == "output_dir") cfg.output_dir = single(key, value);
  else if (key == "packet_bits") cfg.packet_bits = parse_number<std::size_t>(key, single(key, value));
  else if (key == "channel") cfg.channel = single(key, value);
  else if (key == "ml_budget") cfg.ml_budget = parse_number<double>(key, single(key, value));
  else if (key == "oracle_cache") cfg.oracle_cache = single(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Applies `key = value` lines on top of `cfg`.
inline void parse_config_text(ExperimentConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty() || line.front() == '[') continue;  // blank or table header
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_override(ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + kv + "'");
  apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
}

namespace detail {
inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + f(v[k]);
  return s;
}
}  // namespace detail

/// Canonical text form; parsing it yields an identical config. Without the output
/// location it describes only what determines the metrics.
inline std::string to_config_text(const ExperimentConfig& c, bool with_output_dir = true) {
  using detail::join;
  auto num = [](auto v) { return std::to_string(v); };
  std::ostringstream o;
  o << "n_t = " << join(c.n_t, num) << "\n";
  o << "n_r = " << join(c.n_r, num) << "\n";
  o << "modulation = " << join(c.modulation, [](Modulation m) { return std::string(to_string(m)); }) << "\n";
  o << "snr_db = " << join(c.snr_db, detail::fmt_double) << "\n";
  o << "detectors = " << join(c.detectors, [](Strategy s) { return std::string(to_string(s)); }) << "\n";
  o << "l_p = " << join(c.l_p, num) << "\n";
  o << "n_fs = " << c.n_fs << "\n";
  o << "instances_per_point = " << c.instances_per_point << "\n";
  o << "n_sweeps = " << c.n_sweeps << "\n";
  o << "replicas = " << c.replicas << "\n";
  o << "master_seed = " << c.master_seed << "\n";
  if (with_output_dir) o << "output_dir = " << c.output_dir << "\n";
  o << "packet_bits = " << c.packet_bits << "\n";
  o << "channel = " << c.channel << "\n";
  o << "ml_budget = " << detail::fmt_double(c.ml_budget) << "\n";
  if (!c.oracle_cache.empty()) o << "oracle_cache = " << c.oracle_cache << "\n";
  return o.str();
}

/// Reads a config file, or the config echoed inside a run manifest (JSON).
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  ExperimentConfig cfg;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.contains("config_text") || !j["config_text"].is_string())
      throw ConfigError("manifest '" + path + "' has no config_text");
    std::istringstream cin(j["config_text"].get<std::string>());
    parse_config_text(cfg, cin);
  } else {
    std::istringstream cin(text);
    parse_config_text(cfg, cin);
  }
  return cfg;
}

// ---------------------------------------------------------------------------

struct GridPoint {
  std::size_t n_t = 0, n_r = 0;
  Modulation modulation = Modulation::QPSK;
  double snr_db = 0;
};

/// Instance points in canonical (sorted) grid order.
inline std::vector<GridPoint> grid_points(const ExperimentConfig& cfg) {
  std::vector<GridPoint> out;
  auto pairs = cfg.antenna_pairs();
  std::sort(pairs.begin(), pairs.end());
  auto mods = cfg.modulation;
  std::sort(mods.begin(), mods.end());
  mods.erase(std::unique(mods.begin(), mods.end()), mods.end());
  auto snrs = cfg.snr_db;
  std::sort(snrs.begin(), snrs.end());
  snrs.erase(std::unique(snrs.begin(), snrs.end()), snrs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  for (auto [t, r] : pairs)
    for (auto m : mods)
      for (auto s : snrs) out.push_back({t, r, m, s});
  return out;
}

inline std::uint64_t instance_seed(std::uint64_t master_seed, const GridPoint& p, std::size_t index) {
  std::uint64_t snr_bits = 0;
  std::memcpy(&snr_bits, &p.snr_db, sizeof snr_bits);
  return hash_key({master_seed, p.n_t, p.n_r, static_cast<std::uint64_t>(p.modulation), snr_bits, index});
}

/// Content digest of an instance's channel and received vector.
inline std::uint64_t instance_digest(const DetectionInstance& inst) {
  std::uint64_t h = EqualizerCache::digest(inst.H, EqualizerCache::Kind::ZF, inst.sigma2);
  std::uint64_t bits = 0;
  const double* p = reinterpret_cast<const double*>(inst.y.data());
  for (Eigen::Index k = 0; k < 2 * inst.y.size(); ++k) {
    std::memcpy(&bits, p + k, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// One detector column of the sweep: a strategy at one parallelism level.
struct DetectorSlot {
  Strategy strategy;
  std::size_t l_p;
};

/// Detector slots for a grid point. Baselines without parallelism run once and are
/// reported at every l_p of the grid (`reported` lists the l_p values).
struct DetectorRun {
  DetectorSlot slot;
  std::vector<std::size_t> reported;
};

inline std::vector<DetectorRun> detector_runs(const ExperimentConfig& cfg, const Constellation& c) {
  auto lps = cfg.l_p;
  std::sort(lps.begin(), lps.end());
  lps.erase(std::unique(lps.begin(), lps.end()), lps.end());
  auto strategies = cfg.detectors;
  std::sort(strategies.begin(), strategies.end());
  strategies.erase(std::unique(strategies.begin(), strategies.end()), strategies.end());
  std::vector<DetectorRun> out;
  for (Strategy s : strategies) {
    if (s == Strategy::IoTResQ) {
      const std::size_t lp = ipow(c.size(), cfg.n_fs);
      out.push_back({{s, lp}, {lp}});
    } else if (!uses_parallelism(s)) {
      out.push_back({{s, 1}, lps});
    } else {
      for (auto lp : lps) out.push_back({{s, lp}, {lp}});
    }
  }
  return out;
}

inline DetectorConfig detector_config(const ExperimentConfig& cfg, const DetectorSlot& slot, const Constellation& c) {
  if (slot.strategy == Strategy::IoTResQ) {
    auto d = DetectorConfig::iotresq(cfg.n_fs, slot.l_p, c, cfg.pt(), cfg.master_seed);
    d.ml_budget = cfg.ml_budget;
    return d;
  }
  auto d = DetectorConfig::make(slot.strategy, slot.l_p, cfg.pt(), cfg.master_seed);
  d.ml_budget = cfg.ml_budget;
  return d;
}

/// Aggregated metrics of one (grid point, detector, l_p) row.
struct BerRecord {
  GridPoint point;
  Strategy detector = Strategy::MmseOnly;
  std::size_t l_p = 1;
  std::size_t instances = 0;
  std::uint64_t bits_tested = 0;
  std::uint64_t bit_errors = 0;
  std::uint64_t packets_ok = 0;
  std::uint64_t packets_total = 0;
  /// Instances whose reference objective was exact ML (the rest use the best known).
  std::uint64_t ml_reference = 0;
  std::uint64_t ml_hits = 0;
  double mean_energy = 0;
  double mean_energy_gap = 0;
  std::string instance_digest;
  std::string status = "ok";
  std::string error;
  /// Wall time; kept out of the metric files.
  double solve_us_total = 0;

  double ber() const { return bits_tested ? static_cast<double>(bit_errors) / static_cast<double>(bits_tested) : 0.0; }
  double packet_rate() const {
    return packets_total ? static_cast<double>(packets_ok) / static_cast<double>(packets_total)
                         : std::numeric_limits<double>::quiet_NaN();
  }
  double ml_hit_rate() const {
    return instances ? static_cast<double>(ml_hits) / static_cast<double>(instances) : 0.0;
  }
};

inline const std::vector<std::string>& results_csv_columns() {
  static const std::vector<std::string> cols{
      "n_t",         "n_r",          "modulation",    "snr_db",      "detector",      "l_p",
      "instances",   "bits_tested",  "bit_errors",    "ber",         "packets_ok",    "packets_total",
      "packet_rate", "ml_reference", "ml_hits",       "ml_hit_rate", "mean_energy",   "mean_energy_gap",
      "status",      "instance_digest"};
  return cols;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline void write_results_csv(std::ostream& o, const std::vector<BerRecord>& rows) {
  const auto& cols = results_csv_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) o << (k ? "," : "") << cols[k];
  o << "\n";
  using detail::fmt_double;
  for (const auto& r : rows) {
    o << r.point.n_t << ',' << r.point.n_r << ',' << to_string(r.point.modulation) << ',' << fmt_double(r.point.snr_db)
      << ',' << to_string(r.detector) << ',' << r.l_p << ',' << r.instances << ',' << r.bits_tested << ','
      << r.bit_errors << ',' << fmt_double(r.ber()) << ',' << r.packets_ok << ',' << r.packets_total << ','
      << fmt_double(r.packet_rate()) << ',' << r.ml_reference << ',' << r.ml_hits << ',' << fmt_double(r.ml_hit_rate())
      << ',' << fmt_double(r.mean_energy) << ',' << fmt_double(r.mean_energy_gap) << ',' << csv_escape(r.status)
      << ',' << r.instance_digest << "\n";
  }
}

namespace detail {
inline nlohmann::ordered_json json_number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}
}  // namespace detail

inline nlohmann::ordered_json record_to_json(const BerRecord& r) {
  using detail::json_number;
  nlohmann::ordered_json j;
  j["key"] = {{"n_t", r.point.n_t},
              {"n_r", r.point.n_r},
              {"modulation", to_string(r.point.modulation)},
              {"snr_db", json_number(r.point.snr_db)},
              {"detector", to_string(r.detector)},
              {"l_p", r.l_p}};
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  j["instance_digest"] = r.instance_digest;
  j["metrics"] = {{"instances", r.instances},       {"bits_tested", r.bits_tested},
                  {"bit_errors", r.bit_errors},     {"ber", json_number(r.ber())},
                  {"packets_ok", r.packets_ok},     {"packets_total", r.packets_total},
                  {"packet_rate", json_number(r.packet_rate())},
                  {"ml_reference", r.ml_reference}, {"ml_hits", r.ml_hits},
                  {"ml_hit_rate", json_number(r.ml_hit_rate())},
                  {"mean_energy", json_number(r.mean_energy)},
                  {"mean_energy_gap", json_number(r.mean_energy_gap)}};
  return j;
}

inline BerRecord record_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  BerRecord r;
  const auto& k = j.at("key");
  r.point.n_t = k.at("n_t").get<std::size_t>();
  r.point.n_r = k.at("n_r").get<std::size_t>();
  r.point.modulation = parse_modulation(k.at("modulation").get<std::string>());
  r.point.snr_db = k.at("snr_db").is_null() ? std::numeric_limits<double>::infinity() : k.at("snr_db").get<double>();
  r.detector = parse_strategy(k.at("detector").get<std::string>());
  r.l_p = k.at("l_p").get<std::size_t>();
  r.status = j.at("status").get<std::string>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  r.instance_digest = j.value("instance_digest", std::string{});
  const auto& m = j.at("metrics");
  r.instances = m.at("instances").get<std::size_t>();
  r.bits_tested = m.at("bits_tested").get<std::uint64_t>();
  r.bit_errors = m.at("bit_errors").get<std::uint64_t>();
  r.packets_ok = m.at("packets_ok").get<std::uint64_t>();
  r.packets_total = m.at("packets_total").get<std::uint64_t>();
  r.ml_reference = m.at("ml_reference").get<std::uint64_t>();
  r.ml_hits = m.at("ml_hits").get<std::uint64_t>();
  r.mean_energy = num(m.at("mean_energy"));
  r.mean_energy_gap = num(m.at("mean_energy_gap"));
  return r;
}

// ---------------------------------------------------------------------------
// Worker pool

inline std::size_t worker_count() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    std::size_t n = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc{} || p != s.data() + s.size() || n < 1)
      throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(k) for k in [0, n) on `workers` threads. The first exception is rethrown
/// after all threads stop.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto body = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  }
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Oracle cache

using OracleCache = std::map<std::uint64_t, double>;

inline OracleCache load_oracle_cache(const std::string& path) {
  OracleCache cache;
  std::ifstream in(path);
  if (!in) return cache;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("oracle cache '" + path + "' is not valid JSON: " + e.what());
  }
  for (const auto& e : j.at("entries")) {
    if (e.at("status").get<std::string>() != "ok") continue;
    cache[std::stoull(e.at("digest").get<std::string>(), nullptr, 16)] = e.at("ml_objective").get<double>();
  }
  return cache;
}

inline std::string oracle_cache_path(const ExperimentConfig& cfg) {
  return cfg.oracle_cache.empty() ? (std::filesystem::path(cfg.output_dir) / "oracle.json").string() : cfg.oracle_cache;
}

// ---------------------------------------------------------------------------
// Sweep execution

struct ExperimentOutcome {
  std::vector<BerRecord> rows;
  std::size_t failed_rows = 0;
  double wall_s = 0;
  std::size_t workers = 1;
  std::string results_csv, results_json, manifest_json;

  bool partial_failure() const { return failed_rows > 0; }
};

namespace detail {

struct InstanceOutcome {
  bool generated = false;
  std::string gen_error;
  std::uint64_t digest = 0;
  std::size_t bits_per_user = 0;
  std::optional<double> ml_obj;
  /// Per detector run.
  std::vector<std::optional<DetectionResult>> results;
  std::vector<std::string> errors;
  /// Per detector run, per user: bit error flags.
  std::vector<std::vector<Bits>> user_errors;
};

inline nlohmann::ordered_json versions_json() {
  return {{"xresq", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                       "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__},
          {"cplusplus", static_cast<long>(__cplusplus)}};
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw ConfigError("failed writing '" + p.string() + "'");
}

inline void ensure_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
}

}  // namespace detail

/// Runs every detector on identical instances for each grid point and writes
/// results.csv, results.json and manifest.json to the output directory.
///
/// Results are ordered by grid point, then detector, then l_p; metric files are
/// independent of the worker count. Detector failures are recorded per row.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, std::optional<std::size_t> workers = std::nullopt) {
  cfg.validate();
  detail::ensure_output_dir(cfg.output_dir);
  const auto t_start = detail::Clock::now();
  ExperimentOutcome outcome;
  outcome.workers = workers ? *workers : worker_count();

  const OracleCache oracle = load_oracle_cache(oracle_cache_path(cfg));
  const ChannelSpec chan = cfg.channel_spec();
  const auto points = grid_points(cfg);

  nlohmann::ordered_json timing = nlohmann::ordered_json::array();
  for (const auto& p : points) {
    const Constellation c(p.modulation);
    const auto runs = detector_runs(cfg, c);
    std::vector<std::optional<DetectorConfig>> dcfg(runs.size());
    std::vector<std::string> cfg_errors(runs.size());
    for (std::size_t d = 0; d < runs.size(); ++d) {
      try {
        dcfg[d] = detector_config(cfg, runs[d].slot, c);
        dcfg[d]->validate_for(c);
      } catch (const Error& e) {
        cfg_errors[d] = e.what();
      }
    }
    const bool ml_feasible = std::pow(static_cast<double>(c.size()), static_cast<double>(p.n_t)) <= cfg.ml_budget;

    std::vector<detail::InstanceOutcome> per(cfg.instances_per_point);
    parallel_for(per.size(), outcome.workers, [&](std::size_t idx) {
      auto& out = per[idx];
      out.results.resize(runs.size());
      out.errors.resize(runs.size());
      out.user_errors.resize(runs.size());
      DetectionInstance inst;
      try {
        inst = generate_instance(chan, p.n_t, p.n_r, c, p.snr_db, instance_seed(cfg.master_seed, p, idx));
        out.generated = true;
      } catch (const Error& e) {
        out.gen_error = e.what();
        return;
      }
      out.digest = instance_digest(inst);
      out.bits_per_user = static_cast<std::size_t>(c.bits_per_symbol());
      if (auto it = oracle.find(out.digest); it != oracle.end()) {
        out.ml_obj = it->second;
      } else if (ml_feasible) {
        try {
          out.ml_obj = brute_force_ml(inst, cfg.ml_budget).obj;
        } catch (const Error&) {
        }
      }
      for (std::size_t d = 0; d < runs.size(); ++d) {
        if (!dcfg[d]) continue;
        try {
          DetectionResult r = detect(inst, *dcfg[d]);
          std::vector<Bits> ue(p.n_t, Bits(out.bits_per_user, 0));
          for (std::size_t b = 0; b < r.bits.size(); ++b) ue[b / out.bits_per_user][b % out.bits_per_user] = r.bits[b] != inst.bits_true[b];
          out.user_errors[d] = std::move(ue);
          out.results[d] = std::move(r);
        } catch (const Error& e) {
          out.errors[d] = e.what();
        }
      }
    });

    std::uint64_t point_digest = hash_key({instance_seed(cfg.master_seed, p, 0)});
    std::size_t gen_failures = 0;
    std::string gen_error;
    for (const auto& o : per) {
      point_digest = mix64(point_digest ^ o.digest);
      if (!o.generated) {
        ++gen_failures;
        if (gen_error.empty()) gen_error = o.gen_error;
      }
    }

    nlohmann::ordered_json point_timing = nlohmann::ordered_json::array();
    for (std::size_t d = 0; d < runs.size(); ++d) {
      BerRecord rec;
      rec.point = p;
      rec.detector = runs[d].slot.strategy;
      rec.instance_digest = hex64(point_digest);
      std::string err = !cfg_errors[d].empty() ? cfg_errors[d] : gen_error;
      std::vector<std::vector<std::uint8_t>> streams(p.n_t);
      double e_sum = 0, gap_sum = 0;
      for (const auto& o : per) {
        if (!o.generated) continue;
        if (!o.results[d]) {
          if (err.empty()) err = o.errors[d];
          continue;
        }
        const auto& r = *o.results[d];
        ++rec.instances;
        rec.solve_us_total += r.timing.solve_us + r.timing.preprocess_us;
        for (std::size_t u = 0; u < p.n_t; ++u) {
          const auto& ue = o.user_errors[d][u];
          for (auto bit : ue) rec.bit_errors += bit;
          rec.bits_tested += ue.size();
          streams[u].insert(streams[u].end(), ue.begin(), ue.end());
        }
        // Reference objective: exact ML when available, else the best over the detectors at this instance.
        double ref = std::numeric_limits<double>::infinity();
        if (o.ml_obj) {
          ref = *o.ml_obj;
          ++rec.ml_reference;
        } else {
          for (const auto& other : o.results)
            if (other) ref = std::min(ref, other->energy);
        }
        rec.ml_hits += std::abs(r.energy - ref) <= kMlEnergyTolerance;
        e_sum += r.energy;
        gap_sum += r.energy - ref;
      }
      if (rec.instances) {
        rec.mean_energy = e_sum / static_cast<double>(rec.instances);
        rec.mean_energy_gap = gap_sum / static_cast<double>(rec.instances);
        const PacketCount pc = count_packets(streams, cfg.packet_bits);
        rec.packets_ok = pc.ok;
        rec.packets_total = pc.total;
      } else {
        rec.mean_energy = rec.mean_energy_gap = std::numeric_limits<double>::quiet_NaN();
      }
      if (!err.empty()) {
        rec.status = rec.instances ? "partial" : "error";
        rec.error = err;
      }
      for (auto lp : runs[d].reported) {
        BerRecord row = rec;
        row.l_p = lp;
        if (row.status != "ok") ++outcome.failed_rows;
        outcome.rows.push_back(row);
        point_timing.push_back({{"detector", to_string(row.detector)},
                                {"l_p", lp},
                                {"solve_us_total", rec.solve_us_total},
                                {"solve_us_per_instance",
                                 rec.instances ? rec.solve_us_total / static_cast<double>(rec.instances) : 0.0}});
      }
    }
    timing.push_back({{"n_t", p.n_t},
                      {"n_r", p.n_r},
                      {"modulation", to_string(p.modulation)},
                      {"snr_db", detail::json_number(p.snr_db)},
                      {"detectors", point_timing}});
  }

  std::ostringstream csv;
  write_results_csv(csv, outcome.rows);
  outcome.results_csv = csv.str();

  nlohmann::ordered_json results;
  results["schema"] = 1;
  results["config_text"] = to_config_text(cfg, false);
  results["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : outcome.rows) results["rows"].push_back(record_to_json(r));
  outcome.results_json = results.dump(2) + "\n";

  outcome.wall_s = std::chrono::duration<double>(detail::Clock::now() - t_start).count();
  nlohmann::ordered_json manifest;
  manifest["schema"] = 1;
  manifest["config_text"] = to_config_text(cfg);
  manifest["versions"] = detail::versions_json();
  manifest["workers"] = outcome.workers;
  manifest["oracle_entries_used"] = oracle.size();
  manifest["failed_rows"] = outcome.failed_rows;
  manifest["wall_time_s"] = outcome.wall_s;
  manifest["timing"] = timing;
  outcome.manifest_json = manifest.dump(2) + "\n";

  const std::filesystem::path dir(cfg.output_dir);
  detail::write_file(dir / "results.csv", outcome.results_csv);
  detail::write_file(dir / "results.json", outcome.results_json);
  detail::write_file(dir / "manifest.json", outcome.manifest_json);
  return outcome;
}

struct OracleOutcome {
  std::size_t solved = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::string path;
};

/// Exhaustive ML pass over every grid instance; writes the objectives run_experiment reuses.
inline OracleOutcome run_oracle(const ExperimentConfig& cfg, std::optional<std::size_t> workers = std::nullopt) {
  cfg.validate();
  detail::ensure_output_dir(cfg.output_dir);
  const std::size_t nw = workers ? *workers : worker_count();
  const ChannelSpec chan = cfg.channel_spec();
  OracleOutcome outcome;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& p : grid_points(cfg)) {
    const Constellation c(p.modulation);
    struct Entry {
      std::string status, error;
      std::uint64_t digest = 0;
      double obj = 0;
    };
    std::vector<Entry> per(cfg.instances_per_point);
    parallel_for(per.size(), nw, [&](std::size_t idx) {
      auto& e = per[idx];
      try {
        const auto inst = generate_instance(chan, p.n_t, p.n_r, c, p.snr_db, instance_seed(cfg.master_seed, p, idx));
        e.digest = instance_digest(inst);
        e.obj = brute_force_ml(inst, cfg.ml_budget).obj;
        e.status = "ok";
      } catch (const BudgetExceeded& ex) {
        e.status = "skipped";
        e.error = ex.what();
      } catch (const Error& ex) {
        e.status = "error";
        e.error = ex.what();
      }
    });
    for (std::size_t idx = 0; idx < per.size(); ++idx) {
      const auto& e = per[idx];
      nlohmann::ordered_json j{{"n_t", p.n_t},
                               {"n_r", p.n_r},
                               {"modulation", to_string(p.modulation)},
                               {"snr_db", detail::json_number(p.snr_db)},
                               {"index", idx},
                               {"digest", hex64(e.digest)},
                               {"status", e.status}};
      if (e.status == "ok") {
        j["ml_objective"] = e.obj;
        ++outcome.solved;
      } else {
        j["error"] = e.error;
        ++(e.status == "skipped" ? outcome.skipped : outcome.failed);
      }
      entries.push_back(std::move(j));
    }
  }
  nlohmann::ordered_json doc{{"schema", 1}, {"config_text", to_config_text(cfg)}, {"entries", entries}};
  outcome.path = oracle_cache_path(cfg);
  detail::write_file(outcome.path, doc.dump(2) + "\n");
  return outcome;
}

// ---------------------------------------------------------------------------
// Curve data

enum class CurveAxis { Snr, Lp, Time };

inline CurveAxis parse_axis(std::string_view s) {
  if (s == "snr") return CurveAxis::Snr;
  if (s == "lp" || s == "l_p") return CurveAxis::Lp;
  if (s == "time") return CurveAxis::Time;
  throw ConfigError("unknown axis '" + std::string(s) + "' (expected snr, lp or time)");
}

/// Pseudo anneal time of a parallel run: l_p tasks of n_sweeps sweeps, with 50
/// sweeps counted as one X-ResQ anneal (2.2 us).
inline double pseudo_time_us(std::size_t l_p, std::size_t n_sweeps) {
  return static_cast<double>(l_p) * static_cast<double>(n_sweeps) / 50.0 * xresq_schedule().anneal_time_us();
}

/// Long-format CSV, one row per (scenario, detector, axis value), sorted by the
/// non-axis keys then the axis value. `n_sweeps` feeds the time axis mapping;
/// `wall_us` (optional, keyed like the rows) adds measured solve time per instance.
inline std::string emit_curve_data(const std::vector<BerRecord>& rows, CurveAxis axis, std::size_t n_sweeps = 50,
                                   const std::map<std::tuple<std::size_t, std::size_t, std::string, double, std::string, std::size_t>, double>* wall_us = nullptr) {
  if (rows.empty()) throw ConfigError("no results to emit");
  using detail::fmt_double;
  std::vector<const BerRecord*> order;
  for (const auto& r : rows) order.push_back(&r);
  auto key = [axis](const BerRecord* r) {
    const double av = axis == CurveAxis::Snr ? r->point.snr_db : static_cast<double>(r->l_p);
    const double other = axis == CurveAxis::Snr ? static_cast<double>(r->l_p) : r->point.snr_db;
    return std::make_tuple(std::string(to_string(r->detector)), r->point.n_t, r->point.n_r,
                           std::string(to_string(r->point.modulation)), other, av);
  };
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key(a) < key(b); });

  std::ostringstream o;
  o << "detector,n_t,n_r,modulation,";
  switch (axis) {
    case CurveAxis::Snr: o << "l_p,snr_db"; break;
    case CurveAxis::Lp: o << "snr_db,l_p"; break;
    case CurveAxis::Time: o << "snr_db,l_p,pseudo_time_us,wall_us_per_instance"; break;
  }
  o << ",ber,packet_rate,ml_hit_rate,mean_energy_gap,bits_tested,status\n";
  for (const BerRecord* r : order) {
    o << to_string(r->detector) << ',' << r->point.n_t << ',' << r->point.n_r << ',' << to_string(r->point.modulation)
      << ',';
    switch (axis) {
      case CurveAxis::Snr: o << r->l_p << ',' << fmt_double(r->point.snr_db); break;
      case CurveAxis::Lp: o << fmt_double(r->point.snr_db) << ',' << r->l_p; break;
      case CurveAxis::Time: {
        const double pt = uses_parallelism(r->detector) ? pseudo_time_us(r->l_p, n_sweeps) : 0.0;
        o << fmt_double(r->point.snr_db) << ',' << r->l_p << ',' << fmt_double(pt) << ',';
        if (wall_us) {
          auto it = wall_us->find({r->point.n_t, r->point.n_r, std::string(to_string(r->point.modulation)),
                                   r->point.snr_db, std::string(to_string(r->detector)), r->l_p});
          if (it != wall_us->end()) o << fmt_double(it->second);
        }
        break;
      }
    }
    o << ',' << fmt_double(r->ber()) << ',' << fmt_double(r->packet_rate()) << ',' << fmt_double(r->ml_hit_rate())
      << ',' << fmt_double(r->mean_energy_gap) << ',' << r->bits_tested << ',' << r->status << "\n";
  }
  return o.str();
}

struct LoadedResults {
  std::vector<BerRecord> rows;
  ExperimentConfig config;
};

inline LoadedResults load_results_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open results '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("results '" + path + "' is not valid JSON: " + e.what());
  }
  LoadedResults out;
  if (j.contains("config_text")) {
    std::istringstream cin(j["config_text"].get<std::string>());
    parse_config_text(out.config, cin);
  }
  if (!j.contains("rows") || !j["rows"].is_array()) throw ConfigError("results '" + path + "' has no rows");
  try {
    for (const auto& r : j["rows"]) out.rows.push_back(record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed row in '" + path + "': " + e.what());
  }
  return out;
}

/// Mean solve time per instance from a manifest's timing block.
inline std::map<std::tuple<std::size_t, std::size_t, std::string, double, std::string, std::size_t>, double>
load_wall_times(const std::string& manifest_path) {
  std::map<std::tuple<std::size_t, std::size_t, std::string, double, std::string, std::size_t>, double> out;
  std::ifstream in(manifest_path);
  if (!in) return out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception&) {
    return out;
  }
  if (!j.contains("timing")) return out;
  for (const auto& p : j["timing"]) {
    const double snr = p["snr_db"].is_null() ? std::numeric_limits<double>::infinity() : p["snr_db"].get<double>();
    for (const auto& d : p["detectors"])
      out[{p["n_t"].get<std::size_t>(), p["n_r"].get<std::size_t>(), p["modulation"].get<std::string>(), snr,
           d["detector"].get<std::string>(), d["l_p"].get<std::size_t>()}] = d["solve_us_per_instance"].get<double>();
  }
  return out;
}

}  // namespace xresq

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xresq/constellation.hpp"
#include "xresq/rng.hpp"
#include "xresq/types.hpp"

namespace xresq {

/// Convert a spin (+-1) to its bit.
inline std::uint8_t spin_to_bit(std::int8_t s) noexcept { return s > 0 ? 1 : 0; }

/// Bits of a symbol vector: per user, the symbol's spins in layout order.
inline Bits bits_from_symbols(const CVector& v, const Constellation& c) {
  const auto m = static_cast<std::size_t>(c.bits_per_symbol());
  Bits bits(static_cast<std::size_t>(v.size()) * m);
  std::vector<std::int8_t> s(m);
  for (Eigen::Index u = 0; u < v.size(); ++u) {
    c.spins_from_symbol(v[u], s);
    for (std::size_t b = 0; b < m; ++b) bits[static_cast<std::size_t>(u) * m + b] = spin_to_bit(s[b]);
  }
  return bits;
}

/// Per-receive-antenna noise variance for an SNR in dB: n_t * E_s / 10^(snr/10).
inline double noise_variance(std::size_t n_t, const Constellation& c, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return static_cast<double>(n_t) * c.mean_energy() / std::pow(10.0, snr_db / 10.0);
}

/// Linear SNR implied by a noise variance (infinite when noise-free).
inline double snr_linear(std::size_t n_t, const Constellation& c, double sigma2) {
  if (sigma2 <= 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(n_t) * c.mean_energy() / sigma2;
}

struct DetectionInstance {
  std::size_t n_t = 0;
  std::size_t n_r = 0;
  Constellation constellation{Modulation::QPSK};
  CMatrix H;
  CVector y;
  CVector v_true;
  Bits bits_true;
  double snr_db = 0;
  /// Complex noise variance per receive antenna.
  double sigma2 = 0;
  /// Noise realization (kept for exact reconstruction and noise diagnostics).
  CVector noise;
  /// Stable identity used to key per-task random streams.
  std::uint64_t id = 0;

  double snr_lin() const { return snr_linear(n_t, constellation, sigma2); }
  double residual(const CVector& v) const { return (y - H * v).squaredNorm(); }
};

/// Build an instance from explicit parts (y = H v + n).
inline DetectionInstance make_instance(CMatrix H, CVector v_true, CVector noise, const Constellation& c,
                                       double snr_db, double sigma2, std::uint64_t id = 0) {
  if (H.rows() < H.cols() || H.cols() < 1) throw DimensionError("require n_r >= n_t >= 1");
  if (v_true.size() != H.cols() || noise.size() != H.rows()) throw DimensionError("instance vector sizes");
  DetectionInstance inst;
  inst.n_t = static_cast<std::size_t>(H.cols());
  inst.n_r = static_cast<std::size_t>(H.rows());
  inst.constellation = c;
  inst.y = H * v_true + noise;
  inst.H = std::move(H);
  inst.v_true = std::move(v_true);
  inst.noise = std::move(noise);
  inst.bits_true = bits_from_symbols(inst.v_true, c);
  inst.snr_db = snr_db;
  inst.sigma2 = sigma2;
  inst.id = id;
  return inst;
}

/// Channel-trace text format:
///   header `n_r n_t count`, then per record n_r*n_t entries `re,im` in
///   row-major order, whitespace separated (records may span lines).
inline std::vector<CMatrix> parse_channel_trace(std::istream& in) {
  std::vector<CMatrix> out;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<std::string, std::size_t>> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) tokens.emplace_back(tok, line_no);
  }
  if (tokens.empty()) return out;
  if (tokens.size() < 3) throw ParseError("truncated header", tokens.back().second, 0);

  auto parse_count = [&](std::size_t k) -> std::size_t {
    const auto& [t, ln] = tokens[k];
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(t, &pos);
    } catch (const std::exception&) {
      throw ParseError("bad header field '" + t + "'", ln, 0);
    }
    if (pos != t.size() || v < 0) throw ParseError("bad header field '" + t + "'", ln, 0);
    return static_cast<std::size_t>(v);
  };
  const std::size_t n_r = parse_count(0), n_t = parse_count(1), count = parse_count(2);
  if (n_r == 0 || n_t == 0) throw ParseError("zero dimension in header", tokens[0].second, 0);

  const std::size_t per = n_r * n_t;
  std::size_t k = 3;
  for (std::size_t rec = 1; rec <= count; ++rec) {
    CMatrix m(static_cast<Eigen::Index>(n_r), static_cast<Eigen::Index>(n_t));
    for (std::size_t e = 0; e < per; ++e, ++k) {
      if (k >= tokens.size()) {
        const std::size_t ln = tokens.back().second;
        throw ParseError("record " + std::to_string(rec) + " has " + std::to_string(e) + " of " +
                             std::to_string(per) + " entries",
                         ln, rec);
      }
      const auto& [t, ln] = tokens[k];
      const auto comma = t.find(',');
      if (comma == std::string::npos) throw ParseError("entry '" + t + "' is not re,im", ln, rec);
      try {
        std::size_t p1 = 0, p2 = 0;
        const std::string re_s = t.substr(0, comma), im_s = t.substr(comma + 1);
        const double re = std::stod(re_s, &p1);
        const double im = std::stod(im_s, &p2);
        if (p1 != re_s.size() || p2 != im_s.size()) throw std::invalid_argument("trailing");
        m(static_cast<Eigen::Index>(e / n_t), static_cast<Eigen::Index>(e % n_t)) = {re, im};
      } catch (const std::invalid_argument&) {
        throw ParseError("entry '" + t + "' is not re,im", ln, rec);
      } catch (const std::out_of_range&) {
        throw ParseError("entry '" + t + "' out of range", ln, rec);
      }
    }
    out.push_back(std::move(m));
  }
  if (k != tokens.size()) throw ParseError("trailing data after last record", tokens[k].second, count + 1);
  return out;
}

inline std::vector<CMatrix> load_channel_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open channel trace '" + path + "'", 0, 0);
  return parse_channel_trace(in);
}

struct ChannelSpec {
  enum class Kind { IidGaussian, TraceFile };
  Kind kind = Kind::IidGaussian;
  std::string path;
  std::uint64_t rng_seed = 0;

  static ChannelSpec iid(std::uint64_t seed) { return {Kind::IidGaussian, {}, seed}; }
  static ChannelSpec trace(std::string p, std::uint64_t seed = 0) { return {Kind::TraceFile, std::move(p), seed}; }
};

/// Trace files are parsed once per path and shared; entries are immutable.
class TraceCache {
 public:
  std::shared_ptr<const std::vector<CMatrix>> get(const std::string& path) {
    std::lock_guard lock(mu_);
    for (const auto& [p, t] : entries_)
      if (p == path) return t;
    auto t = std::make_shared<const std::vector<CMatrix>>(load_channel_trace(path));
    entries_.emplace_back(path, t);
    return t;
  }

 private:
  std::mutex mu_;
  std::vector<std::pair<std::string, std::shared_ptr<const std::vector<CMatrix>>>> entries_;
};

inline TraceCache& default_trace_cache() {
  static TraceCache cache;
  return cache;
}

namespace detail {
inline cplx complex_gaussian(std::mt19937_64& gen, double variance) {
  std::normal_distribution<double> nd(0.0, std::sqrt(variance / 2.0));
  const double re = nd(gen);
  const double im = nd(gen);
  return {re, im};
}
}  // namespace detail

/// Draw a detection instance. Pure function of its arguments.
/// For TraceFile channels, the channel use is rng_seed modulo the record count.
inline DetectionInstance generate_instance(const ChannelSpec& spec, std::size_t n_t, std::size_t n_r,
                                           const Constellation& c, double snr_db, std::uint64_t rng_seed,
                                           std::optional<double> sigma2_override = std::nullopt) {
  if (n_t < 1 || n_r < n_t) throw DimensionError("require n_r >= n_t >= 1");
  if (std::isnan(snr_db)) throw ConfigError("snr_db must be a number");
  const double sigma2 = sigma2_override ? *sigma2_override : noise_variance(n_t, c, snr_db);
  const std::uint64_t key = hash_key({spec.rng_seed, rng_seed});
  std::mt19937_64 gen(key);

  const auto rows = static_cast<Eigen::Index>(n_r), cols = static_cast<Eigen::Index>(n_t);
  CMatrix H(rows, cols);
  if (spec.kind == ChannelSpec::Kind::IidGaussian) {
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) H(i, j) = detail::complex_gaussian(gen, 1.0);
  } else {
    const auto trace = default_trace_cache().get(spec.path);
    if (trace->empty()) throw ParseError("channel trace '" + spec.path + "' has no records", 0, 0);
    const CMatrix& rec = (*trace)[rng_seed % trace->size()];
    if (rec.rows() != rows || rec.cols() != cols)
      throw DimensionError("trace record is " + std::to_string(rec.rows()) + "x" + std::to_string(rec.cols()) +
                           ", expected " + std::to_string(n_r) + "x" + std::to_string(n_t));
    H = rec;
  }

  CVector v(cols);
  for (Eigen::Index u = 0; u < cols; ++u) {
    std::uniform_int_distribution<std::size_t> pick(0, c.size() - 1);
    v[u] = c.point(pick(gen));
  }
  CVector n = CVector::Zero(rows);
  if (sigma2 > 0)
    for (Eigen::Index i = 0; i < rows; ++i) n[i] = detail::complex_gaussian(gen, sigma2);

  return make_instance(std::move(H), std::move(v), std::move(n), c, snr_db, sigma2, key);
}

}  // namespace xresq

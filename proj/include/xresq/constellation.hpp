#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xresq/types.hpp"

namespace xresq {

enum class Modulation { BPSK, QPSK, QAM16, QAM64 };

inline std::string_view to_string(Modulation m) {
  switch (m) {
    case Modulation::BPSK: return "BPSK";
    case Modulation::QPSK: return "QPSK";
    case Modulation::QAM16: return "QAM16";
    case Modulation::QAM64: return "QAM64";
  }
  return "?";
}

inline Modulation parse_modulation(std::string_view s) {
  if (s == "BPSK") return Modulation::BPSK;
  if (s == "QPSK") return Modulation::QPSK;
  if (s == "QAM16" || s == "16QAM" || s == "16-QAM") return Modulation::QAM16;
  if (s == "QAM64" || s == "64QAM" || s == "64-QAM") return Modulation::QAM64;
  throw ConfigError("unknown modulation '" + std::string(s) + "'");
}

/// Unnormalized odd-integer lattice constellation built from stacked QPSK layers.
///
/// A symbol is v = sum_i w_i q_i with q_i in {+-1 +-j} and layer weights
/// w_i = 2^(n_q - i), so layer 1 is the quadrant decision (16-QAM: v = 2 q_1 + q_2).
/// Per symbol the M spins are laid out [Re q_1 .. Re q_nq, Im q_1 .. Im q_nq];
/// BPSK uses a single real spin. Point index k has bits in spin order, first
/// spin as the most significant bit, bit = 1 iff spin = +1.
class Constellation {
 public:
  explicit Constellation(Modulation m) : modulation_(m) {
    switch (m) {
      case Modulation::BPSK: bits_ = 1; layers_ = 0; break;
      case Modulation::QPSK: bits_ = 2; layers_ = 1; break;
      case Modulation::QAM16: bits_ = 4; layers_ = 2; break;
      case Modulation::QAM64: bits_ = 6; layers_ = 3; break;
    }
    const std::size_t n = std::size_t{1} << bits_;
    points_.reserve(n);
    std::vector<std::int8_t> spins(bits_);
    for (std::size_t k = 0; k < n; ++k) {
      for (int b = 0; b < bits_; ++b) spins[b] = ((k >> (bits_ - 1 - b)) & 1U) ? 1 : -1;
      points_.push_back(symbol_from_spins(spins));
    }
  }

  Modulation modulation() const noexcept { return modulation_; }
  std::string_view name() const noexcept { return to_string(modulation_); }
  int bits_per_symbol() const noexcept { return bits_; }
  /// QPSK layer count n_q (0 for BPSK).
  int qpsk_layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<cplx>& points() const noexcept { return points_; }
  const cplx& point(std::size_t k) const { return points_.at(k); }

  /// Weight of 1-based layer i.
  double layer_weight(int i) const noexcept { return static_cast<double>(1 << (layers_ - i)); }

  double mean_energy() const noexcept {
    double e = 0;
    for (const auto& p : points_) e += std::norm(p);
    return e / static_cast<double>(points_.size());
  }

  cplx symbol_from_spins(std::span<const std::int8_t> s) const {
    if (static_cast<int>(s.size()) != bits_) throw DimensionError("symbol spin count mismatch");
    if (layers_ == 0) return {static_cast<double>(s[0]), 0.0};
    double re = 0, im = 0;
    for (int i = 1; i <= layers_; ++i) {
      re += layer_weight(i) * s[i - 1];
      im += layer_weight(i) * s[layers_ + i - 1];
    }
    return {re, im};
  }

  /// Inverse of symbol_from_spins for exact lattice points.
  void spins_from_symbol(const cplx& v, std::span<std::int8_t> out) const {
    if (static_cast<int>(out.size()) != bits_) throw DimensionError("symbol spin count mismatch");
    if (layers_ == 0) {
      out[0] = v.real() >= 0 ? 1 : -1;
      return;
    }
    double re = v.real(), im = v.imag();
    for (int i = 1; i <= layers_; ++i) {
      const double w = layer_weight(i);
      const std::int8_t sr = re >= 0 ? 1 : -1;
      const std::int8_t si = im >= 0 ? 1 : -1;
      out[i - 1] = sr;
      out[layers_ + i - 1] = si;
      re -= w * sr;
      im -= w * si;
    }
  }

  /// QPSK layer q_i (1-based) of an exact lattice point.
  cplx layer_of(const cplx& v, int i) const {
    std::array<std::int8_t, 6> buf{};
    std::span<std::int8_t> s(buf.data(), static_cast<std::size_t>(bits_));
    spins_from_symbol(v, s);
    return {static_cast<double>(s[i - 1]), static_cast<double>(s[layers_ + i - 1])};
  }

  /// Nearest point index; equidistant ties go to the smaller index.
  std::size_t nearest_index(const cplx& z) const noexcept {
    std::size_t best = 0;
    double best_d = std::norm(z - points_[0]);
    for (std::size_t k = 1; k < points_.size(); ++k) {
      const double d = std::norm(z - points_[k]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }

  cplx slice(const cplx& z) const noexcept { return points_[nearest_index(z)]; }

 private:
  Modulation modulation_;
  int bits_ = 0;
  int layers_ = 0;
  std::vector<cplx> points_;
};

}  // namespace xresq

#pragma once

#include <atomic>
#include <cmath>
#include <cstring>
#include <memory>
#include <shared_mutex>
#include <unordered_map>

#include "xresq/instance.hpp"
#include "xresq/rng.hpp"
#include "xresq/types.hpp"

namespace xresq {

struct LinearSolution {
  CVector v_soft;
  CVector v_hard;
  Bits bits;
};

inline void require_full_column_rank(const CMatrix& H) {
  Eigen::FullPivLU<CMatrix> lu(H);
  if (lu.rank() < H.cols()) throw SingularMatrixError("channel matrix is not full column rank");
}

/// H^dagger = (H^H H)^{-1} H^H.
inline CMatrix zf_equalizer(const CMatrix& H) {
  require_full_column_rank(H);
  const CMatrix gram = H.adjoint() * H;
  return gram.ldlt().solve(H.adjoint());
}

/// G = snr (I + snr H^H H)^{-1} H^H, evaluated as (I/snr + H^H H)^{-1} H^H so the
/// noise-free limit is exactly the ZF equalizer.
inline CMatrix mmse_equalizer(const CMatrix& H, double snr_lin) {
  if (!(snr_lin > 0)) throw Error("MMSE needs a positive SNR");
  if (std::isinf(snr_lin)) return zf_equalizer(H);
  CMatrix gram = H.adjoint() * H;
  gram.diagonal().array() += 1.0 / snr_lin;
  return gram.ldlt().solve(H.adjoint());
}

/// Equalizers keyed by channel content and SNR. Concurrent readers share a lock;
/// writers race benignly (values are idempotent, last write wins).
class EqualizerCache {
 public:
  enum class Kind : std::uint64_t { ZF = 1, MMSE = 2 };

  std::shared_ptr<const CMatrix> get(const CMatrix& H, Kind kind, double snr_lin = 0) {
    const std::uint64_t key = digest(H, kind, snr_lin);
    {
      std::shared_lock lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) {
        ++hits_;
        return it->second;
      }
    }
    auto G = std::make_shared<const CMatrix>(kind == Kind::ZF ? zf_equalizer(H) : mmse_equalizer(H, snr_lin));
    std::unique_lock lock(mu_);
    entries_[key] = G;
    return G;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }
  std::size_t hits() const noexcept { return hits_.load(); }

  static std::uint64_t digest(const CMatrix& H, Kind kind, double snr_lin) {
    std::uint64_t h = hash_key({static_cast<std::uint64_t>(H.rows()), static_cast<std::uint64_t>(H.cols()),
                                static_cast<std::uint64_t>(kind)});
    std::uint64_t bits = 0;
    std::memcpy(&bits, &snr_lin, sizeof bits);
    h = mix64(h ^ bits);
    const double* p = reinterpret_cast<const double*>(H.data());
    for (Eigen::Index k = 0; k < 2 * H.size(); ++k) {
      std::memcpy(&bits, p + k, sizeof bits);
      h = mix64(h ^ bits);
    }
    return h;
  }

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const CMatrix>> entries_;
  std::atomic<std::size_t> hits_{0};
};

/// Per-user nearest-point slicing of an equalized estimate.
inline LinearSolution slice_solution(CVector v_soft, const Constellation& c) {
  LinearSolution sol;
  sol.v_hard.resize(v_soft.size());
  for (Eigen::Index u = 0; u < v_soft.size(); ++u) sol.v_hard[u] = c.slice(v_soft[u]);
  sol.bits = bits_from_symbols(sol.v_hard, c);
  sol.v_soft = std::move(v_soft);
  return sol;
}

inline LinearSolution detect_zf(const DetectionInstance& inst, EqualizerCache* cache = nullptr) {
  if (cache) return slice_solution(*cache->get(inst.H, EqualizerCache::Kind::ZF) * inst.y, inst.constellation);
  return slice_solution(zf_equalizer(inst.H) * inst.y, inst.constellation);
}

inline LinearSolution detect_mmse(const DetectionInstance& inst, EqualizerCache* cache = nullptr) {
  const double snr = inst.snr_lin();
  if (cache) return slice_solution(*cache->get(inst.H, EqualizerCache::Kind::MMSE, snr) * inst.y, inst.constellation);
  return slice_solution(mmse_equalizer(inst.H, snr) * inst.y, inst.constellation);
}

}  // namespace xresq

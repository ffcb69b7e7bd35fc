#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "xresq/instance.hpp"
#include "xresq/linear.hpp"
#include "xresq/types.hpp"

namespace xresq {

inline constexpr double kDefaultEnumerationBudget = 16777216.0;  // 2^24

struct MlSolution {
  CVector v_ml;
  double obj = 0;
};

/// Exhaustive ML search. Candidates are visited in lexicographic order of per-user
/// point indices (user 0 most significant); the first strict minimum wins.
inline MlSolution brute_force_ml(const DetectionInstance& inst, double budget = kDefaultEnumerationBudget) {
  const auto& c = inst.constellation;
  const std::size_t n_t = inst.n_t;
  const double count = std::pow(static_cast<double>(c.size()), static_cast<double>(n_t));
  if (count > budget)
    throw BudgetExceeded("brute-force ML needs " + std::to_string(count) + " candidates, budget is " +
                         std::to_string(budget));

  const std::size_t q = c.size();
  // residual[d] = y - sum_{u<d} H_u v_u
  std::vector<CVector> residual(n_t + 1, inst.y);
  std::vector<std::size_t> idx(n_t, 0);
  for (std::size_t d = 0; d < n_t; ++d)
    residual[d + 1] = residual[d] - inst.H.col(static_cast<Eigen::Index>(d)) * c.point(0);

  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_idx(idx);
  for (;;) {
    const double obj = residual[n_t].squaredNorm();
    if (obj < best) {
      best = obj;
      best_idx = idx;
    }
    // odometer increment, last user fastest
    std::size_t d = n_t;
    while (d > 0) {
      --d;
      if (++idx[d] < q) break;
      idx[d] = 0;
      if (d == 0) {
        d = n_t;  // sentinel: wrapped completely
        break;
      }
    }
    if (d == n_t) break;
    for (std::size_t k = d; k < n_t; ++k)
      residual[k + 1] = residual[k] - inst.H.col(static_cast<Eigen::Index>(k)) * c.point(idx[k]);
  }

  MlSolution out;
  out.v_ml.resize(static_cast<Eigen::Index>(n_t));
  for (std::size_t u = 0; u < n_t; ++u) out.v_ml[static_cast<Eigen::Index>(u)] = c.point(best_idx[u]);
  out.obj = inst.residual(out.v_ml);
  return out;
}

/// Fixed-complexity sphere decoder plan: the first n_fs users of `order` are fully
/// expanded, the rest are detected greedily in order.
struct FsdPlan {
  std::size_t n_fs = 0;
  std::vector<std::size_t> order;

  void validate(std::size_t n_t) const {
    if (n_fs > n_t) throw ConfigError("n_fs exceeds user count");
    if (order.size() != n_t) throw ConfigError("FSD order must list every user");
    std::vector<bool> seen(n_t, false);
    for (auto u : order) {
      if (u >= n_t || seen[u]) throw ConfigError("FSD order is not a permutation");
      seen[u] = true;
    }
  }
  std::size_t branch_count(const Constellation& c) const {
    std::size_t n = 1;
    for (std::size_t k = 0; k < n_fs; ++k) n *= c.size();
    return n;
  }
};

namespace detail {
inline CMatrix columns(const CMatrix& H, const std::vector<std::size_t>& cols) {
  CMatrix out(H.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = H.col(static_cast<Eigen::Index>(cols[k]));
  return out;
}

/// (H_S^H H_S + reg I)^{-1}; reports whether the unregularized Gram was rank deficient.
inline CMatrix gram_inverse(const CMatrix& Hs, double reg, bool& rank_deficient) {
  CMatrix gram = Hs.adjoint() * Hs;
  Eigen::FullPivLU<CMatrix> lu(Hs);
  rank_deficient = lu.rank() < Hs.cols();
  if (rank_deficient || reg > 0) gram.diagonal().array() += reg;
  return gram.ldlt().solve(CMatrix::Identity(gram.rows(), gram.cols()));
}

inline double fallback_regularizer(const DetectionInstance& inst) {
  const double snr = inst.snr_lin();
  return std::isfinite(snr) ? 1.0 / snr : 1e-9 * std::max(1.0, inst.H.squaredNorm());
}
}  // namespace detail

/// Iterative norm ordering: full-expansion levels take the remaining user with the
/// largest post-ZF noise amplification (diagonal of the Gram inverse), greedy levels
/// the smallest. Ties go to the lower user index.
inline FsdPlan make_fsd_plan(const DetectionInstance& inst, std::size_t n_fs) {
  if (n_fs > inst.n_t) throw ConfigError("n_fs exceeds user count");
  FsdPlan plan;
  plan.n_fs = n_fs;
  std::vector<std::size_t> remaining(inst.n_t);
  std::iota(remaining.begin(), remaining.end(), 0);
  while (!remaining.empty()) {
    bool deficient = false;
    CMatrix inv = detail::gram_inverse(detail::columns(inst.H, remaining), 0.0, deficient);
    if (deficient) inv = detail::gram_inverse(detail::columns(inst.H, remaining), detail::fallback_regularizer(inst), deficient);
    const bool expand = plan.order.size() < n_fs;
    std::size_t pick = 0;
    for (std::size_t k = 1; k < remaining.size(); ++k) {
      const double dk = inv(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)).real();
      const double dp = inv(static_cast<Eigen::Index>(pick), static_cast<Eigen::Index>(pick)).real();
      if (expand ? dk > dp : dk < dp) pick = k;
    }
    plan.order.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return plan;
}

struct FsdCandidate {
  CVector v;
  double obj = 0;
  std::size_t branch = 0;
};

struct FsdResult {
  /// One candidate per full-expansion branch, in branch order.
  std::vector<FsdCandidate> candidates;
  std::size_t best = 0;
  /// Some greedy level hit a rank-deficient channel and used an MMSE-regularized step.
  bool mmse_fallback = false;

  const FsdCandidate& best_candidate() const { return candidates.at(best); }
};

/// Expanded-user symbols of a branch: point index digits in plan order, first most significant.
inline std::vector<std::size_t> fsd_branch_digits(std::size_t branch, std::size_t n_fs, std::size_t q) {
  std::vector<std::size_t> digits(n_fs);
  for (std::size_t k = n_fs; k-- > 0;) {
    digits[k] = branch % q;
    branch /= q;
  }
  return digits;
}

inline FsdResult fsd_detect(const DetectionInstance& inst, const FsdPlan& plan) {
  plan.validate(inst.n_t);
  const auto& c = inst.constellation;
  FsdResult out;

  // Nulling rows for each greedy level: row of (H_S^H H_S)^{-1} H_S^H for the user
  // detected at that level, S = users not yet detected.
  std::vector<Eigen::RowVectorXcd> nulling;
  for (std::size_t lvl = plan.n_fs; lvl < inst.n_t; ++lvl) {
    std::vector<std::size_t> S(plan.order.begin() + static_cast<std::ptrdiff_t>(lvl), plan.order.end());
    const CMatrix Hs = detail::columns(inst.H, S);
    bool deficient = false;
    CMatrix inv = detail::gram_inverse(Hs, 0.0, deficient);
    if (deficient) {
      out.mmse_fallback = true;
      inv = detail::gram_inverse(Hs, detail::fallback_regularizer(inst), deficient);
    }
    nulling.push_back(inv.row(0) * Hs.adjoint());
  }

  const std::size_t branches = plan.branch_count(c);
  out.candidates.reserve(branches);
  for (std::size_t b = 0; b < branches; ++b) {
    CVector v = CVector::Zero(static_cast<Eigen::Index>(inst.n_t));
    const auto digits = fsd_branch_digits(b, plan.n_fs, c.size());
    CVector r = inst.y;
    for (std::size_t k = 0; k < plan.n_fs; ++k) {
      const auto u = static_cast<Eigen::Index>(plan.order[k]);
      v[u] = c.point(digits[k]);
      r -= inst.H.col(u) * v[u];
    }
    for (std::size_t lvl = plan.n_fs; lvl < inst.n_t; ++lvl) {
      const auto u = static_cast<Eigen::Index>(plan.order[lvl]);
      const cplx z = (nulling[lvl - plan.n_fs] * r)(0);
      v[u] = c.slice(z);
      r -= inst.H.col(u) * v[u];
    }
    const double obj = inst.residual(v);
    out.candidates.push_back({std::move(v), obj, b});
  }
  for (std::size_t b = 1; b < out.candidates.size(); ++b)
    if (out.candidates[b].obj < out.candidates[out.best].obj) out.best = b;
  return out;
}

}  // namespace xresq

#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gsr/encoding.hpp"
#include "gsr/error.hpp"
#include "gsr/parallel.hpp"
#include "gsr/qspace.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/tv.hpp"
#include "gsr/volume.hpp"

namespace gsr {

struct SolverConfig {
  double lambda = 0.02;
  double lambda_tv = 0.005;
  double rho1 = 0.01;
  double rho2 = 0.01;
  int n_iter = 8;
  double epsilon = 1e-4;
  int bp_inner_iters = 50;
  int tv_inner_iters = 20;
  double tikhonov_mu = 0.2;
  // Use S^(t) instead of S^(t+1) in the gamma update. Not part of the JSON config.
  bool gamma_uses_previous_s = false;

  static SolverConfig simulation_defaults() { return {}; }

  static SolverConfig in_vivo_defaults() {
    SolverConfig cfg;
    cfg.lambda = 0.06;
    cfg.lambda_tv = 1e-5;
    cfg.rho1 = 3.0;
    cfg.rho2 = 3.0;
    return cfg;
  }

  void validate() const {
    if (lambda < 0 || lambda_tv < 0 || rho1 < 0 || rho2 < 0 || tikhonov_mu < 0)
      throw ConfigError("solver config: weights must be non-negative");
    if (n_iter < 1) throw ConfigError("solver config: n_iter must be at least 1");
    if (!(epsilon > 0)) throw ConfigError("solver config: epsilon must be positive");
    if (bp_inner_iters < 0 || tv_inner_iters < 0) throw ConfigError("solver config: inner iteration counts must be non-negative");
    if (lambda > 0 && rho1 == 0) throw ConfigError("solver config: rho1 must be positive when lambda > 0");
    if (lambda_tv > 0 && rho2 == 0) throw ConfigError("solver config: rho2 must be positive when lambda_tv > 0");
  }

  bool operator==(const SolverConfig&) const = default;
};

struct ObjectiveTerms {
  double data = 0.0;
  double l1 = 0.0;
  double tv = 0.0;
};

struct ReconReport {
  int iterations_run = 0;
  std::vector<double> rel_change_history;
  std::vector<ObjectiveTerms> objective_history;
  double wall_time = 0.0;  // seconds
};

// Precomputed view of one undersampled acquisition: the thin-slice grid, the
// back-projected data sum_k B_k^T y_k per direction, and one normal-equation
// Gram matrix per distinct set of RF profiles K_j.
struct ReconProblem {
  Dims thin_dims{0, 0, 0};
  VoxelSize thin_voxel_size{1.0, 1.0, 1.0};
  int n_q = 0;
  EncodingBasis basis;
  SamplingScheme scheme;
  const std::vector<DwiVolumeSet>* y = nullptr;
  DwiVolumeSet backprojected;
  std::vector<int> group_of_q;
  std::vector<Eigen::MatrixXd> group_gram;
  std::vector<std::vector<int>> group_profiles;
  std::vector<std::uint8_t> active;  // thin voxels whose slab has any nonzero data

  int af() const { return basis.af; }
  int n_slabs() const { return thin_dims[2] / basis.af; }
};

inline ReconProblem make_problem(const std::vector<DwiVolumeSet>& y, const EncodingBasis& basis,
                                 const SamplingScheme& scheme) {
  validate_basis(basis);
  if (static_cast<int>(y.size()) != scheme.n_rf) throw InvalidArgument("reconstruct: one acquired set per RF profile required");
  if (scheme.n_rf > basis.n_profiles()) throw InvalidArgument("reconstruct: scheme uses more RF profiles than the basis has");
  const int n_q = scheme.max_q_index() + 1;
  validate_scheme(scheme, n_q);
  ReconProblem p;
  p.basis = basis;
  p.scheme = scheme;
  p.y = &y;
  p.n_q = n_q;
  const Dims thick = y[0].dims;
  for (int k = 0; k < scheme.n_rf; ++k) {
    if (y[k].dims != thick) throw InvalidArgument("reconstruct: acquired sets have different grids");
    if (y[k].n_q != static_cast<int>(scheme.assignments[k].size()))
      throw InvalidArgument("reconstruct: acquired set " + std::to_string(k) + " does not match its scheme mask");
    if (!y[k].all_finite()) throw InvalidArgument("reconstruct: acquired data contains non-finite values");
  }
  const int af = basis.af;
  p.thin_dims = {thick[0], thick[1], thick[2] * af};
  p.thin_voxel_size = {y[0].voxel_size[0], y[0].voxel_size[1], y[0].voxel_size[2] / af};

  // Group directions by their RF profile set.
  p.group_of_q.assign(n_q, -1);
  for (int j = 0; j < n_q; ++j) {
    const auto ks = scheme.profiles_for(j);
    int g = 0;
    while (g < static_cast<int>(p.group_profiles.size()) && p.group_profiles[g] != ks) ++g;
    if (g == static_cast<int>(p.group_profiles.size())) {
      p.group_profiles.push_back(ks);
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(af, af);
      for (int k : ks) gram += basis.matrix.row(k).transpose() * basis.matrix.row(k);
      p.group_gram.push_back(gram);
    }
    p.group_of_q[j] = g;
  }

  p.backprojected = DwiVolumeSet(p.thin_dims, n_q, p.thin_voxel_size);
  for (int k = 0; k < scheme.n_rf; ++k) {
    const auto& mask = scheme.assignments[k];
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const int j = mask[i];
      for (int b = 0; b < thick[2]; ++b)
        for (int a = 0; a < af; ++a) {
          const double w = basis.matrix(k, a);
          for (int yy = 0; yy < thick[1]; ++yy)
            for (int x = 0; x < thick[0]; ++x)
              p.backprojected.at(x, yy, b * af + a, j) += w * y[k].at(x, yy, b, static_cast<int>(i));
        }
    }
  }

  p.active.assign(p.backprojected.voxel_count(), 0);
  for (int k = 0; k < scheme.n_rf; ++k)
    for (int i = 0; i < y[k].n_q; ++i)
      for (int b = 0; b < thick[2]; ++b)
        for (int yy = 0; yy < thick[1]; ++yy)
          for (int x = 0; x < thick[0]; ++x)
            if (y[k].at(x, yy, b, i) != 0.0)
              for (int a = 0; a < af; ++a) p.active[p.backprojected.voxel_index(x, yy, b * af + a)] = 1;
  return p;
}

namespace detail {

// Inverse (pseudo-inverse when singular) of gram + shift * I.
inline Eigen::MatrixXd shifted_inverse(const Eigen::MatrixXd& gram, double shift) {
  Eigen::MatrixXd m = gram;
  m.diagonal().array() += shift;
  return m.completeOrthogonalDecomposition().pseudoInverse();
}

// out(x, y, slab, j) = P_{group(j)} * rhs(x, y, slab, j) along the af thin
// slices of every slab.
inline void solve_slabs(const ReconProblem& p, const std::vector<Eigen::MatrixXd>& inverses, const DwiVolumeSet& rhs,
                        DwiVolumeSet& out, unsigned threads) {
  const int af = p.af();
  const Dims d = p.thin_dims;
  parallel_for(static_cast<std::size_t>(p.n_q), threads, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    const Eigen::MatrixXd& inv = inverses[p.group_of_q[j]];
    Eigen::VectorXd r(af), s(af);
    for (int b = 0; b < d[2] / af; ++b)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          for (int a = 0; a < af; ++a) r[a] = rhs.at(x, y, b * af + a, j);
          s.noalias() = inv * r;
          for (int a = 0; a < af; ++a) out.at(x, y, b * af + a, j) = s[a];
        }
  });
}

inline void zero_inactive(const ReconProblem& p, DwiVolumeSet& s) {
  auto m = s.matrix();
  for (Eigen::Index n = 0; n < m.rows(); ++n)
    if (!p.active[n]) m.row(n).setZero();
}

inline void require_finite(const DwiVolumeSet& v, const char* stage, int iter) {
  if (!v.all_finite())
    throw NumericalFailure(std::string("reconstruct: non-finite values after ") + stage + " at iteration " +
                           std::to_string(iter));
}

}  // namespace detail

// Conventional gSlider-style estimate: per (x, y, slab, j) solves
// (sum_{k in K_j} B_k^T B_k + mu I) s = sum_{k in K_j} B_k^T y_k.
inline DwiVolumeSet tikhonov_init(const ReconProblem& p, double mu, unsigned threads = 1) {
  if (!(mu > 0.0)) throw InvalidArgument("tikhonov_init: mu must be positive");
  std::vector<Eigen::MatrixXd> inverses;
  for (const auto& g : p.group_gram) inverses.push_back(detail::shifted_inverse(g, mu));
  DwiVolumeSet s(p.thin_dims, p.n_q, p.thin_voxel_size);
  detail::solve_slabs(p, inverses, p.backprojected, s, threads);
  return s;
}

inline DwiVolumeSet tikhonov_init(const std::vector<DwiVolumeSet>& y, const EncodingBasis& basis,
                                  const SamplingScheme& scheme, double mu, unsigned threads = 1) {
  return tikhonov_init(make_problem(y, basis, scheme), mu, threads);
}

// ---------------------------------------------------------------------------
// Sparse coding

inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
  if (t < 0.0) throw InvalidArgument("soft_threshold: threshold must be non-negative");
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v[i]) - t;
    out[i] = mag > 0.0 ? std::copysign(mag, v[i]) : 0.0;
  }
  return out;
}

// Largest eigenvalue of A^T A by power iteration on the smaller Gram matrix.
inline double spectral_norm_sq(const Eigen::MatrixXd& a) {
  const Eigen::MatrixXd gram = a.rows() <= a.cols() ? Eigen::MatrixXd(a * a.transpose()) : Eigen::MatrixXd(a.transpose() * a);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(gram.rows()).normalized();
  double eig = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Eigen::VectorXd w = gram * v;
    const double next = v.dot(w);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    if (std::abs(next - eig) <= 1e-15 * std::abs(next)) {
      eig = next;
      break;
    }
    eig = next;
  }
  return eig;
}

inline constexpr double kBpRelativeTolerance = 1e-6;
inline constexpr Eigen::Index kBpBlock = 32;

struct BpStats {
  int iterations = 0;
  std::vector<double> objective;  // per accepted/rejected inner step, single-column runs only
};

namespace detail {

// Accelerated proximal gradient with monotone restart for every column of
// rhs: min_c rho1/2 ||A c - b||^2 + lambda ||c||_1. coeffs holds the warm
// start on entry. A step that would raise the objective is rejected and the
// momentum restarted, so the objective never increases. A column stops when
// an accepted step lowers its objective by less than 1e-6 relative.
inline int bp_block(const Eigen::MatrixXd& a, const Eigen::MatrixXd& at, const Eigen::Ref<const Eigen::MatrixXd>& rhs,
                    Eigen::Ref<Eigen::MatrixXd> coeffs, double lambda, double rho1, double sigma_sq, int iters,
                    std::vector<double>* history = nullptr) {
  const Eigen::Index cols = rhs.cols();
  if (cols == 0) return 0;
  std::vector<std::uint8_t> running(cols, 1);
  Eigen::Index n_running = cols;

  // Columns for which c = 0 satisfies the optimality condition.
  const Eigen::MatrixXd atb = at * rhs;
  for (Eigen::Index j = 0; j < cols; ++j)
    if (lambda >= rho1 * atb.col(j).lpNorm<Eigen::Infinity>()) {
      coeffs.col(j).setZero();
      running[j] = 0;
      --n_running;
    }
  if (n_running == 0 || iters == 0 || rho1 == 0.0 || sigma_sq == 0.0) return 0;

  const double step = 1.0 / sigma_sq;  // rho1 / L with L = rho1 * sigma_max^2
  const double thresh = lambda / (rho1 * sigma_sq);
  auto objective = [&](const auto& ac, const auto& c, Eigen::Index j) {
    return 0.5 * rho1 * (ac - rhs.col(j)).squaredNorm() + lambda * c.template lpNorm<1>();
  };

  Eigen::MatrixXd x = coeffs;
  Eigen::MatrixXd ax = a * x;
  Eigen::MatrixXd x_prev = x, ax_prev = ax;
  Eigen::MatrixXd yv = x, ay = ax;
  Eigen::MatrixXd z(x.rows(), cols), az(a.rows(), cols), grad(x.rows(), cols);
  std::vector<double> fx(cols), t(cols, 1.0);
  for (Eigen::Index j = 0; j < cols; ++j) fx[j] = objective(ax.col(j), x.col(j), j);
  if (history) history->push_back(fx[0]);

  int it = 0;
  for (; it < iters && n_running > 0; ++it) {
    grad.noalias() = at * (ay - rhs);
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!running[j]) continue;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double v = yv(i, j) - step * grad(i, j);
        const double mag = std::abs(v) - thresh;
        z(i, j) = mag > 0.0 ? std::copysign(mag, v) : 0.0;
      }
    }
    az.noalias() = a * z;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!running[j]) continue;
      const double fz = objective(az.col(j), z.col(j), j);
      if (fz <= fx[j]) {
        const double f_old = fx[j];
        x_prev.col(j) = x.col(j);
        ax_prev.col(j) = ax.col(j);
        x.col(j) = z.col(j);
        ax.col(j) = az.col(j);
        fx[j] = fz;
        const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t[j] * t[j])) / 2.0;
        const double beta = (t[j] - 1.0) / t_next;
        t[j] = t_next;
        yv.col(j) = x.col(j) + beta * (x.col(j) - x_prev.col(j));
        ay.col(j) = ax.col(j) + beta * (ax.col(j) - ax_prev.col(j));
        if (f_old == 0.0 || f_old - fz <= kBpRelativeTolerance * f_old) {
          running[j] = 0;
          --n_running;
        }
      } else {
        t[j] = 1.0;
        yv.col(j) = x.col(j);
        ay.col(j) = ax.col(j);
      }
    }
    if (history) history->push_back(fx[0]);
  }
  coeffs = x;
  return it;
}

}  // namespace detail

// Single-vector basis pursuit, used directly by tests and tools.
inline Eigen::VectorXd basis_pursuit(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double lambda, double rho1,
                                     int iters, const Eigen::VectorXd& warm_start, BpStats* stats = nullptr) {
  if (b.size() != a.rows() || warm_start.size() != a.cols()) throw InvalidArgument("basis_pursuit: dimension mismatch");
  Eigen::MatrixXd c = warm_start;
  const Eigen::MatrixXd at = a.transpose();
  std::vector<double> history;
  const int used = detail::bp_block(a, at, b, c, lambda, rho1, spectral_norm_sq(a), iters, stats ? &history : nullptr);
  if (stats) {
    stats->iterations = used;
    stats->objective = std::move(history);
  }
  return c.col(0);
}

// ---------------------------------------------------------------------------
// ADMM state and stage updates

struct AdmmState {
  DwiVolumeSet s;
  Eigen::MatrixXd c;  // M x N, one column of ridgelet coefficients per voxel
  DwiVolumeSet lambda_dual;
  DwiVolumeSet z;
  DwiVolumeSet gamma_dual;
  int iter = 0;
  double last_rel_change = 0.0;
};

// Cached dictionary quantities shared by all bp_update calls.
struct DictionaryCache {
  const RidgeletDictionary* dict = nullptr;
  Eigen::MatrixXd at;
  double sigma_sq = 0.0;

  explicit DictionaryCache(const RidgeletDictionary& d)
      : dict(&d), at(d.matrix.transpose()), sigma_sq(spectral_norm_sq(d.matrix)) {}
};

// N x N_q matrix whose row n is A c_n.
inline Eigen::MatrixXd synthesize(const RidgeletDictionary& dict, const Eigen::MatrixXd& c) {
  return (dict.matrix * c).transpose();
}

inline AdmmState init_state(const ReconProblem& p, const RidgeletDictionary& dict, const SolverConfig& cfg,
                            unsigned threads = 1) {
  if (dict.n_q() != p.n_q) throw InvalidArgument("reconstruct: dictionary rows do not match the number of directions");
  AdmmState st;
  st.s = tikhonov_init(p, cfg.tikhonov_mu, threads);
  detail::zero_inactive(p, st.s);
  constexpr double kInitRidge = 1e-3;
  st.c = ridge_fit_operator(dict.matrix, kInitRidge) * st.s.matrix().transpose();
  for (Eigen::Index n = 0; n < st.c.cols(); ++n)
    if (!p.active[n]) st.c.col(n).setZero();
  st.lambda_dual = DwiVolumeSet(p.thin_dims, p.n_q, p.thin_voxel_size);
  st.z = DwiVolumeSet(p.thin_dims, p.n_q, p.thin_voxel_size);
  st.gamma_dual = DwiVolumeSet(p.thin_dims, p.n_q, p.thin_voxel_size);
  st.z.values = st.s.values;
  return st;
}

// S-update: per (x, y, slab, j) solves
// (G_j + (rho1 + rho2) I) s = sum_k B_k^T y_k + rho1 (A c - Lambda) + rho2 (Z - gamma).
// The rho2 term is omitted entirely when rho2 = 0.
inline void lls_update(AdmmState& st, const ReconProblem& p, const RidgeletDictionary& dict, const SolverConfig& cfg,
                       unsigned threads = 1) {
  std::vector<Eigen::MatrixXd> inverses;
  for (const auto& g : p.group_gram) inverses.push_back(detail::shifted_inverse(g, cfg.rho1 + cfg.rho2));
  DwiVolumeSet rhs = p.backprojected;
  {
    const Eigen::MatrixXd ac = synthesize(dict, st.c);
    auto r = rhs.matrix();
    r += cfg.rho1 * (ac - st.lambda_dual.matrix());
    if (cfg.rho2 != 0.0) r += cfg.rho2 * (st.z.matrix() - st.gamma_dual.matrix());
  }
  detail::solve_slabs(p, inverses, rhs, st.s, threads);
  detail::zero_inactive(p, st.s);
}

// c-update: per active voxel, min_c rho1/2 ||(s + Lambda) - A c||^2 + lambda ||c||_1,
// warm-started from the current c.
inline void bp_update(AdmmState& st, const ReconProblem& p, const DictionaryCache& cache, const SolverConfig& cfg,
                      unsigned threads = 1) {
  const RidgeletDictionary& dict = *cache.dict;
  const Eigen::Index n_vox = st.c.cols();
  // Active voxels are packed into fixed blocks so block contents never
  // depend on the thread count.
  std::vector<Eigen::Index> active;
  active.reserve(n_vox);
  for (Eigen::Index n = 0; n < n_vox; ++n)
    if (p.active[n]) active.push_back(n);
  const auto n_blocks = static_cast<std::size_t>((static_cast<Eigen::Index>(active.size()) + kBpBlock - 1) / kBpBlock);
  const auto s = st.s.matrix();
  const auto lam = st.lambda_dual.matrix();
  parallel_for(n_blocks, threads, [&](std::size_t blk) {
    const Eigen::Index begin = static_cast<Eigen::Index>(blk) * kBpBlock;
    const Eigen::Index end = std::min<Eigen::Index>(begin + kBpBlock, static_cast<Eigen::Index>(active.size()));
    Eigen::MatrixXd rhs(dict.n_q(), end - begin), coeffs(dict.n_atoms(), end - begin);
    for (Eigen::Index i = begin; i < end; ++i) {
      rhs.col(i - begin) = (s.row(active[i]) + lam.row(active[i])).transpose();
      coeffs.col(i - begin) = st.c.col(active[i]);
    }
    detail::bp_block(dict.matrix, cache.at, rhs, coeffs, cfg.lambda, cfg.rho1, cache.sigma_sq, cfg.bp_inner_iters);
    for (Eigen::Index i = begin; i < end; ++i) st.c.col(active[i]) = coeffs.col(i - begin);
  });
}

// Lambda <- Lambda + (S - A c).
inline void lambda_dual_update(AdmmState& st, const RidgeletDictionary& dict) {
  st.lambda_dual.matrix() += st.s.matrix() - synthesize(dict, st.c);
}

// Z <- prox_{(lambda_tv / rho2) TV}(S + gamma), each q-volume separately.
inline void tv_update(AdmmState& st, const SolverConfig& cfg, unsigned threads = 1) {
  if (cfg.lambda_tv > 0.0 && !(cfg.rho2 > 0.0)) throw InvalidArgument("tv_update: rho2 must be positive when lambda_tv > 0");
  const double weight = cfg.lambda_tv == 0.0 ? 0.0 : cfg.lambda_tv / cfg.rho2;
  const Dims d = st.s.dims;
  parallel_for(static_cast<std::size_t>(st.s.n_q), threads, [&](std::size_t qq) {
    const int q = static_cast<int>(qq);
    const Eigen::VectorXd f = st.s.volume(q) + st.gamma_dual.volume(q);
    if (weight == 0.0) {
      st.z.volume(q) = f;
      return;
    }
    const auto out = tv_prox(std::span<const double>(f.data(), static_cast<std::size_t>(f.size())), d, weight,
                             cfg.tv_inner_iters);
    st.z.volume(q) = Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
  });
}

// gamma <- gamma + (S - Z), with S the current estimate.
inline void gamma_dual_update(AdmmState& st) { st.gamma_dual.matrix() += st.s.matrix() - st.z.matrix(); }

inline ObjectiveTerms objective_terms(const AdmmState& st, const ReconProblem& p, const SolverConfig& cfg) {
  ObjectiveTerms terms;
  for (int k = 0; k < p.scheme.n_rf; ++k) {
    const DwiVolumeSet pred = downsample(select_q(st.s, p.scheme.assignments[k]), p.basis, k);
    terms.data += 0.5 * (pred.matrix() - (*p.y)[k].matrix()).squaredNorm();
  }
  terms.l1 = cfg.lambda * st.c.lpNorm<1>();
  if (cfg.lambda_tv > 0.0)
    for (int q = 0; q < st.s.n_q; ++q) {
      const auto v = st.s.volume(q);
      terms.tv += cfg.lambda_tv * total_variation(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), st.s.dims);
    }
  return terms;
}

inline double relative_change(const DwiVolumeSet& now, const DwiVolumeSet& before) {
  const double denom = before.matrix().norm();
  const double diff = (now.matrix() - before.matrix()).norm();
  if (denom == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / denom;
}

struct ReconResult {
  DwiVolumeSet s;
  ReconReport report;
};

// gSlider-SR: Tikhonov start, then S -> c -> Lambda -> Z -> gamma per outer
// iteration until the relative S change drops below epsilon or n_iter
// iterations have run.
inline ReconResult reconstruct(const std::vector<DwiVolumeSet>& y, const EncodingBasis& basis,
                               const SamplingScheme& scheme, const RidgeletDictionary& dict, const SolverConfig& cfg,
                               unsigned threads = 1) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ReconProblem p = make_problem(y, basis, scheme);
  const DictionaryCache cache(dict);
  AdmmState st = init_state(p, dict, cfg, threads);
  ReconReport report;
  for (int t = 0; t < cfg.n_iter; ++t) {
    const DwiVolumeSet s_prev = st.s;
    lls_update(st, p, dict, cfg, threads);
    detail::require_finite(st.s, "lls_update", t);
    bp_update(st, p, cache, cfg, threads);
    if (!st.c.allFinite()) throw NumericalFailure("reconstruct: non-finite values after bp_update at iteration " + std::to_string(t));
    lambda_dual_update(st, dict);
    detail::require_finite(st.lambda_dual, "lambda_dual_update", t);
    tv_update(st, cfg, threads);
    detail::require_finite(st.z, "tv_update", t);
    if (cfg.gamma_uses_previous_s)
      st.gamma_dual.matrix() += s_prev.matrix() - st.z.matrix();
    else
      gamma_dual_update(st);
    detail::require_finite(st.gamma_dual, "gamma_dual_update", t);

    st.iter = t + 1;
    st.last_rel_change = relative_change(st.s, s_prev);
    report.rel_change_history.push_back(st.last_rel_change);
    report.objective_history.push_back(objective_terms(st, p, cfg));
    report.iterations_run = st.iter;
    if (st.last_rel_change < cfg.epsilon) break;
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(st.s), std::move(report)};
}

// The sparsity-only three-step iteration (LLS, basis pursuit, multiplier
// update) without any TV machinery. With lambda_tv = rho2 = 0 the full
// reconstruct() must agree with it bit for bit.
inline ReconResult reconstruct_sparse_only(const std::vector<DwiVolumeSet>& y, const EncodingBasis& basis,
                                           const SamplingScheme& scheme, const RidgeletDictionary& dict,
                                           const SolverConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ReconProblem p = make_problem(y, basis, scheme);
  const DictionaryCache cache(dict);
  AdmmState st = init_state(p, dict, cfg, threads);
  std::vector<Eigen::MatrixXd> inverses;
  for (const auto& g : p.group_gram) inverses.push_back(detail::shifted_inverse(g, cfg.rho1));
  ReconReport report;
  for (int t = 0; t < cfg.n_iter; ++t) {
    const DwiVolumeSet s_prev = st.s;
    DwiVolumeSet rhs = p.backprojected;
    rhs.matrix() += cfg.rho1 * (synthesize(dict, st.c) - st.lambda_dual.matrix());
    detail::solve_slabs(p, inverses, rhs, st.s, threads);
    detail::zero_inactive(p, st.s);
    bp_update(st, p, cache, cfg, threads);
    lambda_dual_update(st, dict);

    st.iter = t + 1;
    st.last_rel_change = relative_change(st.s, s_prev);
    report.rel_change_history.push_back(st.last_rel_change);
    report.objective_history.push_back(objective_terms(st, p, cfg));
    report.iterations_run = st.iter;
    if (st.last_rel_change < cfg.epsilon) break;
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(st.s), std::move(report)};
}

}  // namespace gsr

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gsr/error.hpp"
#include "gsr/qspace.hpp"
#include "gsr/sphere.hpp"

namespace gsr {

struct RidgeletConfig {
  double rho = 0.5;
  int n_max = 16;
  std::vector<int> levels{-1, 0, 1};
  std::vector<int> orientations_per_level{16, 64, 256};
};

// Legendre-domain weight of a ridgelet at resolution level `level` and even
// degree n. With kappa_j(n) = exp(-rho 2^-j n(n+1)), the coarsest level (-1)
// uses kappa_0 and level j >= 0 uses kappa_{j+1} - kappa_j.
inline double ridgelet_level_weight(int level, int n, double rho) {
  auto kappa = [&](int j) { return std::exp(-rho * std::ldexp(1.0, -j) * n * (n + 1.0)); };
  if (level < 0) return kappa(0);
  return kappa(level + 1) - kappa(level);
}

// Over-complete spherical ridgelet frame sampled on a q-space design. Column
// m of `matrix` is atom m evaluated on the design directions and divided by
// column_scales[m], so every column has unit norm.
struct RidgeletDictionary {
  Eigen::MatrixXd matrix;
  std::vector<int> levels;
  std::vector<int> orientations_per_level;
  double rho = 0.5;
  int n_max = 16;
  std::vector<double> column_scales;
  std::vector<Vec3> atom_orientations;
  std::vector<int> atom_levels;

  Eigen::Index n_q() const { return matrix.rows(); }
  Eigen::Index n_atoms() const { return matrix.cols(); }

  // Unnormalized value of atom m at unit direction u.
  double atom_value(Eigen::Index m, const Vec3& u) const {
    const double t = std::clamp(u.dot(atom_orientations[m]), -1.0, 1.0);
    double value = 0.0;
    for (int n = 0; n <= n_max; n += 2) {
      const double w = ridgelet_level_weight(atom_levels[m], n, rho);
      value += (2.0 * n + 1.0) / (4.0 * std::numbers::pi) * funk_radon_weight(n) * w *
               std::legendre(static_cast<unsigned>(n), t);
    }
    return value;
  }

  // The dictionary resampled on other directions, with the same column
  // normalization as `matrix`.
  Eigen::MatrixXd evaluate(const std::vector<Vec3>& dirs) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dirs.size()), n_atoms());
    for (Eigen::Index m = 0; m < n_atoms(); ++m)
      for (std::size_t i = 0; i < dirs.size(); ++i)
        out(static_cast<Eigen::Index>(i), m) = atom_value(m, dirs[i]) / column_scales[m];
    return out;
  }
};

inline RidgeletDictionary build_dictionary(const QSpaceDesign& design, const RidgeletConfig& cfg = {}) {
  if (design.size() == 0) throw InvalidArgument("build_dictionary: empty q-space design");
  if (!(cfg.rho > 0.0)) throw InvalidArgument("build_dictionary: rho must be positive");
  if (cfg.levels.empty()) throw InvalidArgument("build_dictionary: no resolution levels");
  if (cfg.levels.size() != cfg.orientations_per_level.size())
    throw InvalidArgument("build_dictionary: levels and orientation counts differ in length");
  if (cfg.n_max < 0 || cfg.n_max % 2 != 0) throw InvalidArgument("build_dictionary: n_max must be even");
  for (int count : cfg.orientations_per_level)
    if (count < 4) throw InvalidArgument("build_dictionary: need at least 4 orientations per level");

  RidgeletDictionary dict;
  dict.levels = cfg.levels;
  dict.orientations_per_level = cfg.orientations_per_level;
  dict.rho = cfg.rho;
  dict.n_max = cfg.n_max;
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    for (const Vec3& v : detail::hemisphere_spiral(cfg.orientations_per_level[l])) {
      dict.atom_orientations.push_back(v);
      dict.atom_levels.push_back(cfg.levels[l]);
    }
  }
  const auto m_atoms = static_cast<Eigen::Index>(dict.atom_orientations.size());
  dict.matrix.resize(design.size(), m_atoms);
  dict.column_scales.assign(m_atoms, 1.0);
  for (Eigen::Index m = 0; m < m_atoms; ++m) {
    for (int j = 0; j < design.size(); ++j) dict.matrix(j, m) = dict.atom_value(m, design.directions[j]);
    const double norm = dict.matrix.col(m).norm();
    if (!(norm > 0.0)) throw NumericalFailure("build_dictionary: atom " + std::to_string(m) + " vanishes on the design");
    dict.column_scales[m] = norm;
    dict.matrix.col(m) /= norm;
  }
  return dict;
}

// Linear operator s -> argmin ||A c - s||^2 + ridge ||c||^2, as an M x N_q
// matrix. ridge = 0 gives the minimum-norm least-squares solution.
inline Eigen::MatrixXd ridge_fit_operator(const Eigen::MatrixXd& a, double ridge) {
  if (ridge < 0.0) throw InvalidArgument("ridge weight must be non-negative");
  if (ridge == 0.0) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    return cod.pseudoInverse();
  }
  // c = A^T (A A^T + ridge I)^-1 s, the cheaper side when M > N_q.
  Eigen::MatrixXd gram = a * a.transpose();
  gram.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  return ldlt.solve(a).transpose();
}

inline Eigen::VectorXd fit_coefficients_ls(const RidgeletDictionary& dict, const Eigen::VectorXd& signal, double ridge) {
  if (signal.size() != dict.n_q()) throw InvalidArgument("fit_coefficients_ls: signal length does not match dictionary");
  return ridge_fit_operator(dict.matrix, ridge) * signal;
}

// Min-max normalization to [0, 1]; a flat input maps to all zeros.
inline Eigen::VectorXd normalize_min_max(const Eigen::VectorXd& v) {
  const double lo = v.minCoeff(), hi = v.maxCoeff();
  const double range = hi - lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(hi)))) return Eigen::VectorXd::Zero(v.size());
  return (v.array() - lo) / range;
}

inline constexpr int kMinOdfVertices = 100;

// Funk-Radon ODF of a signal sampled on the vertices `sh` was built on:
// least-squares even-SH fit, per-degree weights 2*pi*P_n(0), evaluation back
// on the same vertices, min-max normalization.
inline Eigen::VectorXd odf_from_signal(const Eigen::VectorXd& signal, const SHBasis& sh) {
  if (sh.matrix.rows() < kMinOdfVertices)
    throw InvalidArgument("odf_from_signal: tessellation too coarse (" + std::to_string(sh.matrix.rows()) + " vertices)");
  if (signal.size() != sh.matrix.rows()) throw InvalidArgument("odf_from_signal: signal length does not match tessellation");
  const Eigen::VectorXd coeffs = sh.matrix.colPivHouseholderQr().solve(signal);
  Eigen::VectorXd weighted(coeffs.size());
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) weighted[i] = funk_radon_weight(sh.column_degree[i]) * coeffs[i];
  return normalize_min_max(sh.matrix * weighted);
}

// The whole signal -> ODF chain for one q-space design folded into a single
// linear map: ridge ridgelet fit on the design, resampling of the ridgelet
// expansion on the tessellation, SH Funk-Radon transform. Only the final
// min-max normalization is applied per call.
class OdfEstimator {
 public:
  static constexpr int kDefaultShDegree = 8;
  static constexpr double kDefaultRidge = 1e-3;

  OdfEstimator(const RidgeletDictionary& dict, Tessellation tess, int sh_degree = kDefaultShDegree,
               double ridge = kDefaultRidge)
      : tess_(std::move(tess)), sh_(make_sh_basis(tess_.vertices, sh_degree)) {
    if (tess_.size() < kMinOdfVertices) throw InvalidArgument("OdfEstimator: tessellation too coarse");
    const Eigen::MatrixXd fit = ridge_fit_operator(dict.matrix, ridge);
    const Eigen::MatrixXd dense = dict.evaluate(tess_.vertices);
    Eigen::MatrixXd sh_pinv = sh_.matrix.completeOrthogonalDecomposition().pseudoInverse();
    for (Eigen::Index i = 0; i < sh_pinv.rows(); ++i) sh_pinv.row(i) *= funk_radon_weight(sh_.column_degree[i]);
    signal_to_odf_ = sh_.matrix * (sh_pinv * (dense * fit));
  }

  const Tessellation& tessellation() const { return tess_; }
  const SHBasis& sh_basis() const { return sh_; }
  const Eigen::MatrixXd& linear_map() const { return signal_to_odf_; }

  Eigen::VectorXd odf(const Eigen::VectorXd& signal) const { return normalize_min_max(signal_to_odf_ * signal); }

 private:
  Tessellation tess_;
  SHBasis sh_;
  Eigen::MatrixXd signal_to_odf_;
};

}  // namespace gsr

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gsr/encoding.hpp"
#include "gsr/error.hpp"
#include "gsr/qspace.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/sphere.hpp"
#include "gsr/volume.hpp"

namespace gsr {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ||estimate - truth||^2 / ||truth||^2; empty for an all-zero truth.
inline std::optional<double> nmse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size()) throw InvalidArgument("nmse: length mismatch");
  const double denom = truth.squaredNorm();
  if (denom == 0.0) return std::nullopt;
  return (estimate - truth).squaredNorm() / denom;
}

// ---------------------------------------------------------------------------
// Diffusion tensor

struct TensorFit {
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();  // descending, unclamped
  Vec3 principal = Vec3::UnitY();
  double fa = 0.0;
};

// sqrt(3/2) ||l - mean(l)|| / ||l|| with eigenvalues clamped at zero.
inline double fractional_anisotropy(Eigen::Vector3d eigenvalues) {
  eigenvalues = eigenvalues.cwiseMax(0.0);
  const double norm = eigenvalues.norm();
  if (norm == 0.0) return 0.0;
  const double mean = eigenvalues.mean();
  return std::min(1.0, std::sqrt(1.5) * (eigenvalues.array() - mean).matrix().norm() / norm);
}

inline constexpr double kMinDtiSignal = 1e-6;

// Log-linear least-squares tensor fit for one shell: -log(s)/b regressed on
// the six quadratic monomials of the gradient direction.
class DtiFitter {
 public:
  explicit DtiFitter(const QSpaceDesign& design) : bvalue_(design.bvalue) {
    if (!(design.bvalue > 0.0)) throw InvalidArgument("fit_dti: b-value must be positive");
    Eigen::MatrixXd x(design.size(), 6);
    for (int j = 0; j < design.size(); ++j) {
      const Vec3& g = design.directions[j];
      x.row(j) << g.x() * g.x(), g.y() * g.y(), g.z() * g.z(), 2 * g.x() * g.y(), 2 * g.x() * g.z(), 2 * g.y() * g.z();
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (design.size() < 6 || qr.rank() < 6)
      throw InvalidArgument("fit_dti: direction set cannot determine a tensor (needs 6 well-spread directions)");
    pinv_ = qr.solve(Eigen::MatrixXd::Identity(design.size(), design.size()));
  }

  TensorFit fit(const Eigen::VectorXd& signal) const {
    if (signal.size() != pinv_.cols()) throw InvalidArgument("fit_dti: signal length does not match design");
    const Eigen::VectorXd target = -signal.cwiseMax(kMinDtiSignal).array().log().matrix() / bvalue_;
    const Eigen::Matrix<double, 6, 1> d = pinv_ * target;
    TensorFit out;
    out.tensor << d[0], d[3], d[4], d[3], d[1], d[5], d[4], d[5], d[2];
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(out.tensor);
    out.eigenvalues = eig.eigenvalues().reverse();
    out.principal = eig.eigenvectors().col(2).normalized();
    if (out.principal.y() < 0.0) out.principal = -out.principal;
    out.fa = fractional_anisotropy(out.eigenvalues);
    return out;
  }

 private:
  double bvalue_;
  Eigen::Matrix<double, 6, Eigen::Dynamic> pinv_;
};

inline TensorFit fit_dti(const Eigen::VectorXd& signal, const QSpaceDesign& design) {
  return DtiFitter(design).fit(signal);
}

// Axial angle in degrees: sign flips of either vector do not matter.
inline double angular_error(const Vec3& u, const Vec3& v) {
  if (std::abs(u.norm() - 1.0) > 1e-6 || std::abs(v.norm() - 1.0) > 1e-6)
    throw InvalidArgument("angular_error: inputs must be unit vectors");
  return 180.0 / std::numbers::pi * std::acos(std::clamp(std::abs(u.dot(v)), 0.0, 1.0));
}

// ---------------------------------------------------------------------------
// ODF peaks

struct Peak {
  Vec3 direction;
  double amplitude = 0.0;
};
using PeakSet = std::vector<Peak>;

struct PeakConfig {
  double min_separation = 25.0;  // degrees
  double rel_threshold = 0.4;
  int max_peaks = 3;
  double match_threshold = 20.0;  // degrees
};

// Local maxima of an ODF over the tessellation graph, at least rel_threshold
// of the global maximum, accepted greedily by amplitude while keeping every
// pair more than min_separation degrees apart (axially).
inline PeakSet find_peaks(const Eigen::VectorXd& odf, const Tessellation& tess, const PeakConfig& cfg = {}) {
  if (odf.size() != tess.size()) throw InvalidArgument("find_peaks: ODF length does not match tessellation");
  PeakSet peaks;
  const double hi = odf.maxCoeff(), lo = odf.minCoeff();
  if (!(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)))) return peaks;
  std::vector<int> candidates;
  for (int i = 0; i < tess.size(); ++i) {
    if (odf[i] < cfg.rel_threshold * hi) continue;
    bool is_max = true;
    for (int nb : tess.neighbors[i])
      if (odf[nb] > odf[i]) {
        is_max = false;
        break;
      }
    if (is_max) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return odf[a] > odf[b]; });
  for (int i : candidates) {
    if (static_cast<int>(peaks.size()) >= cfg.max_peaks) break;
    Vec3 dir = tess.vertices[i];
    bool separated = true;
    for (const auto& p : peaks)
      if (angular_error(p.direction, dir) <= cfg.min_separation) {
        separated = false;
        break;
      }
    if (!separated) continue;
    if (dir.y() < 0.0 || (dir.y() == 0.0 && dir.x() < 0.0)) dir = -dir;
    peaks.push_back({dir, odf[i]});
  }
  return peaks;
}

struct PeakComparison {
  double mean_error = kNaN;  // degrees; NaN when nothing could be matched
  bool flagged = false;      // false or missing peak
};

// Every truth peak is matched to its nearest reconstructed peak. The voxel
// is flagged when a reconstructed peak is farther than match_threshold from
// all truth peaks, or a truth peak has no reconstructed peak that close.
inline PeakComparison peak_errors(const PeakSet& recon, const PeakSet& truth, double match_threshold) {
  PeakComparison out;
  auto nearest = [](const Vec3& d, const PeakSet& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : set) best = std::min(best, angular_error(d, p.direction));
    return best;
  };
  if (!recon.empty() && !truth.empty()) {
    double sum = 0.0;
    for (const auto& t : truth) sum += nearest(t.direction, recon);
    out.mean_error = sum / static_cast<double>(truth.size());
  }
  for (const auto& t : truth)
    if (!(nearest(t.direction, recon) <= match_threshold)) out.flagged = true;
  for (const auto& r : recon)
    if (!(nearest(r.direction, truth) <= match_threshold)) out.flagged = true;
  return out;
}

// ---------------------------------------------------------------------------
// Whole-volume evaluation against a ground truth

struct Summary {
  double median = kNaN, q25 = kNaN, q75 = kNaN, mean = kNaN;
  std::size_t count = 0;
};

// Linear-interpolated quantiles over the finite entries.
inline Summary summarize(std::vector<double> values) {
  std::erase_if(values, [](double v) { return !std::isfinite(v); });
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  s.median = quantile(0.5);
  s.q25 = quantile(0.25);
  s.q75 = quantile(0.75);
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  return s;
}

// Per-voxel metric maps of one reconstruction. Entries are NaN where the
// metric does not apply (outside its mask).
struct VolumeEvaluation {
  std::vector<double> nmse;       // head mask
  std::vector<double> fa;         // head mask
  std::vector<double> dti_error;  // single-fiber white matter
  std::vector<double> odf_error;  // white matter
  std::vector<std::uint8_t> peak_flag;
  double false_peak_pct = 0.0;  // flagged voxels / white-matter voxels * 100
};

// Ground-truth derived quantities, computed once and reused for every
// reconstruction of the same phantom.
class Evaluator {
 public:
  Evaluator(const DwiVolumeSet& truth, LabelVolume labels, const QSpaceDesign& design, const RidgeletDictionary& dict,
            PeakConfig peaks = {})
      : truth_(truth),
        labels_(std::move(labels)),
        dti_(design),
        odf_(dict, make_icosphere(3)),
        peak_cfg_(peaks) {
    if (labels_.voxel_count() != truth.voxel_count() || labels_.dims != truth.dims)
      throw InvalidArgument("evaluate: label volume does not match the ground truth grid");
    if (truth.n_q != design.size()) throw InvalidArgument("evaluate: ground truth and gradient table disagree on N_q");
    const auto n = truth.voxel_count();
    truth_fit_.resize(n);
    truth_peaks_.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      if (labels_[v] == Tissue::Background) continue;
      const Eigen::VectorXd s = truth.voxel_signal(v);
      truth_fit_[v] = dti_.fit(s);
      if (is_white_matter(labels_[v])) truth_peaks_[v] = find_peaks(odf_.odf(s), odf_.tessellation(), peak_cfg_);
    }
  }

  const LabelVolume& labels() const { return labels_; }
  const DwiVolumeSet& truth() const { return truth_; }
  const TensorFit& truth_fit(std::size_t v) const { return truth_fit_[v]; }
  const PeakSet& truth_peaks(std::size_t v) const { return truth_peaks_[v]; }
  const OdfEstimator& odf_estimator() const { return odf_; }

  VolumeEvaluation evaluate(const DwiVolumeSet& recon) const {
    if (!recon.same_shape(truth_)) throw InvalidArgument("evaluate: reconstruction and truth shapes differ");
    const auto n = truth_.voxel_count();
    VolumeEvaluation ev;
    ev.nmse.assign(n, kNaN);
    ev.fa.assign(n, kNaN);
    ev.dti_error.assign(n, kNaN);
    ev.odf_error.assign(n, kNaN);
    ev.peak_flag.assign(n, 0);
    std::size_t wm = 0, flagged = 0;
    for (std::size_t v = 0; v < n; ++v) {
      const Tissue t = labels_[v];
      if (t == Tissue::Background) continue;
      const Eigen::VectorXd est = recon.voxel_signal(v);
      if (const auto e = nmse(est, truth_.voxel_signal(v))) ev.nmse[v] = *e;
      const TensorFit fit = dti_.fit(est);
      ev.fa[v] = fit.fa;
      if (is_single_fiber(t)) ev.dti_error[v] = angular_error(fit.principal, truth_fit_[v].principal);
      if (is_white_matter(t)) {
        const PeakSet peaks = find_peaks(odf_.odf(est), odf_.tessellation(), peak_cfg_);
        const PeakComparison cmp = peak_errors(peaks, truth_peaks_[v], peak_cfg_.match_threshold);
        ev.odf_error[v] = cmp.mean_error;
        ev.peak_flag[v] = cmp.flagged ? 1 : 0;
        ++wm;
        flagged += cmp.flagged ? 1 : 0;
      }
    }
    ev.false_peak_pct = wm == 0 ? 0.0 : 100.0 * static_cast<double>(flagged) / static_cast<double>(wm);
    return ev;
  }

  // NMSE restricted to non-CSF tissue.
  std::vector<double> tissue_nmse(const VolumeEvaluation& ev) const {
    std::vector<double> out;
    for (std::size_t v = 0; v < ev.nmse.size(); ++v)
      if (labels_[v] != Tissue::Background && labels_[v] != Tissue::Csf) out.push_back(ev.nmse[v]);
    return out;
  }

 private:
  DwiVolumeSet truth_;
  LabelVolume labels_;
  DtiFitter dti_;
  OdfEstimator odf_;
  PeakConfig peak_cfg_;
  std::vector<TensorFit> truth_fit_;
  std::vector<PeakSet> truth_peaks_;
};

}  // namespace gsr

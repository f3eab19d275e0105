#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gsr/error.hpp"
#include "gsr/parallel.hpp"
#include "gsr/qspace.hpp"
#include "gsr/volume.hpp"

namespace gsr {

// RF-encoding basis for slabs of `af` thin slices. Row k holds the weights
// profile k applies to the thin slices of a slab.
struct EncodingBasis {
  int af = 0;
  Eigen::MatrixXd matrix;

  int n_profiles() const { return static_cast<int>(matrix.rows()); }
};

inline double condition_number(const Eigen::MatrixXd& m) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[sv.size() - 1] == 0.0) return std::numeric_limits<double>::infinity();
  return sv[0] / sv[sv.size() - 1];
}

inline constexpr double kMaxBasisCondition = 10.0;

inline void validate_basis(const EncodingBasis& basis) {
  if (basis.af < 1 || basis.matrix.rows() != basis.af || basis.matrix.cols() != basis.af)
    throw InvalidArgument("encoding basis must be a square af x af matrix");
  if (!basis.matrix.allFinite()) throw InvalidArgument("encoding basis has non-finite entries");
  const double cond = condition_number(basis.matrix);
  if (!(cond <= kMaxBasisCondition))
    throw InvalidArgument("encoding basis is singular or ill-conditioned (condition number " + std::to_string(cond) + ")");
}

// J - 2I: every profile excites the whole slab with one thin slice
// phase-inverted. Eigenvalues af-2 and -2 (multiplicity af-1).
inline EncodingBasis default_basis(int af) {
  if (af < 2) throw InvalidArgument("default_basis: af must be at least 2");
  if (af == 2) throw InvalidArgument("default_basis: singular default basis for af = 2");
  EncodingBasis basis;
  basis.af = af;
  basis.matrix = Eigen::MatrixXd::Ones(af, af) - 2.0 * Eigen::MatrixXd::Identity(af, af);
  return basis;
}

inline void check_slab_divisible(const Dims& dims, int af) {
  if (af < 1 || dims[2] % af != 0)
    throw InvalidArgument("n_z = " + std::to_string(dims[2]) + " is not divisible by the slab factor " + std::to_string(af));
}

// D_k: thick(x, y, b) = sum_a B[k, a] * thin(x, y, b*af + a), per q-volume.
// k is 0-based.
inline DwiVolumeSet downsample(const DwiVolumeSet& s, const EncodingBasis& basis, int k) {
  check_slab_divisible(s.dims, basis.af);
  if (k < 0 || k >= basis.n_profiles()) throw InvalidArgument("downsample: RF index out of range");
  const int af = basis.af;
  DwiVolumeSet out({s.dims[0], s.dims[1], s.dims[2] / af}, s.n_q,
                   {s.voxel_size[0], s.voxel_size[1], s.voxel_size[2] * af});
  for (int q = 0; q < s.n_q; ++q)
    for (int b = 0; b < out.dims[2]; ++b)
      for (int a = 0; a < af; ++a) {
        const double w = basis.matrix(k, a);
        for (int y = 0; y < s.dims[1]; ++y)
          for (int x = 0; x < s.dims[0]; ++x) out.at(x, y, b, q) += w * s.at(x, y, b * af + a, q);
      }
  return out;
}

// D_k^T: spreads B[k, a] * thick(x, y, b) back onto thin slice a of slab b.
inline DwiVolumeSet downsample_adjoint(const DwiVolumeSet& thick, const EncodingBasis& basis, int k,
                                       VoxelSize thin_voxel_size = {1.0, 1.0, 1.0}) {
  if (k < 0 || k >= basis.n_profiles()) throw InvalidArgument("downsample_adjoint: RF index out of range");
  const int af = basis.af;
  DwiVolumeSet out({thick.dims[0], thick.dims[1], thick.dims[2] * af}, thick.n_q, thin_voxel_size);
  for (int q = 0; q < thick.n_q; ++q)
    for (int b = 0; b < thick.dims[2]; ++b)
      for (int a = 0; a < af; ++a) {
        const double w = basis.matrix(k, a);
        for (int y = 0; y < thick.dims[1]; ++y)
          for (int x = 0; x < thick.dims[0]; ++x) out.at(x, y, b * af + a, q) = w * thick.at(x, y, b, q);
      }
  return out;
}

// Restricts a volume set to the listed q-volumes, in list order.
inline DwiVolumeSet select_q(const DwiVolumeSet& s, const std::vector<int>& q_indices) {
  DwiVolumeSet out(s.dims, static_cast<int>(q_indices.size()), s.voxel_size);
  for (std::size_t i = 0; i < q_indices.size(); ++i) out.volume(static_cast<int>(i)) = s.volume(q_indices[i]);
  return out;
}

// Gaussian noise model. An infinite target SNR means noiseless.
struct NoiseSpec {
  double target_snr = 20.0;
  std::uint64_t seed = 0;

  bool noiseless() const { return std::isinf(target_snr); }
};

inline constexpr double kHrSnrRatio = 4.6;

// Voxels with any nonzero signal sample. The phantom's background is exactly
// zero, so this is the head mask.
inline std::vector<std::uint8_t> signal_support(const DwiVolumeSet& s) {
  std::vector<std::uint8_t> mask(s.voxel_count(), 0);
  const auto m = s.matrix();
  for (Eigen::Index n = 0; n < m.rows(); ++n) mask[n] = (m.row(n).array() != 0.0).any() ? 1 : 0;
  return mask;
}

// sigma = mean |thick b0| under the first profile, over thick voxels whose
// slab touches the head mask, divided by the target SNR. The b0 image is the
// head indicator since signals are b0-normalized.
inline double noise_sigma(const DwiVolumeSet& s, const EncodingBasis& basis, double target_snr) {
  if (!(target_snr > 0.0)) throw InvalidArgument("noise: target SNR must be positive");
  if (std::isinf(target_snr)) return 0.0;
  check_slab_divisible(s.dims, basis.af);
  const auto head = signal_support(s);
  const int af = basis.af;
  double sum = 0.0;
  std::size_t count = 0;
  for (int b = 0; b < s.dims[2] / af; ++b)
    for (int y = 0; y < s.dims[1]; ++y)
      for (int x = 0; x < s.dims[0]; ++x) {
        double b0 = 0.0;
        bool touches = false;
        for (int a = 0; a < af; ++a) {
          if (head[s.voxel_index(x, y, b * af + a)]) {
            b0 += basis.matrix(0, a);
            touches = true;
          }
        }
        if (touches) {
          sum += std::abs(b0);
          ++count;
        }
      }
  if (count == 0) throw InvalidArgument("noise: ground truth has no signal support");
  return sum / count / target_snr;
}

namespace detail {

// Independent noise substream per (stream, q) pair, so noise does not depend
// on evaluation order or thread count.
inline std::mt19937_64 noise_stream(std::uint64_t seed, std::uint32_t stream, std::uint32_t q) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, q};
  return std::mt19937_64(seq);
}

inline void add_noise(Eigen::Map<Eigen::VectorXd> vol, double sigma, std::mt19937_64 rng) {
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < vol.size(); ++i) vol[i] += normal(rng);
}

inline constexpr std::uint32_t kHrStream = 0xFFFF;

}  // namespace detail

// Y_k = D_k S Omega_k + eta_k for every RF profile of the scheme. Output k
// holds the q-volumes of scheme.assignments[k], in that order.
inline std::vector<DwiVolumeSet> simulate_acquisition(const DwiVolumeSet& s, const EncodingBasis& basis,
                                                      const SamplingScheme& scheme, const NoiseSpec& noise,
                                                      unsigned threads = 1) {
  check_slab_divisible(s.dims, basis.af);
  validate_scheme(scheme, s.n_q);
  if (scheme.n_rf > basis.n_profiles()) throw InvalidArgument("simulate: scheme uses more RF profiles than the basis has");
  const double sigma = noise_sigma(s, basis, noise.target_snr);
  std::vector<DwiVolumeSet> out(scheme.n_rf);
  parallel_for(static_cast<std::size_t>(scheme.n_rf), threads, [&](std::size_t k) {
    out[k] = downsample(select_q(s, scheme.assignments[k]), basis, static_cast<int>(k));
    if (sigma > 0.0)
      for (std::size_t i = 0; i < scheme.assignments[k].size(); ++i)
        detail::add_noise(out[k].volume(static_cast<int>(i)), sigma,
                          detail::noise_stream(noise.seed, static_cast<std::uint32_t>(k),
                                               static_cast<std::uint32_t>(scheme.assignments[k][i])));
  });
  return out;
}

// Direct thin-slice acquisition of every q-volume: S + eta with
// sigma_HR = 4.6 sigma.
inline DwiVolumeSet simulate_hr(const DwiVolumeSet& s, const EncodingBasis& basis, const NoiseSpec& noise,
                                double snr_ratio = kHrSnrRatio) {
  const double sigma = snr_ratio * noise_sigma(s, basis, noise.target_snr);
  DwiVolumeSet out = s;
  if (sigma > 0.0)
    for (int q = 0; q < s.n_q; ++q)
      detail::add_noise(out.volume(q), sigma,
                        detail::noise_stream(noise.seed, detail::kHrStream, static_cast<std::uint32_t>(q)));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic ground truth

enum class Tissue : int { Background = 0, Csf = 1, Gm = 2, WmA = 3, WmB = 4, Crossing = 5 };

inline bool is_white_matter(Tissue t) { return t == Tissue::WmA || t == Tissue::WmB || t == Tissue::Crossing; }
inline bool is_single_fiber(Tissue t) { return t == Tissue::WmA || t == Tissue::WmB; }

struct LabelVolume {
  Dims dims{0, 0, 0};
  VoxelSize voxel_size{1.0, 1.0, 1.0};
  std::vector<Tissue> labels;

  std::size_t voxel_count() const { return labels.size(); }
  Tissue operator[](std::size_t n) const { return labels[n]; }
};

// Literature tissue diffusivities (mm^2/s).
struct PhantomConfig {
  double csf_diffusivity = 3.0e-3;
  double gm_diffusivity = 0.8e-3;
  double wm_axial = 1.7e-3;
  double wm_radial = 0.3e-3;
};

struct Phantom {
  DwiVolumeSet signal;
  LabelVolume labels;
};

inline double tensor_signal(const Eigen::Matrix3d& d, const Vec3& q, double bvalue) {
  return std::exp(-bvalue * q.dot(d * q));
}

inline Eigen::Matrix3d axial_tensor(const Vec3& axis, double axial, double radial) {
  const Vec3 u = axis.normalized();
  return radial * Eigen::Matrix3d::Identity() + (axial - radial) * u * u.transpose();
}

// Head ellipsoid of gray-matter-like tissue with a CSF pocket, crossed at the
// center by two orthogonal rectangular white-matter bundles (A along x,
// B along z). Overlap of the bundles is a 50/50 crossing.
inline LabelVolume phantom_labels(const Dims& dims, const VoxelSize& voxel_size) {
  LabelVolume lab;
  lab.dims = dims;
  lab.voxel_size = voxel_size;
  lab.labels.assign(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2], Tissue::Background);
  const double cx = (dims[0] - 1) / 2.0, cy = (dims[1] - 1) / 2.0, cz = (dims[2] - 1) / 2.0;
  auto band = [](int n) { return std::max(2.0, std::round(0.25 * n)) / 2.0; };
  const double hx = band(dims[0]), hy = band(dims[1]), hz = band(dims[2]);
  const double csf_y = cy + 0.27 * dims[1];
  auto sq = [](double v) { return v * v; };
  std::size_t n = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x, ++n) {
        const double head = sq((x - cx) / (0.45 * dims[0])) + sq((y - cy) / (0.45 * dims[1])) +
                            sq((z - cz) / std::max(0.45 * dims[2], 1.0));
        if (head > 1.0) continue;
        const double csf = sq((x - cx) / (0.12 * dims[0])) + sq((y - csf_y) / (0.1 * dims[1])) +
                           sq((z - cz) / std::max(0.15 * dims[2], 1.0));
        const bool in_a = std::abs(y - cy) < hy && std::abs(z - cz) < hz;
        const bool in_b = std::abs(y - cy) < hy && std::abs(x - cx) < hx;
        if (csf <= 1.0)
          lab.labels[n] = Tissue::Csf;
        else if (in_a && in_b)
          lab.labels[n] = Tissue::Crossing;
        else if (in_a)
          lab.labels[n] = Tissue::WmA;
        else if (in_b)
          lab.labels[n] = Tissue::WmB;
        else
          lab.labels[n] = Tissue::Gm;
      }
  return lab;
}

// Noiseless b0-normalized multi-tensor signal for one tissue class.
inline double tissue_signal(Tissue t, const Vec3& q, double bvalue, const PhantomConfig& cfg = {}) {
  const Eigen::Matrix3d da = axial_tensor(Vec3::UnitX(), cfg.wm_axial, cfg.wm_radial);
  const Eigen::Matrix3d db = axial_tensor(Vec3::UnitZ(), cfg.wm_axial, cfg.wm_radial);
  switch (t) {
    case Tissue::Background: return 0.0;
    case Tissue::Csf: return std::exp(-bvalue * cfg.csf_diffusivity);
    case Tissue::Gm: return std::exp(-bvalue * cfg.gm_diffusivity);
    case Tissue::WmA: return tensor_signal(da, q, bvalue);
    case Tissue::WmB: return tensor_signal(db, q, bvalue);
    case Tissue::Crossing: return 0.5 * tensor_signal(da, q, bvalue) + 0.5 * tensor_signal(db, q, bvalue);
  }
  return 0.0;
}

inline Phantom make_phantom(const Dims& dims, const VoxelSize& voxel_size, const QSpaceDesign& design,
                            const PhantomConfig& cfg = {}) {
  if (dims[0] < 16 || dims[1] < 16 || dims[2] < 2)
    throw InvalidArgument("make_phantom: dims must be at least 16 x 16 x 2");
  if (design.size() == 0) throw InvalidArgument("make_phantom: empty q-space design");
  Phantom ph;
  ph.labels = phantom_labels(dims, voxel_size);
  ph.signal = DwiVolumeSet(dims, design.size(), voxel_size);
  for (int q = 0; q < design.size(); ++q) {
    double per_tissue[6];
    for (int t = 0; t < 6; ++t) per_tissue[t] = tissue_signal(static_cast<Tissue>(t), design.directions[q], design.bvalue, cfg);
    auto vol = ph.signal.volume(q);
    for (std::size_t n = 0; n < ph.labels.voxel_count(); ++n) vol[static_cast<Eigen::Index>(n)] = per_tissue[static_cast<int>(ph.labels[n])];
  }
  return ph;
}

}  // namespace gsr

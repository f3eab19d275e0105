#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "gsr/encoding.hpp"
#include "gsr/ridgelets.hpp"
#include "gsr/sphere.hpp"

using namespace gsr;

namespace {

const QSpaceDesign& design64() {
  static const QSpaceDesign d = spiral_directions(64);
  return d;
}

const RidgeletDictionary& dict64() {
  static const RidgeletDictionary d = build_dictionary(design64());
  return d;
}

// Funk-Radon transform by direct quadrature over the great circle normal to u.
double brute_force_frt(const Eigen::Matrix3d& tensor, const Vec3& u, double bvalue) {
  Vec3 a = std::abs(u.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  a = (a - a.dot(u) * u).normalized();
  const Vec3 b = u.cross(a);
  const int steps = 3600;
  double sum = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double t = 2.0 * std::numbers::pi * i / steps;
    sum += tensor_signal(tensor, std::cos(t) * a + std::sin(t) * b, bvalue);
  }
  return sum * 2.0 * std::numbers::pi / steps;
}

double degrees_axial(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST(FunkRadon, WeightSequence) {
  EXPECT_DOUBLE_EQ(funk_radon_weight(0), 2.0 * std::numbers::pi);
  EXPECT_DOUBLE_EQ(funk_radon_weight(2), -std::numbers::pi);
  EXPECT_DOUBLE_EQ(funk_radon_weight(4), 2.0 * std::numbers::pi * 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(funk_radon_weight(6), -2.0 * std::numbers::pi * 15.0 / 48.0);
  for (int n = 0; n <= 16; n += 2) EXPECT_NEAR(funk_radon_weight(n), 2.0 * std::numbers::pi * std::legendre(n, 0.0), 1e-14);
}

TEST(Dictionary, DefaultShape) {
  const auto& d = dict64();
  EXPECT_EQ(d.n_q(), 64);
  EXPECT_EQ(d.n_atoms(), 336);
  EXPECT_GT(d.n_atoms(), d.n_q());
  EXPECT_EQ(d.column_scales.size(), 336u);
  for (Eigen::Index m = 0; m < d.n_atoms(); ++m) {
    EXPECT_NEAR(d.matrix.col(m).norm(), 1.0, 1e-12);
    EXPECT_GT(d.column_scales[m], 0.0);
  }
}

TEST(Dictionary, AntipodalSymmetry) {
  const auto& d = dict64();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int t = 0; t < 20; ++t) {
    const Vec3 u = Vec3(g(rng), g(rng), g(rng)).normalized();
    for (Eigen::Index m = 0; m < d.n_atoms(); m += 7) EXPECT_NEAR(d.atom_value(m, u), d.atom_value(m, -u), 1e-10);
  }
}

TEST(Dictionary, DeterministicAndIncoherent) {
  const auto again = build_dictionary(design64());
  EXPECT_TRUE(again.matrix == dict64().matrix);
  Eigen::MatrixXd gram = dict64().matrix.transpose() * dict64().matrix;
  gram.diagonal().setZero();
  EXPECT_LT(gram.cwiseAbs().maxCoeff(), 1.0 - 1e-6);
}

TEST(Dictionary, TruncationStability) {
  RidgeletConfig cfg;
  cfg.n_max = 20;
  const auto wider = build_dictionary(design64(), cfg);
  EXPECT_LT((wider.matrix - dict64().matrix).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Dictionary, LevelWeightsDecay) {
  EXPECT_DOUBLE_EQ(ridgelet_level_weight(-1, 0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(ridgelet_level_weight(0, 0, 0.5), 0.0);
  EXPECT_NEAR(ridgelet_level_weight(0, 2, 0.5), std::exp(-1.5) - std::exp(-3.0), 1e-15);
  EXPECT_LT(std::abs(ridgelet_level_weight(1, 16, 0.5)), 1e-6);
}

TEST(Dictionary, RejectsBadInput) {
  EXPECT_THROW(build_dictionary(QSpaceDesign{}), InvalidArgument);
  RidgeletConfig cfg;
  cfg.rho = 0.0;
  EXPECT_THROW(build_dictionary(design64(), cfg), InvalidArgument);
  cfg = {};
  cfg.orientations_per_level = {3, 64, 256};
  EXPECT_THROW(build_dictionary(design64(), cfg), InvalidArgument);
  cfg = {};
  cfg.levels.clear();
  cfg.orientations_per_level.clear();
  EXPECT_THROW(build_dictionary(design64(), cfg), InvalidArgument);
}

TEST(LeastSquares, SingleAtomReproduced) {
  const auto& d = dict64();
  const Eigen::VectorXd s = d.matrix.col(100);
  const Eigen::VectorXd c = fit_coefficients_ls(d, s, 0.0);
  EXPECT_LT((d.matrix * c - s).norm(), 1e-8);
  EXPECT_EQ(fit_coefficients_ls(d, Eigen::VectorXd::Zero(64), 1e-3), Eigen::VectorXd::Zero(336));
}

TEST(LeastSquares, RidgeNormalEquations) {
  const auto& d = dict64();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Eigen::VectorXd s(64);
  for (auto& v : s) v = g(rng);
  const Eigen::VectorXd c = fit_coefficients_ls(d, s, 1e-3);
  const Eigen::VectorXd resid = d.matrix.transpose() * (d.matrix * c - s) + 1e-3 * c;
  EXPECT_LE(resid.norm(), 1e-8 * (d.matrix.transpose() * s).norm());
  const Eigen::VectorXd c3 = fit_coefficients_ls(d, 3.0 * s, 1e-3);
  EXPECT_LT((c3 - 3.0 * c).norm(), 1e-12 * c3.norm());
  EXPECT_THROW(fit_coefficients_ls(d, s, -1.0), InvalidArgument);
}

TEST(Icosphere, Counts) {
  const auto t = make_icosphere(3);
  EXPECT_EQ(t.size(), 642);
  for (const auto& v : t.vertices) EXPECT_NEAR(v.norm(), 1.0, 1e-14);
  int fives = 0;
  for (const auto& n : t.neighbors) {
    EXPECT_TRUE(n.size() == 5 || n.size() == 6);
    fives += n.size() == 5;
  }
  EXPECT_EQ(fives, 12);
  EXPECT_EQ(make_icosphere(0).size(), 12);
}

TEST(ShBasis, EvenDegreesOnly) {
  const auto t = make_icosphere(2);
  const auto sh = make_sh_basis(t.vertices, 8);
  EXPECT_EQ(sh.matrix.cols(), 45);
  for (int deg : sh.column_degree) EXPECT_EQ(deg % 2, 0);
  EXPECT_THROW(make_sh_basis(t.vertices, 3), InvalidArgument);
}

TEST(Odf, IsotropicIsFlat) {
  const auto t = make_icosphere(3);
  const auto sh = make_sh_basis(t.vertices, 8);
  const Eigen::VectorXd odf = odf_from_signal(Eigen::VectorXd::Constant(t.size(), 0.3), sh);
  EXPECT_EQ(odf.minCoeff(), odf.maxCoeff());
}

TEST(Odf, SingleTensorMaximumAlongAxis) {
  const auto t = make_icosphere(3);
  const auto sh = make_sh_basis(t.vertices, 8);
  const Eigen::Matrix3d tensor = axial_tensor(Vec3(0, 0, 1), 1.7e-3, 0.3e-3);
  Eigen::VectorXd signal(t.size()), reference(t.size());
  for (int i = 0; i < t.size(); ++i) {
    signal[i] = tensor_signal(tensor, t.vertices[i], 2000.0);
    reference[i] = brute_force_frt(tensor, t.vertices[i], 2000.0);
  }
  Eigen::Index got, want;
  odf_from_signal(signal, sh).maxCoeff(&got);
  reference.maxCoeff(&want);
  EXPECT_LT(degrees_axial(t.vertices[want], Vec3(0, 0, 1)), 5.0);
  EXPECT_LT(degrees_axial(t.vertices[got], Vec3(0, 0, 1)), 5.0);
}

TEST(Odf, EstimatorFollowsTensorAxis) {
  const OdfEstimator est(dict64(), make_icosphere(3));
  for (const Vec3 axis : {Vec3(1, 0, 0), Vec3(0, 0, 1), Vec3(1, 1, 0).normalized()}) {
    const Eigen::Matrix3d tensor = axial_tensor(axis, 1.7e-3, 0.3e-3);
    Eigen::VectorXd s(64);
    for (int j = 0; j < 64; ++j) s[j] = tensor_signal(tensor, design64().directions[j], 2000.0);
    Eigen::Index top;
    est.odf(s).maxCoeff(&top);
    EXPECT_LT(degrees_axial(est.tessellation().vertices[top], axis), 5.0);
  }
}

TEST(Odf, RejectsCoarseTessellation) {
  const auto t = make_icosphere(1);
  const auto sh = make_sh_basis(t.vertices, 4);
  EXPECT_THROW(odf_from_signal(Eigen::VectorXd::Ones(t.size()), sh), InvalidArgument);
  EXPECT_THROW(OdfEstimator(dict64(), make_icosphere(1)), InvalidArgument);
}

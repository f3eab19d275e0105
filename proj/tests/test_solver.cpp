#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>

#include "gsr/solver.hpp"

using namespace gsr;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::MatrixXd random_dictionary(int rows, int cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  a.colwise().normalize();
  return a;
}

Eigen::VectorXd random_vector(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Largest violation of rho1 A^T (b - A c) in lambda * d||c||_1.
double subgradient_violation(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c, double lambda,
                             double rho1) {
  const Eigen::VectorXd g = rho1 * a.transpose() * (b - a * c);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const double e = c[i] != 0.0 ? std::abs(g[i] - lambda * (c[i] > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(g[i]) - lambda);
    worst = std::max(worst, e);
  }
  return worst;
}

struct Small {
  QSpaceDesign design = spiral_directions(16);
  Phantom ph = make_phantom({16, 16, 5}, {1, 1, 1}, design);
  EncodingBasis basis = default_basis(5);
  RidgeletDictionary dict = build_dictionary(design, RidgeletConfig{0.5, 16, {-1, 0, 1}, {6, 16, 32}});
};

const Small& small() {
  static const Small s;
  return s;
}

double median_nmse(const DwiVolumeSet& est, const Phantom& ph) {
  std::vector<double> v;
  const auto e = est.matrix();
  const auto t = ph.signal.matrix();
  for (Eigen::Index n = 0; n < t.rows(); ++n)
    if (ph.labels[n] != Tissue::Background) v.push_back((e.row(n) - t.row(n)).squaredNorm() / t.row(n).squaredNorm());
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(SoftThreshold, AnalyticCases) {
  EXPECT_EQ(soft_threshold(Eigen::Vector3d(3, -1, 0.5), 1.0), Eigen::VectorXd(Eigen::Vector3d(2, 0, 0)));
  EXPECT_EQ(soft_threshold(Eigen::Vector3d(-4, 1.5, 0), 0.5), Eigen::VectorXd(Eigen::Vector3d(-3.5, 1, 0)));
  const Eigen::VectorXd v = random_vector(30, 1);
  EXPECT_EQ(soft_threshold(v, 0.0), v);
  EXPECT_THROW(soft_threshold(v, -0.1), InvalidArgument);
}

TEST(SoftThreshold, ProxOptimality) {
  const Eigen::VectorXd v = random_vector(200, 2);
  const double t = 0.7;
  const Eigen::VectorXd out = soft_threshold(v, t);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double r = v[i] - out[i];
    if (out[i] != 0.0)
      EXPECT_NEAR(r, t * (out[i] > 0 ? 1.0 : -1.0), 1e-15);
    else
      EXPECT_LE(std::abs(r), t);
  }
}

TEST(SoftThreshold, Contraction) {
  for (unsigned s = 0; s < 20; ++s) {
    const Eigen::VectorXd u = random_vector(50, 100 + s), v = random_vector(50, 200 + s);
    const double t = 0.1 * s;
    EXPECT_LE((soft_threshold(u, t) - soft_threshold(v, t)).norm(), (u - v).norm() + 1e-15);
  }
}

TEST(BasisPursuit, LeastSquaresLimitKkt) {
  const Eigen::MatrixXd a = random_dictionary(20, 40, 1);
  const Eigen::VectorXd b = random_vector(20, 2);
  const Eigen::VectorXd c = basis_pursuit(a, b, 0.0, 1.0, 1000, Eigen::VectorXd::Zero(40));
  EXPECT_LE((a.transpose() * (a * c - b)).norm(), 1e-6 * (a.transpose() * b).norm());
}

TEST(BasisPursuit, SubgradientConditionWithPenalty) {
  const Eigen::MatrixXd a = random_dictionary(20, 40, 3);
  const Eigen::VectorXd b = random_vector(20, 4);
  for (double lambda : {0.05, 0.3}) {
    const Eigen::VectorXd c = basis_pursuit(a, b, lambda, 1.0, 10000, Eigen::VectorXd::Zero(40));
    EXPECT_LE(subgradient_violation(a, b, c, lambda, 1.0), 1e-3 * (a.transpose() * b).norm()) << lambda;
    EXPECT_LT((c.array() != 0.0).count(), 40);
  }
}

TEST(BasisPursuit, NullThreshold) {
  const Eigen::MatrixXd a = random_dictionary(20, 40, 5);
  const Eigen::VectorXd b = random_vector(20, 6);
  const double rho1 = 0.5;
  const double lambda = rho1 * (a.transpose() * b).lpNorm<Eigen::Infinity>();
  const Eigen::VectorXd c = basis_pursuit(a, b, lambda, rho1, 50, random_vector(40, 7));
  EXPECT_EQ(c, Eigen::VectorXd::Zero(40));
  EXPECT_LE(subgradient_violation(a, b, c, lambda, rho1), 1e-12);
  BpStats stats;
  EXPECT_EQ(basis_pursuit(a, Eigen::VectorXd::Zero(20), 0.01, 1.0, 50, random_vector(40, 8), &stats),
            Eigen::VectorXd::Zero(40));
  EXPECT_EQ(stats.iterations, 0);
}

TEST(BasisPursuit, MonotoneObjective) {
  const Eigen::MatrixXd a = random_dictionary(20, 40, 9);
  const Eigen::VectorXd b = random_vector(20, 10);
  BpStats stats;
  basis_pursuit(a, b, 0.05, 1.0, 300, random_vector(40, 11), &stats);
  ASSERT_GE(stats.objective.size(), 2u);
  for (std::size_t i = 1; i < stats.objective.size(); ++i) EXPECT_LE(stats.objective[i], stats.objective[i - 1]);
}

TEST(BasisPursuit, SpectralNorm) {
  const Eigen::MatrixXd a = random_dictionary(20, 40, 12);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  EXPECT_NEAR(spectral_norm_sq(a), svd.singularValues()[0] * svd.singularValues()[0], 1e-10);
}

TEST(Tikhonov, NoiselessFullSamplingInverts) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 1);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  const auto est = tikhonov_init(y, s.basis, scheme, 1e-8);
  const auto e = est.matrix();
  const auto t = s.ph.signal.matrix();
  for (Eigen::Index n = 0; n < t.rows(); ++n)
    if (t.row(n).norm() > 0) EXPECT_LT((e.row(n) - t.row(n)).norm() / t.row(n).norm(), 1e-5);
}

TEST(Tikhonov, ZeroDataAndShrinkage) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 1});
  double prev = kInf;
  for (double mu : {0.01, 0.1, 1.0, 10.0, 100.0}) {
    const double norm = tikhonov_init(y, s.basis, scheme, mu).matrix().norm();
    EXPECT_LT(norm, prev);
    prev = norm;
  }
  for (auto& v : y)
    for (auto& x : v.values) x = 0.0;
  for (double x : tikhonov_init(y, s.basis, scheme, 0.2).values) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(tikhonov_init(y, s.basis, scheme, 0.0), InvalidArgument);
}

TEST(Tikhonov, UncoveredDirectionRejected) {
  const auto& s = small();
  auto scheme = make_scheme(s.design, 5);
  auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  scheme.assignments[1].erase(scheme.assignments[1].begin());
  y[1] = select_q(y[1], {1, 2});
  EXPECT_THROW(tikhonov_init(y, s.basis, scheme, 0.2), InvalidScheme);
}

TEST(Stages, LlsWithoutPenaltiesIsExactInverse) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 1);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  const auto p = make_problem(y, s.basis, scheme);
  SolverConfig cfg;
  auto st = init_state(p, s.dict, cfg);
  cfg.rho1 = cfg.rho2 = 0.0;
  lls_update(st, p, s.dict, cfg);
  EXPECT_LT((st.s.matrix() - s.ph.signal.matrix()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Stages, LlsNormalEquations) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 3);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 3});
  const auto p = make_problem(y, s.basis, scheme);
  SolverConfig cfg;
  auto st = init_state(p, s.dict, cfg);
  // Make the duals and Z nontrivial.
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.05);
  for (auto& v : st.lambda_dual.values) v = g(rng);
  for (auto& v : st.gamma_dual.values) v = g(rng);
  for (auto& v : st.z.values) v += g(rng);
  lls_update(st, p, s.dict, cfg);
  const Eigen::MatrixXd ac = synthesize(s.dict, st.c);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int j = static_cast<int>(rng() % p.n_q);
    const int x = 4 + static_cast<int>(rng() % 8), yy = 4 + static_cast<int>(rng() % 8);
    Eigen::VectorXd sv(5), rhs(5);
    for (int a = 0; a < 5; ++a) {
      const auto n = p.backprojected.voxel_index(x, yy, a);
      sv[a] = st.s.at(x, yy, a, j);
      rhs[a] = p.backprojected.at(x, yy, a, j) + cfg.rho1 * (ac(n, j) - st.lambda_dual.at(x, yy, a, j)) +
               cfg.rho2 * (st.z.at(x, yy, a, j) - st.gamma_dual.at(x, yy, a, j));
    }
    if (!p.active[p.backprojected.voxel_index(x, yy, 0)]) continue;
    Eigen::MatrixXd lhs = p.group_gram[p.group_of_q[j]];
    lhs.diagonal().array() += cfg.rho1 + cfg.rho2;
    worst = std::max(worst, (lhs * sv - rhs).norm() / rhs.norm());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Stages, LargeRhoFollowsSynthesis) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 5});
  const auto p = make_problem(y, s.basis, scheme);
  SolverConfig cfg;
  auto st = init_state(p, s.dict, cfg);
  cfg.rho1 = 1e10;
  cfg.rho2 = 0.0;
  lls_update(st, p, s.dict, cfg);
  const Eigen::MatrixXd target = synthesize(s.dict, st.c) - st.lambda_dual.matrix();
  const auto m = st.s.matrix();
  for (Eigen::Index n = 0; n < m.rows(); ++n)
    if (p.active[n]) EXPECT_LT((m.row(n) - target.row(n)).norm(), 1e-8 * (1.0 + target.row(n).norm()));
}

TEST(Stages, DualUpdates) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 1);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  const auto p = make_problem(y, s.basis, scheme);
  SolverConfig cfg;
  auto st = init_state(p, s.dict, cfg);
  const Eigen::MatrixXd r = st.s.matrix() - synthesize(s.dict, st.c);
  lambda_dual_update(st, s.dict);
  EXPECT_TRUE(st.lambda_dual.matrix().isApprox(r, 1e-14) || r.norm() == 0.0);
  lambda_dual_update(st, s.dict);
  EXPECT_LT((st.lambda_dual.matrix() - 2.0 * r).norm(), 1e-12 * (1.0 + r.norm()));

  // s == A c leaves Lambda alone.
  const Eigen::MatrixXd before = st.lambda_dual.matrix();
  st.s.matrix() = synthesize(s.dict, st.c);
  lambda_dual_update(st, s.dict);
  EXPECT_EQ(st.lambda_dual.matrix(), before);

  // gamma accumulates S - Z; opposite residuals cancel.
  st.z.values = st.s.values;
  const Eigen::MatrixXd g0 = st.gamma_dual.matrix();
  gamma_dual_update(st);
  EXPECT_EQ(st.gamma_dual.matrix(), g0);
  for (auto& v : st.z.values) v -= 0.25;
  gamma_dual_update(st);
  for (auto& v : st.z.values) v += 0.5;
  gamma_dual_update(st);
  EXPECT_LT((st.gamma_dual.matrix() - g0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Stages, TvUpdate) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 6});
  const auto p = make_problem(y, s.basis, scheme);
  SolverConfig cfg;
  auto st = init_state(p, s.dict, cfg);
  for (auto& v : st.gamma_dual.values) v = 0.01;
  SolverConfig off = cfg;
  off.lambda_tv = 0.0;
  tv_update(st, off);
  for (std::size_t i = 0; i < st.z.size(); ++i) EXPECT_EQ(st.z.values[i], st.s.values[i] + st.gamma_dual.values[i]);
  tv_update(st, cfg);
  const Eigen::VectorXd f = st.s.volume(3) + st.gamma_dual.volume(3);
  const auto direct = tv_prox(std::span<const double>(f.data(), f.size()), st.s.dims, cfg.lambda_tv / cfg.rho2,
                              cfg.tv_inner_iters);
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_EQ(st.z.volume(3)[i], direct[i]);
}

TEST(Reconstruct, NoiselessFullSamplingRecovers) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 1);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  SolverConfig cfg;
  cfg.lambda = cfg.lambda_tv = 1e-8;
  const auto r = reconstruct(y, s.basis, scheme, s.dict, cfg);
  EXPECT_LT(median_nmse(r.s, s.ph), 1e-4);
  EXPECT_EQ(r.report.rel_change_history.size(), static_cast<std::size_t>(r.report.iterations_run));
  EXPECT_EQ(r.report.objective_history.size(), static_cast<std::size_t>(r.report.iterations_run));
}

TEST(Reconstruct, BackgroundStaysZero) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 3);
  // Noiseless, so slabs outside the head carry exactly zero data.
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {std::numeric_limits<double>::infinity(), 7});
  SolverConfig cfg;
  cfg.n_iter = 2;
  const auto p = make_problem(y, s.basis, scheme);
  const auto r = reconstruct(y, s.basis, scheme, s.dict, cfg);
  const auto m = r.s.matrix();
  int inactive = 0;
  for (Eigen::Index n = 0; n < m.rows(); ++n)
    if (!p.active[n]) {
      ++inactive;
      EXPECT_EQ(m.row(n).norm(), 0.0);
    }
  EXPECT_GT(inactive, 0);
}

TEST(Reconstruct, EpsilonStopsEarly) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 8});
  SolverConfig cfg;
  cfg.epsilon = 10.0;
  EXPECT_EQ(reconstruct(y, s.basis, scheme, s.dict, cfg).report.iterations_run, 1);
}

TEST(Reconstruct, SparseOnlyReductionBitIdentical) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 9});
  SolverConfig cfg;
  cfg.lambda_tv = 0.0;
  cfg.rho2 = 0.0;
  cfg.epsilon = 1e-300;
  const auto full = reconstruct(y, s.basis, scheme, s.dict, cfg);
  const auto three = reconstruct_sparse_only(y, s.basis, scheme, s.dict, cfg);
  EXPECT_EQ(full.report.iterations_run, 8);
  EXPECT_EQ(full.s.values, three.s.values);
}

TEST(Reconstruct, ThreadCountInvariant) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 4);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 10});
  SolverConfig cfg;
  cfg.n_iter = 3;
  const auto a = reconstruct(y, s.basis, scheme, s.dict, cfg, 1);
  const auto b = reconstruct(y, s.basis, scheme, s.dict, cfg, 4);
  EXPECT_EQ(a.s.values, b.s.values);
}

TEST(Reconstruct, ScalingCovariance) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 11});
  SolverConfig cfg;
  cfg.n_iter = 4;
  cfg.epsilon = 1e-300;
  const auto base = reconstruct(y, s.basis, scheme, s.dict, cfg);
  for (double alpha : {2.0, 3.0}) {
    auto ys = y;
    for (auto& v : ys)
      for (auto& x : v.values) x *= alpha;
    SolverConfig scaled = cfg;
    scaled.lambda *= alpha;
    scaled.lambda_tv *= alpha;
    const auto r = reconstruct(ys, s.basis, scheme, s.dict, scaled);
    const Eigen::MatrixXd expect = alpha * base.s.matrix();
    if (alpha == 2.0)
      EXPECT_EQ(r.s.matrix(), expect);
    else
      EXPECT_LT((r.s.matrix() - expect).norm(), 1e-9 * expect.norm());
  }
}

TEST(Reconstruct, GammaCompatibilityFlagChangesTrajectory) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 2);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {20.0, 12});
  SolverConfig cfg;
  cfg.n_iter = 3;
  cfg.epsilon = 1e-300;
  SolverConfig literal = cfg;
  literal.gamma_uses_previous_s = true;
  const auto a = reconstruct(y, s.basis, scheme, s.dict, cfg);
  const auto b = reconstruct(y, s.basis, scheme, s.dict, literal);
  EXPECT_NE(a.s.values, b.s.values);
  EXPECT_TRUE(b.s.all_finite());
}

TEST(Reconstruct, NonFiniteNamesStage) {
  const auto& s = small();
  const auto scheme = make_scheme(s.design, 1);
  const auto y = simulate_acquisition(s.ph.signal, s.basis, scheme, {kInf, 0});
  auto dict = s.dict;
  dict.matrix(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    reconstruct(y, s.basis, scheme, dict, SolverConfig{});
    FAIL();
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("lls_update"), std::string::npos);
  }
}

TEST(Config, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_NO_THROW(SolverConfig::in_vivo_defaults().validate());
  c.n_iter = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epsilon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.rho1 = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.rho2 = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  const auto d = SolverConfig::simulation_defaults();
  EXPECT_EQ(d.lambda, 0.02);
  EXPECT_EQ(d.lambda_tv, 0.005);
  EXPECT_EQ(d.rho1, 0.01);
  EXPECT_EQ(d.rho2, 0.01);
  EXPECT_EQ(d.n_iter, 8);
}

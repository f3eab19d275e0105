#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "gsr/error.hpp"
#include "gsr/qspace.hpp"

namespace gsr {

// Funk-Radon eigenvalue for even degree n: 2*pi*(-1)^(n/2) (n-1)!!/n!!,
// which equals 2*pi*P_n(0). Odd degrees map to 0.
inline double funk_radon_weight(int n) {
  if (n < 0 || n % 2 != 0) return 0.0;
  double ratio = 1.0;  // (n-1)!!/n!! with (-1)!! = 0!! = 1
  for (int k = 2; k <= n; k += 2) ratio *= static_cast<double>(k - 1) / k;
  const double sign = (n / 2) % 2 == 0 ? 1.0 : -1.0;
  return 2.0 * std::numbers::pi * sign * ratio;
}

inline int even_sh_count(int degree) { return (degree + 1) * (degree + 2) / 2; }

// Real, antipodally even spherical harmonics up to an even degree. Column
// order: l = 0, 2, 4, ...; within a degree m = -l..l.
struct SHBasis {
  int degree = 0;
  Eigen::MatrixXd matrix;  // N_dirs x even_sh_count(degree)
  std::vector<int> column_degree;

  Eigen::Index n_coefficients() const { return matrix.cols(); }
};

inline SHBasis make_sh_basis(const std::vector<Vec3>& dirs, int degree) {
  if (degree < 0 || degree % 2 != 0) throw InvalidArgument("SH degree must be even and non-negative");
  SHBasis sh;
  sh.degree = degree;
  sh.matrix.resize(static_cast<Eigen::Index>(dirs.size()), even_sh_count(degree));
  for (int l = 0; l <= degree; l += 2)
    for (int m = -l; m <= l; ++m) sh.column_degree.push_back(l);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const Vec3& u = dirs[i];
    const double theta = std::acos(std::clamp(u.z(), -1.0, 1.0));
    const double phi = std::atan2(u.y(), u.x());
    Eigen::Index col = 0;
    for (int l = 0; l <= degree; l += 2) {
      for (int m = -l; m <= l; ++m, ++col) {
        const unsigned am = static_cast<unsigned>(std::abs(m));
        const double ylm = std::sph_legendre(static_cast<unsigned>(l), am, theta);
        double v;
        if (m < 0)
          v = std::numbers::sqrt2 * ylm * std::sin(am * phi);
        else if (m == 0)
          v = ylm;
        else
          v = std::numbers::sqrt2 * ylm * std::cos(am * phi);
        sh.matrix(static_cast<Eigen::Index>(i), col) = v;
      }
    }
  }
  return sh;
}

// Vertices of a subdivided icosahedron on the unit sphere, with the edge
// graph used for local-maximum search.
struct Tessellation {
  std::vector<Vec3> vertices;
  std::vector<std::vector<int>> neighbors;

  int size() const { return static_cast<int>(vertices.size()); }
};

inline Tessellation make_icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Tessellation tess;
  tess.vertices = std::move(v);
  tess.neighbors.assign(tess.vertices.size(), {});
  auto link = [&](int a, int b) {
    auto& na = tess.neighbors[a];
    if (std::find(na.begin(), na.end(), b) == na.end()) na.push_back(b);
  };
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) {
      link(f[e], f[(e + 1) % 3]);
      link(f[(e + 1) % 3], f[e]);
    }
  for (auto& n : tess.neighbors) std::sort(n.begin(), n.end());
  return tess;
}

}  // namespace gsr

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gsr/error.hpp"

namespace gsr {

using Vec3 = Eigen::Vector3d;

// Single-shell q-space sampling: unit gradient directions on the y >= 0
// hemisphere sharing one b-value (s/mm^2).
struct QSpaceDesign {
  std::vector<Vec3> directions;
  double bvalue = 0.0;
  int n_b0 = 0;

  int size() const { return static_cast<int>(directions.size()); }
};

namespace detail {

// Golden-angle spiral over the y >= 0 hemisphere, n >= 2. Point i has polar
// angle arccos(1 - i/(n-1)) about +y, so the spiral starts at the pole
// (0,1,0) and ends on the equator; azimuths advance by the golden angle.
inline std::vector<Vec3> hemisphere_spiral(int n) {
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> dirs;
  dirs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double cos_theta = n == 1 ? 1.0 : 1.0 - static_cast<double>(i) / (n - 1);
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double phi = golden_angle * i;
    Vec3 u(sin_theta * std::sin(phi), cos_theta, sin_theta * std::cos(phi));
    dirs.push_back(u / u.norm());
  }
  return dirs;
}

}  // namespace detail

inline QSpaceDesign spiral_directions(int n, double bvalue = 2000.0) {
  if (n < 6) throw InvalidArgument("spiral_directions: need at least 6 directions, got " + std::to_string(n));
  QSpaceDesign design;
  design.bvalue = bvalue;
  design.directions = detail::hemisphere_spiral(n);
  return design;
}

// Which RF-encoding profiles encode which q-space directions. Indices are
// 0-based here; assignments[k] lists the q indices excited by profile k+1,
// sorted ascending.
struct SamplingScheme {
  int n_rf = 5;
  int factor = 1;
  std::vector<std::vector<int>> assignments;

  int total_acquisitions() const {
    int total = 0;
    for (const auto& a : assignments) total += static_cast<int>(a.size());
    return total;
  }

  std::string label() const { return std::to_string(factor) + "X"; }

  // RF profiles (0-based) that encode direction j, ascending.
  std::vector<int> profiles_for(int j) const {
    std::vector<int> ks;
    for (int k = 0; k < n_rf; ++k)
      for (int q : assignments[k])
        if (q == j) {
          ks.push_back(k);
          break;
        }
    return ks;
  }

  int max_q_index() const {
    int m = -1;
    for (const auto& a : assignments)
      for (int q : a) m = std::max(m, q);
    return m;
  }
};

// RF subsets (1-based profile numbers) for each interleaved q-group of the
// 1X..5X schemes.
inline const std::vector<std::vector<int>>& rf_groups_for_factor(int factor) {
  static const std::array<std::vector<std::vector<int>>, 5> tables = {{
      {{1, 2, 3, 4, 5}},
      {{1, 3, 5}, {2, 4}},
      {{1, 4}, {2, 5}, {3}},
      {{1, 5}, {2}, {3}, {4}},
      {{1}, {2}, {3}, {4}, {5}},
  }};
  if (factor < 1 || factor > 5) throw InvalidArgument("make_scheme: factor must be in 1..5, got " + std::to_string(factor));
  return tables[factor - 1];
}

// Direction j (0-based, spiral order) joins group j mod factor; each group is
// encoded by that group's fixed RF subset. Depends on index order only.
inline SamplingScheme make_scheme(const QSpaceDesign& design, int factor) {
  const auto& groups = rf_groups_for_factor(factor);
  if (design.size() == 0) throw InvalidArgument("make_scheme: empty q-space design");
  SamplingScheme scheme;
  scheme.n_rf = 5;
  scheme.factor = factor;
  scheme.assignments.assign(5, {});
  for (int j = 0; j < design.size(); ++j)
    for (int rf : groups[j % factor]) scheme.assignments[rf - 1].push_back(j);
  return scheme;
}

// The column selection Omega_k for 0-based RF index k.
inline const std::vector<int>& scheme_mask(const SamplingScheme& scheme, int k) {
  if (k < 0 || k >= scheme.n_rf || k >= static_cast<int>(scheme.assignments.size()))
    throw InvalidArgument("scheme_mask: RF index " + std::to_string(k) + " out of range");
  return scheme.assignments[k];
}

// Throws InvalidScheme unless every one of n_q directions is encoded at least
// once and no (k, j) pair repeats.
inline void validate_scheme(const SamplingScheme& scheme, int n_q) {
  if (scheme.n_rf <= 0 || static_cast<int>(scheme.assignments.size()) != scheme.n_rf)
    throw InvalidScheme("scheme: assignment list count does not match n_rf");
  std::vector<int> covered(n_q, 0);
  for (const auto& a : scheme.assignments) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] < 0 || a[i] >= n_q) throw InvalidScheme("scheme: q index " + std::to_string(a[i]) + " out of range");
      if (i > 0 && a[i] <= a[i - 1]) throw InvalidScheme("scheme: assignments must be strictly ascending");
      covered[a[i]] = 1;
    }
  }
  for (int j = 0; j < n_q; ++j)
    if (!covered[j]) throw InvalidScheme("scheme: q index " + std::to_string(j) + " is never encoded");
}

}  // namespace gsr

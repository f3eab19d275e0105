#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gsr/error.hpp"
#include "gsr/volume.hpp"

namespace gsr {

// Isotropic 3-D total variation with forward differences; the difference
// across the last plane of each axis is zero (reflective boundary).
inline double total_variation(std::span<const double> u, const Dims& d) {
  const std::size_t sx = 1, sy = static_cast<std::size_t>(d[0]), sz = sy * d[1];
  double tv = 0.0;
  std::size_t i = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x, ++i) {
        const double gx = x + 1 < d[0] ? u[i + sx] - u[i] : 0.0;
        const double gy = y + 1 < d[1] ? u[i + sy] - u[i] : 0.0;
        const double gz = z + 1 < d[2] ? u[i + sz] - u[i] : 0.0;
        tv += std::sqrt(gx * gx + gy * gy + gz * gz);
      }
  return tv;
}

namespace detail {

struct DualField {
  std::vector<double> x, y, z;
  explicit DualField(std::size_t n = 0) : x(n, 0.0), y(n, 0.0), z(n, 0.0) {}
};

// div = -grad^T for the forward-difference gradient above.
inline void divergence(const DualField& p, const Dims& d, std::vector<double>& out) {
  const std::size_t sy = static_cast<std::size_t>(d[0]), sz = sy * d[1];
  std::size_t i = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x, ++i) {
        double v = 0.0;
        if (x + 1 < d[0]) v += p.x[i];
        if (x > 0) v -= p.x[i - 1];
        if (y + 1 < d[1]) v += p.y[i];
        if (y > 0) v -= p.y[i - sy];
        if (z + 1 < d[2]) v += p.z[i];
        if (z > 0) v -= p.z[i - sz];
        out[i] = v;
      }
}

}  // namespace detail

// Largest eigenvalue bound of grad^T grad in 3-D.
inline constexpr double kTvLipschitz = 12.0;

// prox of weight * TV at f: argmin_z 1/2 ||z - f||^2 + weight * TV(z).
// Accelerated projected gradient on the dual (Chambolle's dual problem with
// Nesterov momentum), `iterations` steps of size 1/12.
inline std::vector<double> tv_prox(std::span<const double> f, const Dims& d, double weight, int iterations) {
  if (weight < 0.0) throw InvalidArgument("tv_prox: weight must be non-negative");
  const std::size_t n = f.size();
  std::vector<double> out(f.begin(), f.end());
  if (weight == 0.0 || iterations <= 0) return out;
  const std::size_t sy = static_cast<std::size_t>(d[0]), sz = sy * d[1];
  detail::DualField p(n), p_prev(n), r(n);
  std::vector<double> div(n), g(n);
  double t = 1.0;
  const double step = 1.0 / kTvLipschitz;
  for (int it = 0; it < iterations; ++it) {
    // g = div r - f / weight; gradient step p = r + step * grad g, then
    // project each dual vector onto the unit ball.
    detail::divergence(r, d, div);
    for (std::size_t i = 0; i < n; ++i) g[i] = div[i] - f[i] / weight;
    std::swap(p_prev, p);
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x, ++i) {
          const double px = r.x[i] + step * (x + 1 < d[0] ? g[i + 1] - g[i] : 0.0);
          const double py = r.y[i] + step * (y + 1 < d[1] ? g[i + sy] - g[i] : 0.0);
          const double pz = r.z[i] + step * (z + 1 < d[2] ? g[i + sz] - g[i] : 0.0);
          const double scale = std::max(1.0, std::sqrt(px * px + py * py + pz * pz));
          p.x[i] = px / scale;
          p.y[i] = py / scale;
          p.z[i] = pz / scale;
        }
    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    const double beta = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < n; ++j) {
      r.x[j] = p.x[j] + beta * (p.x[j] - p_prev.x[j]);
      r.y[j] = p.y[j] + beta * (p.y[j] - p_prev.y[j]);
      r.z[j] = p.z[j] + beta * (p.z[j] - p_prev.z[j]);
    }
    t = t_next;
  }
  detail::divergence(p, d, div);
  for (std::size_t i = 0; i < n; ++i) out[i] = f[i] - weight * div[i];
  return out;
}

}  // namespace gsr

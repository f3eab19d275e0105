#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gsr/tv.hpp"

namespace gsr_test {

using gsr::Dims;

inline double prox_objective(const std::vector<double>& f, const std::vector<double>& z, const Dims& d, double w) {
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += 0.5 * (f[i] - z[i]) * (f[i] - z[i]);
  return s + w * gsr::total_variation(z, d);
}

// Plain projected gradient on the dual, no momentum.
inline std::vector<double> reference_prox(const std::vector<double>& f, const Dims& d, double w, int iterations) {
  const std::size_t n = f.size(), sy = d[0], sz = sy * d[1];
  std::vector<double> px(n, 0.0), py(n, 0.0), pz(n, 0.0), div(n), g(n);
  auto divergence = [&] {
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x, ++i)
          div[i] = (x + 1 < d[0] ? px[i] : 0.0) - (x > 0 ? px[i - 1] : 0.0) + (y + 1 < d[1] ? py[i] : 0.0) -
                   (y > 0 ? py[i - sy] : 0.0) + (z + 1 < d[2] ? pz[i] : 0.0) - (z > 0 ? pz[i - sz] : 0.0);
  };
  for (int it = 0; it < iterations; ++it) {
    divergence();
    for (std::size_t i = 0; i < n; ++i) g[i] = div[i] - f[i] / w;
    std::size_t i = 0;
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x, ++i) {
          const double ax = px[i] + (x + 1 < d[0] ? g[i + 1] - g[i] : 0.0) / 12.0;
          const double ay = py[i] + (y + 1 < d[1] ? g[i + sy] - g[i] : 0.0) / 12.0;
          const double az = pz[i] + (z + 1 < d[2] ? g[i + sz] - g[i] : 0.0) / 12.0;
          const double s = std::max(1.0, std::sqrt(ax * ax + ay * ay + az * az));
          px[i] = ax / s;
          py[i] = ay / s;
          pz[i] = az / s;
        }
  }
  divergence();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f[i] - w * div[i];
  return out;
}

}  // namespace gsr_test

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gsr/error.hpp"

namespace gsr {

using Dims = std::array<int, 3>;
using VoxelSize = std::array<double, 3>;

// A 4-D set of b0-normalized diffusion signals: a voxel grid times a list of
// q-space samples. Storage is x fastest, then y, then z, then q, which is
// also the on-disk order. Viewed as a matrix it is the N x N_q array whose
// row n is the signal profile of voxel n.
struct DwiVolumeSet {
  Dims dims{0, 0, 0};
  VoxelSize voxel_size{1.0, 1.0, 1.0};
  int n_q = 0;
  std::vector<double> values;

  DwiVolumeSet() = default;
  DwiVolumeSet(Dims d, int nq, VoxelSize vs = {1.0, 1.0, 1.0})
      : dims(d), voxel_size(vs), n_q(nq) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0 || nq <= 0)
      throw InvalidArgument("volume dims and n_q must be strictly positive");
    values.assign(voxel_count() * static_cast<std::size_t>(nq), 0.0);
  }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t size() const { return values.size(); }

  std::size_t voxel_index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
  }
  std::size_t index(int x, int y, int z, int q) const {
    return voxel_index(x, y, z) + voxel_count() * static_cast<std::size_t>(q);
  }

  double& at(int x, int y, int z, int q) { return values[index(x, y, z, q)]; }
  double at(int x, int y, int z, int q) const { return values[index(x, y, z, q)]; }

  Eigen::Map<Eigen::MatrixXd> matrix() {
    return {values.data(), static_cast<Eigen::Index>(voxel_count()), n_q};
  }
  Eigen::Map<const Eigen::MatrixXd> matrix() const {
    return {values.data(), static_cast<Eigen::Index>(voxel_count()), n_q};
  }

  // Contiguous view of one q-volume.
  Eigen::Map<Eigen::VectorXd> volume(int q) {
    return {values.data() + voxel_count() * q, static_cast<Eigen::Index>(voxel_count())};
  }
  Eigen::Map<const Eigen::VectorXd> volume(int q) const {
    return {values.data() + voxel_count() * q, static_cast<Eigen::Index>(voxel_count())};
  }

  Eigen::VectorXd voxel_signal(std::size_t voxel) const {
    return matrix().row(static_cast<Eigen::Index>(voxel)).transpose();
  }

  bool same_shape(const DwiVolumeSet& other) const {
    return dims == other.dims && n_q == other.n_q;
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_same_shape(const DwiVolumeSet& a, const DwiVolumeSet& b, const std::string& what) {
  if (!a.same_shape(b)) throw InvalidArgument(what + ": volume shapes differ");
}

}  // namespace gsr

#include "fieldmol/field.hpp"

#include <cmath>

#include "fieldmol/error.hpp"
#include "fieldmol/parallel.hpp"
#include "fieldmol/rng.hpp"

namespace fieldmol {

namespace {

constexpr double kRadiusScale = 0.93;  // fixed constant of the occupancy formula

int require_channel(const Molecule& mol, const FieldSpec& spec, int atom) {
  const int c = spec.channel_of(mol.elements[atom]);
  if (c < 0)
    throw std::invalid_argument("element " + std::string(symbol_of(mol.elements[atom])) +
                                " missing from channel order");
  return c;
}

}  // namespace

void FieldSpec::validate() const {
  if (radius <= 0) throw ConfigError("field.radius", "must be > 0");
  if (box_side <= 0) throw ConfigError("field.box_side", "must be > 0");
  if (resolution <= 0) throw ConfigError("field.resolution", "must be > 0");
  const double ratio = box_side / resolution;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 || std::lround(rounded) % 2 != 0)
    throw ConfigError("field.resolution", "box_side/resolution must be an even integer");
  if (channels.empty()) throw ConfigError("field.channels", "must not be empty");
  for (std::size_t i = 0; i < channels.size(); ++i)
    for (std::size_t j = i + 1; j < channels.size(); ++j)
      if (channels[i] == channels[j])
        throw ConfigError("field.channels", "duplicate channel");
}

Eigen::VectorXd occupancy(const Molecule& mol, const FieldSpec& spec, const Eigen::Vector3d& x) {
  if (!x.allFinite()) throw std::invalid_argument("non-finite evaluation point");
  const double s = kRadiusScale * spec.radius;
  Eigen::VectorXd miss = Eigen::VectorXd::Ones(spec.channel_count());
  for (int a = 0; a < mol.size(); ++a) {
    const int c = require_channel(mol, spec, a);
    const double d2 = (x - mol.coords[a]).squaredNorm();
    miss[c] *= 1.0 - std::exp(-d2 / (s * s));
  }
  return Eigen::VectorXd::Ones(spec.channel_count()) - miss;
}

Eigen::Vector3d occupancy_grad(const Molecule& mol, const FieldSpec& spec,
                               const Eigen::Vector3d& x, int channel) {
  const double s = kRadiusScale * spec.radius;
  // v = 1 - prod(1 - g_i) with g_i = exp(-|x - x_i|^2 / s^2)
  std::vector<int> atoms;
  std::vector<double> g;
  for (int a = 0; a < mol.size(); ++a) {
    if (require_channel(mol, spec, a) != channel) continue;
    atoms.push_back(a);
    g.push_back(std::exp(-(x - mol.coords[a]).squaredNorm() / (s * s)));
  }
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    double rest = 1.0;
    for (std::size_t j = 0; j < atoms.size(); ++j)
      if (j != i) rest *= 1.0 - g[j];
    grad += rest * g[i] * (-2.0 / (s * s)) * (x - mol.coords[atoms[i]]);
  }
  return grad;
}

Eigen::MatrixXf occupancy_batch(const Molecule& mol, const FieldSpec& spec,
                                const PointMatrix& normalized_points) {
  const int m = static_cast<int>(normalized_points.rows());
  const double half = spec.box_side / 2.0;
  const double s = kRadiusScale * spec.radius;
  Eigen::MatrixXd miss = Eigen::MatrixXd::Ones(m, spec.channel_count());
  std::vector<int> channel_of_atom(mol.size());
  for (int a = 0; a < mol.size(); ++a) channel_of_atom[a] = require_channel(mol, spec, a);
  for (int p = 0; p < m; ++p) {
    const Eigen::Vector3d x(normalized_points(p, 0) * half, normalized_points(p, 1) * half,
                            normalized_points(p, 2) * half);
    for (int a = 0; a < mol.size(); ++a) {
      const double d2 = (x - mol.coords[a]).squaredNorm();
      miss(p, channel_of_atom[a]) *= 1.0 - std::exp(-d2 / (s * s));
    }
  }
  return (1.0 - miss.array()).cast<float>();
}

PointBatch sample_training_points(const Molecule& mol, const FieldSpec& spec, int n,
                                  std::uint64_t seed) {
  if (n % 2 != 0) throw std::invalid_argument("point count must be even");
  mol.validate();
  Rng rng(seed);
  const int g = spec.grid_dim();
  const double half = spec.box_side / 2.0;
  PointBatch batch;
  batch.coords.resize(n, 3);

  // First half: voxel centers of the full-resolution grid, uniformly.
  const int uniform_count = n / 2;
  for (int p = 0; p < uniform_count; ++p)
    for (int axis = 0; axis < 3; ++axis)
      batch.coords(p, axis) =
          static_cast<float>(spec.voxel_center_ang(static_cast<int>(rng.uniform_int(g))) / half);

  // Second half: spread equally across 3x3x3-voxel cubes centered on each
  // atom (side 3 * resolution, so at most 1.5 voxels away per axis).
  const double cube_half = 1.5 * spec.resolution;
  for (int p = uniform_count; p < n; ++p) {
    const int atom = (p - uniform_count) % mol.size();
    for (int axis = 0; axis < 3; ++axis) {
      const double ang = mol.coords[atom][axis] + rng.uniform(-cube_half, cube_half);
      batch.coords(p, axis) = static_cast<float>(ang / half);
    }
  }

  batch.targets = occupancy_batch(mol, spec, batch.coords);
  return batch;
}

FieldFn ground_truth_field(const Molecule& mol, const FieldSpec& spec) {
  return [mol, spec](const PointMatrix& pts) { return occupancy_batch(mol, spec, pts); };
}

VoxelGrid render_voxel_grid(const FieldFn& field, const FieldSpec& spec) {
  const int g = spec.grid_dim();
  const int nc = spec.channel_count();
  const double half = spec.box_side / 2.0;
  VoxelGrid grid;
  grid.channels = nc;
  grid.dim = g;
  grid.data.assign(static_cast<std::size_t>(nc) * g * g * g, 0.0f);

  // One slab (fixed i) per work item; writes are disjoint.
  parallel_for(0, g, [&](int i) {
    PointMatrix pts(g * g, 3);
    const float xi = static_cast<float>(spec.voxel_center_ang(i) / half);
    int row = 0;
    for (int j = 0; j < g; ++j) {
      const float xj = static_cast<float>(spec.voxel_center_ang(j) / half);
      for (int k = 0; k < g; ++k, ++row) {
        pts(row, 0) = xi;
        pts(row, 1) = xj;
        pts(row, 2) = static_cast<float>(spec.voxel_center_ang(k) / half);
      }
    }
    const Eigen::MatrixXf values = field(pts);
    if (!values.allFinite()) throw NumericError("non-finite field output while rendering");
    row = 0;
    for (int j = 0; j < g; ++j)
      for (int k = 0; k < g; ++k, ++row)
        for (int c = 0; c < nc; ++c) grid.at(c, i, j, k) = values(row, c);
  });
  return grid;
}

VoxelGrid render_ground_truth(const Molecule& mol, const FieldSpec& spec) {
  return render_voxel_grid(ground_truth_field(mol, spec), spec);
}

void require_fits(const Molecule& mol, const FieldSpec& spec) {
  auto [lo, hi] = mol.bounding_box();
  const Eigen::Vector3d extent = hi - lo;
  if ((extent.array() > spec.box_side).any())
    throw std::invalid_argument(
        "molecule '" + mol.name + "' does not fit the field box: extent " +
        std::to_string(extent.maxCoeff()) + " A exceeds box side " +
        std::to_string(spec.box_side) + " A");
}

}  // namespace fieldmol

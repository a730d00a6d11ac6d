#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "fieldmol/molecule.hpp"

namespace fieldmol {

using PointMatrix = Eigen::Matrix<float, Eigen::Dynamic, 3>;

/// Geometry of the occupancy field: atom radius, channel layout, bounding
/// cube and voxel resolution. The neural field consumes coordinates in
/// [-1,1]^3 obtained by dividing centered Angstrom coordinates by box_side/2.
struct FieldSpec {
  double radius = 0.5;  // A, shared by all atom types
  std::vector<Element> channels = {Element::C, Element::H, Element::O, Element::N};
  double box_side = 12.0;   // A
  double resolution = 0.25;  // A per voxel

  int channel_count() const { return static_cast<int>(channels.size()); }
  int grid_dim() const { return static_cast<int>(std::lround(box_side / resolution)); }

  /// -1 when the element has no channel.
  int channel_of(Element e) const {
    for (int c = 0; c < channel_count(); ++c)
      if (channels[c] == e) return c;
    return -1;
  }

  double to_normalized(double ang) const { return ang / (box_side / 2.0); }
  double to_angstrom(double normalized) const { return normalized * (box_side / 2.0); }

  /// Voxel-center coordinate along one axis, in centered Angstrom.
  double voxel_center_ang(int i) const { return -box_side / 2.0 + (i + 0.5) * resolution; }

  /// Throws ConfigError when radius <= 0 or box_side/resolution is not an
  /// even integer.
  void validate() const;
};

/// Per-atom-type occupancy of Eq-style Gaussian blobs at x (Angstrom,
/// molecule-centered frame): channel a = 1 - prod_i (1 - exp(-(d_i/(0.93 r))^2)).
/// Throws std::invalid_argument when an element of mol has no channel.
Eigen::VectorXd occupancy(const Molecule& mol, const FieldSpec& spec, const Eigen::Vector3d& x);

/// Spatial gradient of one occupancy channel at x.
Eigen::Vector3d occupancy_grad(const Molecule& mol, const FieldSpec& spec,
                               const Eigen::Vector3d& x, int channel);

/// Occupancy targets for a batch of normalized points, one row per point.
Eigen::MatrixXf occupancy_batch(const Molecule& mol, const FieldSpec& spec,
                                const PointMatrix& normalized_points);

/// Training points: coords in the normalized cube, targets in [0,1].
struct PointBatch {
  PointMatrix coords;
  Eigen::MatrixXf targets;
};

/// n/2 points drawn uniformly from the voxel-center grid plus n/2 spread
/// equally across 3x3x3-voxel cubes centered on each atom. n must be even.
PointBatch sample_training_points(const Molecule& mol, const FieldSpec& spec, int n,
                                  std::uint64_t seed);

/// channels x G x G x G tensor, flattened c-major.
struct VoxelGrid {
  int channels = 0;
  int dim = 0;
  std::vector<float> data;

  float at(int c, int i, int j, int k) const {
    return data[((static_cast<std::size_t>(c) * dim + i) * dim + j) * dim + k];
  }
  float& at(int c, int i, int j, int k) {
    return data[((static_cast<std::size_t>(c) * dim + i) * dim + j) * dim + k];
  }
};

/// Batched field evaluator: rows of normalized points -> rows of channel
/// values. Both the ground-truth occupancy and the learned field fit here.
using FieldFn = std::function<Eigen::MatrixXf(const PointMatrix&)>;

FieldFn ground_truth_field(const Molecule& mol, const FieldSpec& spec);

/// Evaluates the field at every voxel center. Throws NumericError on
/// non-finite field output.
VoxelGrid render_voxel_grid(const FieldFn& field, const FieldSpec& spec);

/// Ground-truth occupancy rendered directly (no network).
VoxelGrid render_ground_truth(const Molecule& mol, const FieldSpec& spec);

/// Throws std::invalid_argument when the molecule's bounding box exceeds the
/// field box; call with a centered molecule.
void require_fits(const Molecule& mol, const FieldSpec& spec);

}  // namespace fieldmol

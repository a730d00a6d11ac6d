#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "fieldmol/field.hpp"
#include "fieldmol/mfn.hpp"

namespace fieldmol {

struct Peak {
  int channel;
  int ix, iy, iz;
  float value;
};

/// Local maxima of a rendered grid: value >= threshold and strictly greater
/// than every existing 26-neighbor, with ties broken toward the
/// lexicographically smallest voxel index so a flat plateau yields exactly
/// one peak. Border voxels compare against their existing neighbors only.
std::vector<Peak> find_peaks(const VoxelGrid& grid, float threshold);

/// Value (and gradient, when grad is non-null) of one field channel at a
/// point in the centered Angstrom frame.
using ChannelOracle =
    std::function<double(int channel, const Eigen::Vector3d& x, Eigen::Vector3d* grad)>;

ChannelOracle mfn_channel_oracle(const MfnParams& params, const Eigen::VectorXf& code,
                                 const FieldSpec& spec);
ChannelOracle occupancy_channel_oracle(const Molecule& mol, const FieldSpec& spec);

struct RefineOptions {
  double radius = 0.5;  // A; ball constraint around the voxel center
  int max_iters = 50;
};

struct RefineStats {
  int fallback_count = 0;  // refinements that failed and kept the voxel center
  double mean_displacement = 0.0;
  double max_displacement = 0.0;
};

/// Ball-constrained continuous refinement of peak coordinates against the
/// field: per peak, maximize the peak's channel with L-BFGS inside
/// ||x - x0|| <= radius. Failed refinements fall back to the voxel center.
std::vector<Eigen::Vector3d> refine_coords(const ChannelOracle& field,
                                           const std::vector<Peak>& peaks, const FieldSpec& spec,
                                           const RefineOptions& opts = {},
                                           RefineStats* stats = nullptr);

struct DecodeOptions {
  float threshold = 0.3f;  // atom centers sit near 1; learned fields undershoot
  bool refine = true;
  RefineOptions refine_opts;
};

struct DecodeReport {
  std::vector<int> peaks_per_channel;
  RefineStats refine;
};

/// A decoded field with no peaks above threshold.
class DecodeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Peak finding + optional refinement on an already-rendered grid.
Molecule molecule_from_grid(const VoxelGrid& grid, const ChannelOracle& field,
                            const FieldSpec& spec, const DecodeOptions& opts = {},
                            DecodeReport* report = nullptr);

/// Full code -> molecule decode: render the learned field, find peaks,
/// refine, assemble. The code is in denormalized space.
Molecule decode_code(const Eigen::VectorXf& code, const MfnParams& params, const FieldSpec& spec,
                     const DecodeOptions& opts = {}, DecodeReport* report = nullptr);

}  // namespace fieldmol

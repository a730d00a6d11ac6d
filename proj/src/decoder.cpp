#include "fieldmol/decoder.hpp"

#include <array>
#include <cmath>

#include "fieldmol/optim.hpp"
#include "fieldmol/parallel.hpp"
#include "fieldmol/trainer.hpp"

namespace fieldmol {

std::vector<Peak> find_peaks(const VoxelGrid& grid, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f))
    throw std::invalid_argument("find_peaks: threshold must be in (0, 1)");
  std::vector<Peak> peaks;
  const int g = grid.dim;
  for (int c = 0; c < grid.channels; ++c) {
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        for (int k = 0; k < g; ++k) {
          const float v = grid.at(c, i, j, k);
          if (v < threshold) continue;
          bool is_peak = true;
          for (int di = -1; di <= 1 && is_peak; ++di) {
            const int ni = i + di;
            if (ni < 0 || ni >= g) continue;
            for (int dj = -1; dj <= 1 && is_peak; ++dj) {
              const int nj = j + dj;
              if (nj < 0 || nj >= g) continue;
              for (int dk = -1; dk <= 1 && is_peak; ++dk) {
                const int nk = k + dk;
                if (nk < 0 || nk >= g) continue;
                if (di == 0 && dj == 0 && dk == 0) continue;
                const float nv = grid.at(c, ni, nj, nk);
                if (nv > v) is_peak = false;
                // Plateau: only the lexicographically smallest voxel wins.
                if (nv == v && std::array<int, 3>{ni, nj, nk} < std::array<int, 3>{i, j, k})
                  is_peak = false;
              }
            }
          }
          if (is_peak) peaks.push_back({c, i, j, k, v});
        }
      }
    }
  }
  return peaks;
}

ChannelOracle mfn_channel_oracle(const MfnParams& params, const Eigen::VectorXf& code,
                                 const FieldSpec& spec) {
  const double half = spec.box_side / 2.0;
  return [params, code, half](int channel, const Eigen::Vector3d& x, Eigen::Vector3d* grad) {
    Eigen::Matrix<float, Eigen::Dynamic, 3> pts(1, 3);
    pts(0, 0) = static_cast<float>(x.x() / half);
    pts(0, 1) = static_cast<float>(x.y() / half);
    pts(0, 2) = static_cast<float>(x.z() / half);
    if (!grad) {
      return static_cast<double>(mfn_forward(params, pts, code)(0, channel));
    }
    MfnCache cache;
    const Eigen::MatrixXf out = mfn_forward(params, pts, code, &cache);
    Eigen::MatrixXf dout = Eigen::MatrixXf::Zero(1, params.cfg.out_channels);
    dout(0, channel) = 1.0f;
    Eigen::Matrix<float, Eigen::Dynamic, 3> dpts =
        Eigen::Matrix<float, Eigen::Dynamic, 3>::Zero(1, 3);
    mfn_backward_spatial(params, cache, dout, dpts);
    // chain rule through the [-1,1] normalization
    *grad = dpts.row(0).transpose().cast<double>() / half;
    return static_cast<double>(out(0, channel));
  };
}

ChannelOracle occupancy_channel_oracle(const Molecule& mol, const FieldSpec& spec) {
  return [mol, spec](int channel, const Eigen::Vector3d& x, Eigen::Vector3d* grad) {
    if (grad) *grad = occupancy_grad(mol, spec, x, channel);
    return occupancy(mol, spec, x)(channel);
  };
}

std::vector<Eigen::Vector3d> refine_coords(const ChannelOracle& field,
                                           const std::vector<Peak>& peaks, const FieldSpec& spec,
                                           const RefineOptions& opts, RefineStats* stats) {
  std::vector<Eigen::Vector3d> refined(peaks.size());
  std::vector<double> displacement(peaks.size(), 0.0);
  std::vector<int> fallbacks(peaks.size(), 0);

  parallel_for(0, static_cast<int>(peaks.size()), [&](int i) {
    const Peak& p = peaks[i];
    const Eigen::Vector3d center(spec.voxel_center_ang(p.ix), spec.voxel_center_ang(p.iy),
                                 spec.voxel_center_ang(p.iz));
    BallOracle oracle = [&field, &p](const Eigen::Vector3d& x, Eigen::Vector3d* g) {
      return field(p.channel, x, g);
    };
    const LbfgsResult r =
        lbfgs_maximize(oracle, center, center, opts.radius, opts.max_iters);
    if (r.warning) {
      refined[i] = center;
      fallbacks[i] = 1;
    } else {
      refined[i] = r.x;
      displacement[i] = (r.x - center).norm();
    }
  });

  if (stats) {
    stats->fallback_count = 0;
    stats->mean_displacement = 0;
    stats->max_displacement = 0;
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      stats->fallback_count += fallbacks[i];
      stats->mean_displacement += displacement[i];
      stats->max_displacement = std::max(stats->max_displacement, displacement[i]);
    }
    if (!peaks.empty()) stats->mean_displacement /= static_cast<double>(peaks.size());
  }
  return refined;
}

Molecule molecule_from_grid(const VoxelGrid& grid, const ChannelOracle& field,
                            const FieldSpec& spec, const DecodeOptions& opts,
                            DecodeReport* report) {
  const std::vector<Peak> peaks = find_peaks(grid, opts.threshold);
  if (report) {
    report->peaks_per_channel.assign(grid.channels, 0);
    for (const auto& p : peaks) report->peaks_per_channel[p.channel]++;
  }
  if (peaks.empty()) throw DecodeError("decoded field has no peaks above threshold");

  std::vector<Eigen::Vector3d> coords;
  if (opts.refine) {
    coords = refine_coords(field, peaks, spec, opts.refine_opts,
                           report ? &report->refine : nullptr);
  } else {
    coords.reserve(peaks.size());
    for (const auto& p : peaks)
      coords.emplace_back(spec.voxel_center_ang(p.ix), spec.voxel_center_ang(p.iy),
                          spec.voxel_center_ang(p.iz));
  }

  Molecule mol;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    mol.elements.push_back(spec.channels[peaks[i].channel]);
    mol.coords.push_back(coords[i]);
  }
  return mol;
}

Molecule decode_code(const Eigen::VectorXf& code, const MfnParams& params, const FieldSpec& spec,
                     const DecodeOptions& opts, DecodeReport* report) {
  const VoxelGrid grid = render_voxel_grid(learned_field(params, code), spec);
  return molecule_from_grid(grid, mfn_channel_oracle(params, code, spec), spec, opts, report);
}

}  // namespace fieldmol

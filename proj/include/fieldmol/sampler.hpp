#pragma once

#include <Eigen/Core>
#include <functional>

#include "fieldmol/rng.hpp"
#include "fieldmol/trainer.hpp"

namespace fieldmol {

/// Batched denoiser / score evaluators over rows of codes in normalized
/// space. Wrapping them as functions keeps the sampler testable against
/// closed-form oracles.
using DenoiseFn = std::function<Eigen::MatrixXf(const Eigen::MatrixXf&)>;
using ScoreFn = std::function<Eigen::MatrixXf(const Eigen::MatrixXf&)>;

struct SamplerConfig {
  double sigma = 1.2;  // must equal the denoiser's training sigma
  double gamma = 1.0;  // friction
  double delta = 0.6;  // discretization step, sigma/2 by default
  long steps = 1000;
  int chains = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ChainState {
  Eigen::VectorXf y;  // position
  Eigen::VectorXf u;  // velocity
  long step = 0;
};

/// Chain initialization: per coordinate, uniform over the global [min, max]
/// of the training codes plus N(0, sigma^2); u0 = 0. Draws 2d values from
/// rng (d uniforms, then d normals).
ChainState init_chain(float code_min, float code_max, double sigma, int dim, Rng& rng);

struct WalkOptions {
  bool disable_noise = false;  // test hook for algebraic checks; not on the CLI
};

/// k steps of the ABOBA-discretized underdamped Langevin walk:
///   y half-step, score at the midpoint, velocity quarter-step, friction +
///   noise + second quarter-step with the same score, y half-step.
/// Throws NumericError (with the step index) if the state leaves the finite
/// range.
void walk(ChainState& state, const ScoreFn& score, const SamplerConfig& cfg, long k, Rng& rng,
          const WalkOptions& opts = {});

/// Single denoising step; the chain itself is untouched and may keep walking.
Eigen::VectorXf jump(const ChainState& state, const DenoiseFn& denoise);

/// n chains in lockstep (score batched across chains), each with its own
/// RNG stream substream(seed, chain): init -> walk(steps) -> jump. Returns
/// normalized-space codes, one row per chain.
Eigen::MatrixXf sample_batch_normalized(int n, int dim, const SamplerConfig& cfg,
                                        const DenoiseFn& denoise, const ScoreFn& score,
                                        float code_min, float code_max);

/// Same, denormalized with the stored code statistics.
Eigen::MatrixXf sample_batch(int n, const SamplerConfig& cfg, const DenoiseFn& denoise,
                             const ScoreFn& score, const CodeSet& stats);

}  // namespace fieldmol

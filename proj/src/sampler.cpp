#include "fieldmol/sampler.hpp"

#include <cmath>

#include "fieldmol/error.hpp"

namespace fieldmol {

void SamplerConfig::validate() const {
  if (sigma <= 0) throw ConfigError("sampler.sigma", "must be > 0");
  if (gamma <= 0) throw ConfigError("sampler.gamma", "must be > 0");
  if (delta <= 0) throw ConfigError("sampler.delta", "must be > 0");
  if (steps < 0) throw ConfigError("sampler.steps", "must be >= 0");
  if (chains < 1) throw ConfigError("sampler.chains", "must be >= 1");
}

ChainState init_chain(float code_min, float code_max, double sigma, int dim, Rng& rng) {
  if (code_min > code_max)
    throw std::invalid_argument("init_chain: code stats missing or inverted (min > max)");
  ChainState s;
  s.y.resize(dim);
  s.u = Eigen::VectorXf::Zero(dim);
  for (int j = 0; j < dim; ++j)
    s.y(j) = static_cast<float>(rng.uniform(code_min, code_max));
  for (int j = 0; j < dim; ++j)
    s.y(j) += static_cast<float>(sigma * rng.normal());
  return s;
}

namespace {

struct StepCoefs {
  float half_delta;
  float friction;     // exp(-gamma delta)
  float noise_scale;  // sqrt(1 - exp(-2 gamma delta))
};

StepCoefs coefs(const SamplerConfig& cfg) {
  return {static_cast<float>(cfg.delta / 2.0), static_cast<float>(std::exp(-cfg.gamma * cfg.delta)),
          static_cast<float>(std::sqrt(1.0 - std::exp(-2.0 * cfg.gamma * cfg.delta)))};
}

}  // namespace

void walk(ChainState& state, const ScoreFn& score, const SamplerConfig& cfg, long k, Rng& rng,
          const WalkOptions& opts) {
  cfg.validate();
  const auto cf = coefs(cfg);
  const int d = static_cast<int>(state.y.size());
  Eigen::MatrixXf row(1, d);
  for (long step = 0; step < k; ++step) {
    state.y += cf.half_delta * state.u;  // y_{k+1/2}
    row.row(0) = state.y.transpose();
    const Eigen::MatrixXf g = score(row);
    state.u += cf.half_delta * g.row(0).transpose();
    state.u *= cf.friction;
    state.u += cf.half_delta * g.row(0).transpose();
    if (!opts.disable_noise)
      for (int j = 0; j < d; ++j)
        state.u(j) += cf.noise_scale * static_cast<float>(rng.normal());
    state.y += cf.half_delta * state.u;  // y_{k+1}
    ++state.step;
    if (!state.y.allFinite() || !state.u.allFinite())
      throw NumericError("walk: non-finite chain state at step " + std::to_string(state.step));
  }
}

Eigen::VectorXf jump(const ChainState& state, const DenoiseFn& denoise) {
  Eigen::MatrixXf row(1, state.y.size());
  row.row(0) = state.y.transpose();
  return denoise(row).row(0).transpose();
}

Eigen::MatrixXf sample_batch_normalized(int n, int dim, const SamplerConfig& cfg,
                                        const DenoiseFn& denoise, const ScoreFn& score,
                                        float code_min, float code_max) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("sample_batch: need n >= 1");
  const auto cf = coefs(cfg);

  std::vector<Rng> rngs;
  rngs.reserve(n);
  Eigen::MatrixXf y(n, dim), u = Eigen::MatrixXf::Zero(n, dim);
  for (int i = 0; i < n; ++i) {
    rngs.emplace_back(substream(cfg.seed, static_cast<std::uint64_t>(i)));
    const ChainState s = init_chain(code_min, code_max, cfg.sigma, dim, rngs.back());
    y.row(i) = s.y.transpose();
  }

  for (long step = 0; step < cfg.steps; ++step) {
    y += cf.half_delta * u;
    const Eigen::MatrixXf g = score(y);
    u += cf.half_delta * g;
    u *= cf.friction;
    u += cf.half_delta * g;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j)
        u(i, j) += cf.noise_scale * static_cast<float>(rngs[i].normal());
    y += cf.half_delta * u;
    if (!y.allFinite() || !u.allFinite()) {
      for (int i = 0; i < n; ++i)
        if (!y.row(i).allFinite() || !u.row(i).allFinite())
          throw NumericError("sample_batch: chain " + std::to_string(i) +
                             " non-finite at step " + std::to_string(step + 1));
    }
  }
  return denoise(y);
}

Eigen::MatrixXf sample_batch(int n, const SamplerConfig& cfg, const DenoiseFn& denoise,
                             const ScoreFn& score, const CodeSet& stats) {
  if (!stats.normalized())
    throw std::invalid_argument("sample_batch: code normalization stats missing");
  const int dim = static_cast<int>(stats.mean.size());
  Eigen::MatrixXf z =
      sample_batch_normalized(n, dim, cfg, denoise, score, stats.code_min, stats.code_max);
  for (int i = 0; i < z.rows(); ++i)
    z.row(i) = z.row(i).cwiseProduct(stats.stdev.transpose()) + stats.mean.transpose();
  return z;
}

}  // namespace fieldmol

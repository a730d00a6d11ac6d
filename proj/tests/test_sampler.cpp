#include <doctest.h>

#include "fieldmol/sampler.hpp"

using namespace fieldmol;

namespace {

// Closed-form oracle for codes z ~ N(0, I): zhat(y) = y / (1 + sigma^2),
// score g(y) = -y / (1 + sigma^2).
DenoiseFn gaussian_denoiser(double sigma) {
  const float shrink = static_cast<float>(1.0 / (1.0 + sigma * sigma));
  return [shrink](const Eigen::MatrixXf& y) { return Eigen::MatrixXf(y * shrink); };
}

ScoreFn gaussian_score(double sigma) {
  const float k = static_cast<float>(-1.0 / (1.0 + sigma * sigma));
  return [k](const Eigen::MatrixXf& y) { return Eigen::MatrixXf(y * k); };
}

ScoreFn zero_score() {
  return [](const Eigen::MatrixXf& y) { return Eigen::MatrixXf(Eigen::MatrixXf::Zero(y.rows(), y.cols())); };
}

}  // namespace

TEST_CASE("init_chain") {
  SUBCASE("degenerate stats and sigma give exactly zero") {
    Rng rng(1);
    ChainState s = init_chain(0.0f, 0.0f, 0.0, 8, rng);
    CHECK(s.y.norm() == 0.0f);
    CHECK(s.u.norm() == 0.0f);
  }
  SUBCASE("same seed gives identical inits") {
    Rng a(42), b(42);
    ChainState sa = init_chain(-1, 2, 0.7, 16, a);
    ChainState sb = init_chain(-1, 2, 0.7, 16, b);
    CHECK(sa.y == sb.y);
  }
  SUBCASE("empirical mean matches (min+max)/2 within 3 standard errors") {
    const float lo = -1.0f, hi = 3.0f;
    const double sigma = 0.5;
    const int trials = 100000, d = 4;
    Rng rng(7);
    double sum = 0;
    for (int t = 0; t < trials; ++t) {
      ChainState s = init_chain(lo, hi, sigma, d, rng);
      sum += s.y.sum();
    }
    const double mean = sum / (static_cast<double>(trials) * d);
    const double var = (hi - lo) * (hi - lo) / 12.0 + sigma * sigma;
    const double se = std::sqrt(var / (static_cast<double>(trials) * d));
    CHECK(std::abs(mean - 1.0) < 3 * se);
  }
  SUBCASE("missing stats rejected") {
    Rng rng(0);
    CHECK_THROWS_AS(init_chain(1.0f, -1.0f, 0.5, 4, rng), std::invalid_argument);
  }
}

TEST_CASE("walk with zero score and the noise hook keeps the state frozen") {
  SamplerConfig cfg;
  cfg.sigma = 1.2;
  cfg.delta = 0.6;
  ChainState s;
  s.y = Eigen::VectorXf::Constant(8, 0.37f);
  s.u = Eigen::VectorXf::Zero(8);
  Rng rng(3);
  WalkOptions opts;
  opts.disable_noise = true;
  walk(s, zero_score(), cfg, 25, rng, opts);
  CHECK(s.y == Eigen::VectorXf::Constant(8, 0.37f));
  CHECK(s.u.norm() == 0.0f);
  CHECK(s.step == 25);
}

TEST_CASE("a vanishing step leaves the state unchanged to first order") {
  SamplerConfig cfg;
  cfg.sigma = 1.2;
  ChainState base;
  Rng rng(5);
  base.y.resize(16);
  base.u.resize(16);
  for (int i = 0; i < 16; ++i) {
    base.y(i) = static_cast<float>(rng.normal());
    base.u(i) = static_cast<float>(rng.normal());
  }
  WalkOptions opts;
  opts.disable_noise = true;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    cfg.delta = delta;
    ChainState s = base;
    Rng r(9);
    walk(s, gaussian_score(cfg.sigma), cfg, 1, r, opts);
    const double dy = (s.y - base.y).norm();
    CHECK(dy <= delta * (base.u.norm() + 10 * delta));
  }
}

TEST_CASE("gaussian-oracle chain reaches the smoothed stationary variance") {
  // Continuous-time stationary variance of the smoothed density is
  // 1 + sigma^2 per coordinate; the ABOBA bias at delta = sigma/2 is ~0.1%.
  const double sigma = 1.2;
  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.gamma = 1.0;
  cfg.delta = sigma / 2.0;
  cfg.steps = 5000;
  cfg.chains = 64;
  cfg.seed = 2024;
  const int d = 64;

  double sq_sum = 0;
  long long count = 0;
  for (int chain = 0; chain < cfg.chains; ++chain) {
    Rng rng(substream(cfg.seed, chain));
    ChainState s = init_chain(-2.0f, 2.0f, sigma, d, rng);
    walk(s, gaussian_score(sigma), cfg, cfg.steps, rng);
    sq_sum += s.y.squaredNorm();
    count += d;
  }
  const double var = sq_sum / static_cast<double>(count);
  CHECK(var == doctest::Approx(1.0 + sigma * sigma).epsilon(0.05));
}

TEST_CASE("friction-only dynamics satisfy fluctuation-dissipation") {
  // With zero score the velocity recursion is u' = a u + sqrt(1-a^2) eps,
  // whose stationary variance is exactly 1.
  SamplerConfig cfg;
  cfg.sigma = 1.2;
  cfg.gamma = 1.0;
  cfg.delta = 0.6;
  const int d = 64, chains = 256, burn = 200;
  double sq = 0;
  for (int c = 0; c < chains; ++c) {
    Rng rng(substream(77, c));
    ChainState s;
    s.y = Eigen::VectorXf::Zero(d);
    s.u = Eigen::VectorXf::Zero(d);
    walk(s, zero_score(), cfg, burn, rng);
    sq += s.u.squaredNorm();
  }
  const double var = sq / (static_cast<double>(chains) * d);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("jump") {
  SUBCASE("identity denoiser returns y_K; jumps are repeatable") {
    DenoiseFn identity = [](const Eigen::MatrixXf& y) { return y; };
    ChainState s;
    s.y = Eigen::VectorXf::LinSpaced(6, -1, 1);
    s.u = Eigen::VectorXf::Ones(6);
    const Eigen::VectorXf z1 = jump(s, identity);
    const Eigen::VectorXf z2 = jump(s, identity);
    CHECK(z1 == s.y);
    CHECK(z1 == z2);
    CHECK(s.u == Eigen::VectorXf::Ones(6));  // state untouched
  }
  SUBCASE("gaussian-oracle jump variance shrinks to 1/(1+sigma^2)") {
    const double sigma = 1.2;
    SamplerConfig cfg;
    cfg.sigma = sigma;
    cfg.delta = sigma / 2;
    cfg.steps = 3000;
    cfg.chains = 96;
    cfg.seed = 31;
    const int d = 64;
    const Eigen::MatrixXf z = sample_batch_normalized(
        cfg.chains, d, cfg, gaussian_denoiser(sigma), gaussian_score(sigma), -2.0f, 2.0f);
    const double var = z.squaredNorm() / static_cast<double>(z.size());
    CHECK(var == doctest::Approx(1.0 / (1.0 + sigma * sigma)).epsilon(0.05));
  }
}

TEST_CASE("sample_batch determinism and edge cases") {
  const double sigma = 1.2;
  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.delta = 0.6;
  cfg.steps = 12;
  cfg.chains = 5;
  cfg.seed = 4;
  const int d = 8;

  SUBCASE("per-seed reproducibility") {
    const Eigen::MatrixXf a = sample_batch_normalized(5, d, cfg, gaussian_denoiser(sigma),
                                                      gaussian_score(sigma), -1, 1);
    const Eigen::MatrixXf b = sample_batch_normalized(5, d, cfg, gaussian_denoiser(sigma),
                                                      gaussian_score(sigma), -1, 1);
    CHECK(a == b);
  }
  SUBCASE("K = 0 degenerates to a denoised init") {
    cfg.steps = 0;
    cfg.chains = 1;
    const Eigen::MatrixXf z = sample_batch_normalized(1, d, cfg, gaussian_denoiser(sigma),
                                                      gaussian_score(sigma), -1, 1);
    Rng rng(substream(cfg.seed, 0));
    const ChainState s = init_chain(-1, 1, sigma, d, rng);
    const Eigen::VectorXf expect = jump(s, gaussian_denoiser(sigma));
    CHECK(z.row(0).transpose() == expect);
  }
  SUBCASE("chains are exchangeable under seed permutation") {
    // Single-chain walks with swapped seeds produce swapped outputs.
    auto run_chain = [&](std::uint64_t stream) {
      Rng rng(stream);
      ChainState s = init_chain(-1, 1, sigma, d, rng);
      walk(s, gaussian_score(sigma), cfg, cfg.steps, rng);
      return jump(s, gaussian_denoiser(sigma));
    };
    const auto za = run_chain(substream(4, 0));
    const auto zb = run_chain(substream(4, 1));
    const auto zb2 = run_chain(substream(4, 1));
    CHECK(za != zb);
    CHECK(zb == zb2);
  }
  SUBCASE("denormalization applies the stored stats") {
    CodeSet stats;
    stats.mean = Eigen::VectorXf::Constant(d, 2.0f);
    stats.stdev = Eigen::VectorXf::Constant(d, 3.0f);
    stats.code_min = -1;
    stats.code_max = 1;
    const Eigen::MatrixXf norm = sample_batch_normalized(3, d, cfg, gaussian_denoiser(sigma),
                                                         gaussian_score(sigma), -1, 1);
    const Eigen::MatrixXf denorm =
        sample_batch(3, cfg, gaussian_denoiser(sigma), gaussian_score(sigma), stats);
    CHECK((denorm - (norm.array() * 3.0f + 2.0f).matrix()).cwiseAbs().maxCoeff() < 1e-6f);
  }
}

TEST_CASE("non-finite chains abort with the step index") {
  SamplerConfig cfg;
  cfg.sigma = 1.0;
  cfg.delta = 0.5;
  cfg.steps = 10;
  ScoreFn explode = [](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf(y * std::numeric_limits<float>::infinity());
  };
  ChainState s;
  s.y = Eigen::VectorXf::Ones(4);
  s.u = Eigen::VectorXf::Zero(4);
  Rng rng(1);
  CHECK_THROWS_AS(walk(s, explode, cfg, 10, rng), NumericError);
}

// Acceptance suite: runs every acceptance criterion end to end against the
// desk-scale configuration and prints one PASS/FAIL line per criterion.
// Exit code is the number of failed criteria.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "fieldmol/cli.hpp"
#include "fieldmol/config.hpp"
#include "fieldmol/decoder.hpp"
#include "fieldmol/denoiser.hpp"
#include "fieldmol/metrics.hpp"
#include "fieldmol/sampler.hpp"
#include "fieldmol/trainer.hpp"

using namespace fieldmol;

namespace {

using Clock = std::chrono::steady_clock;

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Desk configuration; every tolerance in the criteria below is pinned here.

struct DeskConfig {
  std::uint64_t seed = 0;
  int n_molecules = 500;
  SyntheticConfig synth{3, 9, 9.0};
  FieldSpec spec;  // 12 A box, 0.25 A, CHON

  MfnConfig mfn;
  FieldTrainConfig field_train;

  DenoiserConfig den;
  DenoiserTrainConfig den_train;

  double sample_sigma() const { return den.sigma; }

  DeskConfig() {
    mfn.depth = 4;
    mfn.hidden = 256;
    mfn.code_dim = 64;
    mfn.out_channels = 4;
    mfn.freq_scale = 64.0;

    field_train.epochs = 120;
    field_train.batch_size = 16;
    field_train.points = 4000;
    field_train.lr_codes = 3e-3;
    field_train.lr_decoder = 1e-3;
    field_train.seed = seed;

    den.code_dim = 64;
    den.hidden = 512;
    den.blocks = 4;
    den.dropout = 0.3;
    den.sigma = 2.0;  // small-molecule preset

    den_train.epochs = 4000;
    den_train.batch_size = 2048;
    den_train.weight_decay = 1e-2;
    den_train.schedule.warmup_iters = 500;
    den_train.schedule.peak = 3e-4;
    den_train.ema_decay = 0.999;
    den_train.seed = seed;
  }
};

struct DeskState {
  DeskConfig cfg;
  std::vector<Molecule> train_set;
  std::vector<Molecule> reference_set;  // held out
  MfnParams params;
  CodeSet codes;  // normalized, with stats
  DenoiserParams den_ema;
};

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness across 20 seeded configurations

void criterion_1() {
  const auto t0 = Clock::now();
  using Md = Eigen::MatrixXd;
  using Vd = Eigen::VectorXd;
  using Pts = Eigen::Matrix<double, Eigen::Dynamic, 3>;

  double worst = 0;
  int checked = 0;
  for (int conf = 0; conf < 20; ++conf) {
    MfnConfig cfg;
    cfg.depth = 2 + conf % 5;  // 2..6
    cfg.hidden = (conf % 3 == 0) ? 8 : 12;
    cfg.code_dim = 4 + conf % 4;
    cfg.out_channels = 1 + conf % 3;
    cfg.freq_scale = 4.0 + conf;
    auto p = mfn_init<double>(cfg, 900 + conf);

    Rng rng(conf);
    Pts pts(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c) pts(i, c) = rng.uniform(-1, 1);
    Vd z(cfg.code_dim);
    for (int i = 0; i < cfg.code_dim; ++i) z(i) = rng.normal();
    Md w(4, cfg.out_channels);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);

    auto loss = [&]() { return (mfn_forward(p, pts, z).array() * w.array()).sum(); };

    MfnCacheT<double> cache;
    mfn_forward(p, pts, z, &cache);
    auto grad = mfn_zeros_like(p);
    Vd dcode = Vd::Zero(cfg.code_dim);
    mfn_backward(p, cache, w, z, grad, dcode);

    const double step = 1e-4;
    auto prefs = p.tensor_refs();
    auto grefs = grad.tensor_refs();
    for (std::size_t k = 0; k < prefs.size(); ++k) {
      double num = 0, den = 0;
      for (std::size_t i = 0; i < prefs[k].size; ++i) {
        const double orig = prefs[k].data[i];
        prefs[k].data[i] = orig + step;
        const double hi = loss();
        prefs[k].data[i] = orig - step;
        const double lo = loss();
        prefs[k].data[i] = orig;
        const double fd = (hi - lo) / (2 * step);
        num += (grefs[k].data[i] - fd) * (grefs[k].data[i] - fd);
        den += fd * fd;
      }
      worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
      ++checked;
    }
    {
      double num = 0, den = 0;
      for (int i = 0; i < cfg.code_dim; ++i) {
        const double orig = z(i);
        z(i) = orig + step;
        const double hi = loss();
        z(i) = orig - step;
        const double lo = loss();
        z(i) = orig;
        const double fd = (hi - lo) / (2 * step);
        num += (dcode(i) - fd) * (dcode(i) - fd);
        den += fd * fd;
      }
      worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
    }
    {
      const Eigen::Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      for (int channel = 0; channel < cfg.out_channels; ++channel) {
        const Eigen::Vector3d g = mfn_grad_x<double>(p, x, z, channel);
        Eigen::Vector3d fd;
        for (int axis = 0; axis < 3; ++axis) {
          Pts hi(1, 3), lo(1, 3);
          hi.row(0) = x.transpose();
          lo.row(0) = x.transpose();
          hi(0, axis) += step;
          lo(0, axis) -= step;
          fd(axis) = (mfn_forward(p, hi, z)(0, channel) - mfn_forward(p, lo, z)(0, channel)) /
                     (2 * step);
        }
        worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
      }
    }
  }
  const double dt = elapsed(t0);
  report(1, worst < 1e-5 && dt < 60.0, "MFN backward and grad_x match finite differences",
         fmt("worst rel err %.2e over 20 configs / %d tensors, %.1f s", worst, checked, dt));
}

// ---------------------------------------------------------------------------
// criteria 2-4 + 9: desk field training, reconstruction, ablations

void train_desk_field(DeskState& st) {
  std::printf("-- desk field training: %d molecules, code dim %d, %d-layer MFN, %d epochs\n",
              st.cfg.n_molecules, st.cfg.mfn.code_dim, st.cfg.mfn.depth,
              st.cfg.field_train.epochs);
  std::fflush(stdout);
  const auto t0 = Clock::now();
  st.train_set = gen_synthetic_dataset(st.cfg.n_molecules, st.cfg.seed, st.cfg.synth);
  st.reference_set = gen_synthetic_dataset(st.cfg.n_molecules, st.cfg.seed + 1, st.cfg.synth);

  FieldTrainer trainer(st.train_set, st.cfg.spec, st.cfg.mfn, st.cfg.field_train);
  for (int e = 0; e < st.cfg.field_train.epochs; ++e) {
    const double loss = trainer.run_epoch();
    if ((e + 1) % 20 == 0) {
      std::printf("   epoch %4d  loss %.4g  (%.0f s)\n", e + 1, loss, elapsed(t0));
      std::fflush(stdout);
    }
  }
  st.params = trainer.params();
  st.codes = normalize_codes(trainer.code_set());
  std::printf("-- field training done in %.0f s\n", elapsed(t0));
  std::fflush(stdout);
}

struct ReconOutcome {
  double psnr = 0, mse = 0;
  double count_acc = 0, mean_rmsd = 0;
  double angle_w1_refined = 0, angle_w1_unrefined = 0;
};

ReconOutcome desk_reconstruction(DeskState& st) {
  const auto t0 = Clock::now();
  const FieldSpec& spec = st.cfg.spec;
  DecodeOptions refined_opts;
  DecodeOptions raw_opts;
  raw_opts.refine = false;

  double sq = 0;
  long long nvox = 0;
  int exact = 0, rmsd_n = 0;
  double rmsd_sum = 0;
  std::vector<double> angles_truth, angles_refined, angles_raw;

  for (std::size_t i = 0; i < st.train_set.size(); ++i) {
    const Molecule truth = st.train_set[i].centered();
    const Eigen::VectorXf code =
        st.codes.denormalize(st.codes.codes.row(static_cast<Eigen::Index>(i)).transpose());
    const VoxelGrid grid = render_voxel_grid(learned_field(st.params, code), spec);
    const VoxelGrid gt = render_ground_truth(truth, spec);
    for (std::size_t v = 0; v < grid.data.size(); ++v) {
      const double d = static_cast<double>(grid.data[v]) - gt.data[v];
      sq += d * d;
    }
    nvox += static_cast<long long>(grid.data.size());

    auto truth_angles = bond_angles_deg(truth, infer_bonds(truth));
    angles_truth.insert(angles_truth.end(), truth_angles.begin(), truth_angles.end());

    const ChannelOracle oracle = mfn_channel_oracle(st.params, code, spec);
    try {
      const Molecule refined = molecule_from_grid(grid, oracle, spec, refined_opts);
      auto a = bond_angles_deg(refined, infer_bonds(refined));
      angles_refined.insert(angles_refined.end(), a.begin(), a.end());

      std::map<Element, int> want, got;
      for (auto e : truth.elements) want[e]++;
      for (auto e : refined.elements) got[e]++;
      if (want == got) {
        ++exact;
        std::vector<Eigen::Vector3d> ta, da;
        std::vector<bool> used(truth.size(), false);
        bool ok = true;
        for (int k = 0; k < refined.size() && ok; ++k) {
          int best = -1;
          double bd = 1e30;
          for (int j = 0; j < truth.size(); ++j) {
            if (used[j] || truth.elements[j] != refined.elements[k]) continue;
            const double d = (truth.coords[j] - refined.coords[k]).norm();
            if (d < bd) {
              bd = d;
              best = j;
            }
          }
          if (best < 0)
            ok = false;
          else {
            used[best] = true;
            ta.push_back(truth.coords[best]);
            da.push_back(refined.coords[k]);
          }
        }
        if (ok) {
          rmsd_sum += kabsch_rmsd(da, ta);
          ++rmsd_n;
        }
      }
    } catch (const DecodeError&) {
    }
    try {
      const Molecule raw = molecule_from_grid(grid, oracle, spec, raw_opts);
      auto a = bond_angles_deg(raw, infer_bonds(raw));
      angles_raw.insert(angles_raw.end(), a.begin(), a.end());
    } catch (const DecodeError&) {
    }
    if ((i + 1) % 100 == 0) {
      std::printf("   reconstructed %zu/%zu (%.0f s)\n", i + 1, st.train_set.size(), elapsed(t0));
      std::fflush(stdout);
    }
  }

  ReconOutcome out;
  out.mse = sq / static_cast<double>(nvox);
  out.psnr = out.mse < 1e-12 ? 120.0 : -10.0 * std::log10(out.mse);
  out.count_acc = static_cast<double>(exact) / st.train_set.size();
  out.mean_rmsd = rmsd_n ? rmsd_sum / rmsd_n : 1e9;
  out.angle_w1_refined =
      angles_refined.empty() ? 1e9 : wasserstein1d(angles_refined, angles_truth);
  out.angle_w1_unrefined = angles_raw.empty() ? 1e9 : wasserstein1d(angles_raw, angles_truth);
  return out;
}

void criteria_2_3_4(const ReconOutcome& rec, double train_seconds) {
  report(2, rec.psnr > 35.0 && train_seconds <= 2 * 3600.0,
         "desk field reconstruction PSNR > 35 dB",
         fmt("PSNR %.1f dB (MSE %.3g), training %.0f s", rec.psnr, rec.mse, train_seconds));
  report(3, rec.count_acc >= 0.90 && rec.mean_rmsd < 0.1,
         "decode recovers >= 90% exact atom counts at RMSD < 0.1 A",
         fmt("count accuracy %.1f%%, mean aligned RMSD %.4f A", 100 * rec.count_acc,
             rec.mean_rmsd));
  const double ratio =
      rec.angle_w1_refined > 0 ? rec.angle_w1_unrefined / rec.angle_w1_refined : 1e9;
  report(4, ratio >= 5.0, "disabling refinement degrades bond-angle W1 by >= 5x",
         fmt("angle W1 %.3f deg refined vs %.3f deg unrefined (ratio %.1fx)",
             rec.angle_w1_refined, rec.angle_w1_unrefined, ratio));
}

// ---------------------------------------------------------------------------
// criterion 5: closed-form Gaussian walk-jump oracle

void criterion_5() {
  const auto t0 = Clock::now();
  const double sigma = 1.2;
  const double target_walk = 1.0 + sigma * sigma;
  const double target_jump = 1.0 / (1.0 + sigma * sigma);
  const int d = 64, chains = 64;

  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.gamma = 1.0;
  cfg.delta = sigma / 2;
  cfg.steps = 5000;
  cfg.chains = chains;
  cfg.seed = 99;

  ScoreFn score_fn = [&](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf(y * static_cast<float>(-1.0 / (1.0 + sigma * sigma)));
  };
  DenoiseFn denoise_fn = [&](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf(y * static_cast<float>(1.0 / (1.0 + sigma * sigma)));
  };

  double walk_sq = 0, jump_sq = 0;
  long long count = 0;
  for (int c = 0; c < chains; ++c) {
    Rng rng(substream(cfg.seed, c));
    ChainState s = init_chain(-2.0f, 2.0f, sigma, d, rng);
    walk(s, score_fn, cfg, cfg.steps, rng);
    walk_sq += s.y.squaredNorm();
    jump_sq += jump(s, denoise_fn).squaredNorm();
    count += d;
  }
  const double walk_var = walk_sq / count;
  const double jump_var = jump_sq / count;
  const double dt = elapsed(t0);
  const bool pass = std::abs(walk_var - target_walk) / target_walk < 0.05 &&
                    std::abs(jump_var - target_jump) / target_jump < 0.05 && dt < 60.0;
  report(5, pass, "gaussian WJS oracle variances",
         fmt("walk var %.3f (target %.3f), jump var %.4f (target %.4f), %.1f s", walk_var,
             target_walk, jump_var, target_jump, dt));
}

// ---------------------------------------------------------------------------
// criterion 6: denoiser Bayes risk on isotropic Gaussian codes

void criterion_6() {
  const auto t0 = Clock::now();
  DenoiserConfig cfg;
  cfg.code_dim = 64;
  cfg.hidden = 512;
  cfg.blocks = 4;
  cfg.dropout = 0.0;
  cfg.sigma = 1.2;

  const int n = 16384;
  Rng rng(5150);
  Eigen::MatrixXf codes(n, cfg.code_dim);
  for (int i = 0; i < codes.size(); ++i) codes.data()[i] = static_cast<float>(rng.normal());

  DenoiserTrainConfig tcfg;
  tcfg.epochs = 24;
  tcfg.batch_size = 512;
  tcfg.schedule.warmup_iters = 300;
  tcfg.schedule.peak = 1e-3;
  tcfg.ema_decay = 0.995;
  tcfg.seed = 6;
  DenoiserTrainer trainer(codes, cfg, tcfg);
  for (int e = 0; e < tcfg.epochs; ++e) trainer.run_epoch();

  // Held-out evaluation loss per dimension, dropout-free.
  Rng eval_rng(777);
  const int m = 4096;
  Eigen::MatrixXf z(m, cfg.code_dim), y(m, cfg.code_dim);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < cfg.code_dim; ++j) {
      z(i, j) = static_cast<float>(eval_rng.normal());
      y(i, j) = z(i, j) + static_cast<float>(cfg.sigma * eval_rng.normal());
    }
  const Eigen::MatrixXf zhat = denoise(trainer.ema_params(), y);
  const double loss = (zhat - z).squaredNorm() / (static_cast<double>(m) * cfg.code_dim);

  const double sigma2 = cfg.sigma * cfg.sigma;
  const double bayes = sigma2 / (1 + sigma2);
  const bool pass = std::abs(loss - bayes) / bayes < 0.10 && loss < sigma2;
  report(6, pass, "denoiser reaches the Gaussian Bayes risk",
         fmt("per-dim loss %.4f vs Bayes %.4f (identity baseline %.2f), %.0f s", loss, bayes,
             sigma2, elapsed(t0)));
}

// ---------------------------------------------------------------------------
// criteria 7, 8, 10: desk denoiser + sampling

void train_desk_denoiser(DeskState& st) {
  std::printf("-- desk denoiser training: %d epochs on %lld codes\n", st.cfg.den_train.epochs,
              static_cast<long long>(st.codes.codes.rows()));
  std::fflush(stdout);
  const auto t0 = Clock::now();
  DenoiserTrainer trainer(st.codes.codes, st.cfg.den, st.cfg.den_train);
  for (int e = 0; e < st.cfg.den_train.epochs; ++e) {
    const double loss = trainer.run_epoch();
    if ((e + 1) % 1000 == 0) {
      std::printf("   epoch %5d  loss/dim %.4f (%.0f s)\n", e + 1, loss, elapsed(t0));
      std::fflush(stdout);
    }
  }
  st.den_ema = trainer.ema_params();
  std::printf("-- denoiser training done in %.0f s\n", elapsed(t0));
  std::fflush(stdout);
}

struct SampleOutcome {
  SampleSetReport report;
  int decoded = 0;
  int failures = 0;
  double walk_seconds = 0;
  double decode_seconds = 0;
};

SampleOutcome sample_and_decode(DeskState& st, long steps, int chains, std::uint64_t seed) {
  SampleOutcome out;
  const double sigma = st.cfg.sample_sigma();
  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.gamma = 1.0;
  cfg.delta = sigma / 2;
  cfg.steps = steps;
  cfg.chains = chains;
  cfg.seed = seed;

  const DenoiserParams ema = st.den_ema;
  DenoiseFn dn = [&ema](const Eigen::MatrixXf& y) { return denoise(ema, y); };
  ScoreFn sc = [&ema, sigma](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf((denoise(ema, y) - y) / (sigma * sigma));
  };

  auto t0 = Clock::now();
  const Eigen::MatrixXf codes = sample_batch(chains, cfg, dn, sc, st.codes);
  out.walk_seconds = elapsed(t0);

  t0 = Clock::now();
  std::vector<Molecule> decoded;
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    try {
      decoded.push_back(decode_code(codes.row(i).transpose(), st.params, st.cfg.spec));
    } catch (const DecodeError&) {
      ++out.failures;
    }
  }
  out.decode_seconds = elapsed(t0);
  out.decoded = static_cast<int>(decoded.size());
  if (!decoded.empty()) out.report = evaluate_sample_set(decoded, st.reference_set);
  return out;
}

void criterion_7(DeskState& st) {
  const auto outcome = sample_and_decode(st, 1000, 500, st.cfg.seed + 17);
  const auto& r = outcome.report;
  const bool pass = outcome.decoded > 0 && r.stable_mol_pct >= 60.0 &&
                    r.uniqueness_pct >= 70.0 && r.bond_len_w1 < 0.05;
  report(7, pass, "end-to-end generation quality",
         fmt("stable %.1f%%, unique %.1f%%, bond-len W1 %.4f A; %d/%d decoded; "
             "%.2f s/mol walk+jump, %.2f s/mol decode",
             r.stable_mol_pct, r.uniqueness_pct, r.bond_len_w1, outcome.decoded,
             outcome.decoded + outcome.failures, outcome.walk_seconds / 500.0,
             outcome.decode_seconds / std::max(1, outcome.decoded)));
}

void criterion_8(DeskState& st) {
  const auto lo = sample_and_decode(st, 500, 250, st.cfg.seed + 23);
  const auto hi = sample_and_decode(st, 5000, 250, st.cfg.seed + 23);
  const bool pass = hi.report.stable_mol_pct >= lo.report.stable_mol_pct &&
                    hi.report.uniqueness_pct <= lo.report.uniqueness_pct;
  report(8, pass, "walk-step trend: stability up, uniqueness down",
         fmt("K=500: stable %.1f%% unique %.1f%% | K=5000: stable %.1f%% unique %.1f%%",
             lo.report.stable_mol_pct, lo.report.uniqueness_pct, hi.report.stable_mol_pct,
             hi.report.uniqueness_pct));
}

void criterion_10(DeskState& st) {
  const double sigma = st.cfg.sample_sigma();
  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.gamma = 1.0;
  cfg.delta = sigma / 2;
  cfg.steps = 50000;
  cfg.chains = 8;
  cfg.seed = st.cfg.seed + 31;
  const DenoiserParams ema = st.den_ema;
  DenoiseFn dn = [&ema](const Eigen::MatrixXf& y) { return denoise(ema, y); };
  ScoreFn sc = [&ema, sigma](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf((denoise(ema, y) - y) / (sigma * sigma));
  };
  bool pass = true;
  std::string detail = "8 chains x 50000 steps stayed finite";
  try {
    const Eigen::MatrixXf z = sample_batch_normalized(
        cfg.chains, st.cfg.mfn.code_dim, cfg, dn, sc, st.codes.code_min, st.codes.code_max);
    pass = z.allFinite();
  } catch (const NumericError& e) {
    pass = false;
    detail = e.what();
  }
  report(10, pass, "50000-step walk never produces non-finite state", detail);
}

// ---------------------------------------------------------------------------
// criterion 9: decode-resolution ablation

void criterion_9(DeskState& st) {
  const int probe = 100;
  FieldSpec coarse = st.cfg.spec;
  coarse.resolution = 0.5;

  int errors_fine = 0, errors_coarse = 0;
  for (int i = 0; i < probe; ++i) {
    const Molecule truth = st.train_set[i].centered();
    const Eigen::VectorXf code = st.codes.denormalize(st.codes.codes.row(i).transpose());
    std::map<Element, int> want;
    for (auto e : truth.elements) want[e]++;
    auto count_errors = [&](const FieldSpec& spec) {
      try {
        const Molecule mol = decode_code(code, st.params, spec);
        std::map<Element, int> got;
        for (auto e : mol.elements) got[e]++;
        return want == got ? 0 : 1;
      } catch (const DecodeError&) {
        return 1;
      }
    };
    errors_fine += count_errors(st.cfg.spec);
    errors_coarse += count_errors(coarse);
  }
  report(9, errors_coarse >= errors_fine, "coarse decoding is never more accurate",
         fmt("atom-count errors on %d molecules: %d at 0.5 A vs %d at 0.25 A", probe,
             errors_coarse, errors_fine));
}

// ---------------------------------------------------------------------------
// criterion 11: pipeline determinism (reduced but complete scale)

namespace fs = std::filesystem;

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_11() {
  const fs::path root = fs::temp_directory_path() / "fieldmol_acceptance";

  auto run_pipeline = [&](const fs::path& dir) {
    fs::create_directories(dir);
    const std::string cfgp = (dir / "cfg.json").string();
    std::ofstream(cfgp) << R"({
      "seed": 3,
      "data": {"count": 40, "min_heavy": 3, "max_heavy": 6},
      "field": {"epochs": 8, "batch_size": 8, "points": 1024, "lr_codes": 3e-3},
      "mfn": {"hidden": 64, "code_dim": 16, "freq_scale": 64.0},
      "denoiser": {"hidden": 128, "blocks": 2, "sigma": 2.0, "epochs": 40,
                    "warmup_iters": 20, "ema_decay": 0.99},
      "sampler": {"steps": 20, "chains": 6}
    })";
    auto run = [&](std::vector<std::string> args) {
      args.insert(args.begin(), {"--config", cfgp, "--threads", "1"});
      std::ostringstream out, err;
      const int rc = run_cli(args, out, err);
      if (rc != 0) throw std::runtime_error("pipeline step failed: " + err.str());
    };
    run({"gen-data", "--out", (dir / "data.xyz").string()});
    run({"train-field", "--data", (dir / "data.xyz").string(), "--out",
         (dir / "field.fmol").string(), "--log", (dir / "train.csv").string()});
    run({"train-denoiser", "--field", (dir / "field.fmol").string(), "--out",
         (dir / "denoiser.fmol").string()});
    run({"sample", "--denoiser", (dir / "denoiser.fmol").string(), "--out",
         (dir / "samples.fmol").string()});
    run({"decode", "--field", (dir / "field.fmol").string(), "--codes",
         (dir / "samples.fmol").string(), "--out", (dir / "samples.xyz").string(), "--report",
         (dir / "report.csv").string()});
    run({"eval", "--generated", (dir / "samples.xyz").string(), "--reference",
         (dir / "data.xyz").string(), "--out", (dir / "metrics.csv").string()});
  };

  bool pass = true;
  std::string detail;
  try {
    run_pipeline(root / "a");
    run_pipeline(root / "b");
    for (const char* f : {"data.xyz", "field.fmol", "denoiser.fmol", "samples.fmol",
                          "samples.xyz", "report.csv", "metrics.csv", "train.csv"}) {
      if (file_bytes(root / "a" / f) != file_bytes(root / "b" / f)) {
        pass = false;
        detail += std::string(f) + " differs; ";
      }
    }
    if (pass) detail = "8 artifacts byte-identical across two runs";
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  report(11, pass, "pipeline determinism (single-threaded)", detail);
}

// ---------------------------------------------------------------------------
// criterion 12: persistence fuzzing

void criterion_12() {
  TensorContainer base;
  base.meta["sigma"] = 1.2;
  base.tensors["weights"] = {{4, 8}, std::vector<float>(32, 0.5f)};
  base.tensors["codes"] = {{16}, std::vector<float>(16, -1.0f)};
  const auto bytes = save_container(base);

  Rng rng(0xF00D);
  int rejected = 0, accepted = 0;
  bool crashed = false;
  const int trials = 100000;
  for (int t = 0; t < trials && !crashed; ++t) {
    auto b = bytes;
    const int mutations = 1 + static_cast<int>(rng.uniform_int(8));
    for (int m = 0; m < mutations; ++m) {
      const auto mode = rng.uniform_int(4);
      if (mode == 0 && !b.empty()) {
        b[rng.uniform_int(b.size())] = static_cast<std::uint8_t>(rng.uniform_int(256));
      } else if (mode == 1 && !b.empty()) {
        b.resize(rng.uniform_int(b.size() + 1));
      } else if (mode == 2) {
        b.insert(b.begin() + rng.uniform_int(b.size() + 1),
                 static_cast<std::uint8_t>(rng.uniform_int(256)));
      } else if (b.size() > 16) {
        const std::uint64_t v = rng.next_u64();
        for (int i = 0; i < 8; ++i) b[8 + i] = static_cast<std::uint8_t>(v >> (8 * i));
      }
    }
    try {
      (void)load_container(b);
      ++accepted;
    } catch (const PersistError&) {
      ++rejected;
    } catch (...) {
      crashed = true;
    }
  }
  report(12, !crashed, "loader survives 1e5 mutated containers",
         fmt("%d rejected, %d accepted, no crashes/OOB", rejected, accepted));
}

}  // namespace

int main() {
  std::printf("fieldmol acceptance suite\n");
  const auto t0 = Clock::now();

  criterion_1();
  criterion_5();
  criterion_6();
  criterion_12();

  DeskState st;
  const auto t_train = Clock::now();
  train_desk_field(st);
  const double train_seconds = elapsed(t_train);
  const ReconOutcome rec = desk_reconstruction(st);
  criteria_2_3_4(rec, train_seconds);
  criterion_9(st);

  train_desk_denoiser(st);
  criterion_7(st);
  criterion_8(st);
  criterion_10(st);

  criterion_11();

  std::printf("acceptance finished in %.0f s: %d criteria failed\n", elapsed(t0), g_failures);
  return g_failures;
}

#include "fieldmol/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fieldmol/config.hpp"
#include "fieldmol/decoder.hpp"
#include "fieldmol/metrics.hpp"
#include "fieldmol/parallel.hpp"

namespace fieldmol {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << content;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Molecule> load_corpus(const std::string& path) {
  auto mols = parse_xyz_corpus(read_text_file(path));
  if (mols.empty()) throw ParseError("no molecules in '" + path + "'");
  return mols;
}

void log_run(std::ostream& out, const std::string& command, const AppConfig& cfg) {
  out << "[" << command << "] seed=" << cfg.seed << " config_hash=" << hex64(cfg.hash()) << "\n";
  out << "[" << command << "] config: " << cfg.echo().dump() << "\n";
}

/// Raw-space code rows from a samples/codes container, or denormalized rows
/// from a field model.
Eigen::MatrixXf decodable_codes(const TensorContainer& c) {
  const std::string kind = c.meta.value("kind", "");
  const auto& entry = c.at("codes");
  if (entry.shape.size() != 2)
    throw PersistError(PersistErrc::kShapeMismatch, "codes tensor must be rank 2");
  Eigen::MatrixXf codes(static_cast<Eigen::Index>(entry.shape[0]),
                        static_cast<Eigen::Index>(entry.shape[1]));
  std::copy(entry.data.begin(), entry.data.end(), codes.data());
  if (kind == "field_model" && c.has("code_mean")) {
    const FieldCheckpoint ck = parse_field_checkpoint(c);
    for (Eigen::Index i = 0; i < codes.rows(); ++i)
      codes.row(i) = ck.codes.denormalize(codes.row(i).transpose()).transpose();
  }
  return codes;
}

struct SampleFns {
  DenoiseFn denoise;
  ScoreFn score;
};

SampleFns sampling_functions(const DenoiserCheckpoint& ck) {
  const DenoiserParams ema = ck.ema;  // sampling consumes the EMA weights
  const double sigma = ema.cfg.sigma;
  DenoiseFn dn = [ema](const Eigen::MatrixXf& y) { return denoise(ema, y); };
  ScoreFn sc = [ema, sigma](const Eigen::MatrixXf& y) {
    return Eigen::MatrixXf(((denoise(ema, y) - y) / (sigma * sigma)));
  };
  return {dn, sc};
}

int cmd_gen_data(const AppConfig& cfg, const std::string& out_path, std::ostream& out) {
  const auto t0 = Clock::now();
  auto mols = gen_synthetic_dataset(cfg.data.count, cfg.seed, cfg.data.synth);
  write_text_file(out_path, write_xyz_corpus(mols));
  out << "[gen-data] wrote " << mols.size() << " molecules to " << out_path << " in "
      << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_train_field(const AppConfig& cfg, const std::string& data_path,
                    const std::string& out_path, const std::string& state_path,
                    const std::string& resume_path, const std::string& log_path,
                    std::ostream& out) {
  const auto t0 = Clock::now();
  auto mols = load_corpus(data_path);
  FieldTrainer trainer(std::move(mols), cfg.field.spec, cfg.mfn, cfg.field.train);
  if (!resume_path.empty()) {
    trainer.restore(load_container_file(resume_path));
    out << "[train-field] resumed at epoch " << trainer.epoch() << "\n";
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open '" + log_path + "'");
    if (resume_path.empty()) log << "iter,loss,lr\n";
  }

  const int remaining = cfg.field.train.epochs - trainer.epoch();
  try {
    trainer.run(std::max(0, remaining), log.is_open() ? &log : nullptr);
  } catch (const NumericError&) {
    if (!state_path.empty() && trainer.last_good_checkpoint()) {
      save_container_file(*trainer.last_good_checkpoint(), state_path);
      out << "[train-field] aborted; last good state saved to " << state_path << "\n";
    }
    throw;
  }

  int clamped = 0;
  const CodeSet normalized = normalize_codes(trainer.code_set(), &clamped);
  if (clamped > 0)
    out << "[train-field] warning: " << clamped << " zero-variance code dimensions clamped\n";
  save_container_file(make_field_checkpoint(trainer.params(), normalized, cfg.field.spec),
                      out_path);
  if (!state_path.empty()) save_container_file(trainer.checkpoint(), state_path);

  const double final_loss = trainer.history().empty() ? 0.0 : trainer.history().back().loss;
  out << "[train-field] epochs=" << trainer.epoch() << " final_loss=" << final_loss << " wrote "
      << out_path << " in " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_fit_codes(const AppConfig& cfg, const std::string& field_path,
                  const std::string& data_path, const std::string& out_path, std::ostream& out) {
  const auto t0 = Clock::now();
  const FieldCheckpoint ck = parse_field_checkpoint(load_container_file(field_path));
  auto mols = load_corpus(data_path);

  FitCodeConfig fit;
  fit.iterations = cfg.field.fit_iterations;
  fit.points = cfg.field.train.points;
  fit.lr = cfg.field.fit_lr;

  Eigen::MatrixXf codes(static_cast<Eigen::Index>(mols.size()), ck.params.cfg.code_dim);
  std::vector<std::string> ids(mols.size());
  parallel_for(0, static_cast<int>(mols.size()), [&](int i) {
    FitCodeConfig f = fit;
    f.seed = substream(cfg.seed, 0x66697463ull, i);
    codes.row(i) = fit_code(ck.params, mols[i], ck.spec, f).transpose();
    ids[i] = mols[i].name.empty() ? "mol" + std::to_string(i) : mols[i].name;
  });

  TensorContainer c;
  c.meta["kind"] = "codes";
  c.meta["code_ids"] = ids;
  TensorContainer::Entry e;
  e.shape = {static_cast<std::size_t>(codes.rows()), static_cast<std::size_t>(codes.cols())};
  e.data.assign(codes.data(), codes.data() + codes.size());
  c.tensors["codes"] = std::move(e);
  save_container_file(c, out_path);
  out << "[fit-codes] fitted " << mols.size() << " codes in " << seconds_since(t0) << " s ("
      << seconds_since(t0) / static_cast<double>(mols.size()) << " s/molecule)\n";
  return 0;
}

int cmd_train_denoiser(const AppConfig& cfg, const std::string& field_path,
                       const std::string& out_path, const std::string& state_path,
                       const std::string& resume_path, const std::string& log_path,
                       std::ostream& out) {
  const auto t0 = Clock::now();
  const FieldCheckpoint ck = parse_field_checkpoint(load_container_file(field_path));
  if (!ck.codes.normalized())
    throw std::runtime_error("field model has no normalization stats; re-run train-field");
  if (ck.codes.codes.cols() != cfg.mfn.code_dim)
    throw ConfigError("mfn.code_dim", "does not match the field checkpoint");

  DenoiserTrainer trainer(ck.codes.codes, cfg.denoiser.arch, cfg.denoiser.train);
  if (!resume_path.empty()) {
    trainer.restore(load_container_file(resume_path));
    out << "[train-denoiser] resumed at epoch " << trainer.epoch() << "\n";
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open '" + log_path + "'");
    if (resume_path.empty()) log << "iter,loss,lr\n";
  }

  const int remaining = cfg.denoiser.train.epochs - trainer.epoch();
  try {
    trainer.run(std::max(0, remaining), log.is_open() ? &log : nullptr);
  } catch (const NumericError&) {
    if (!state_path.empty() && trainer.last_good_checkpoint()) {
      save_container_file(*trainer.last_good_checkpoint(), state_path);
      out << "[train-denoiser] aborted; last good state saved to " << state_path << "\n";
    }
    throw;
  }

  save_container_file(make_denoiser_checkpoint(trainer.params(), trainer.ema_params(), ck.codes),
                      out_path);
  if (!state_path.empty()) save_container_file(trainer.checkpoint(), state_path);
  const double final_loss = trainer.history().empty() ? 0.0 : trainer.history().back().loss;
  out << "[train-denoiser] epochs=" << trainer.epoch() << " final_loss_per_dim=" << final_loss
      << " wrote " << out_path << " in " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_sample(const AppConfig& cfg, const std::string& denoiser_path, const std::string& out_path,
               long steps_override, long chains_override, long long seed_override,
               std::ostream& out) {
  const auto t0 = Clock::now();
  const DenoiserCheckpoint ck = parse_denoiser_checkpoint(load_container_file(denoiser_path));
  const double sigma = ck.ema.cfg.sigma;
  if (std::abs(cfg.denoiser.arch.sigma - sigma) > 1e-12)
    throw ConfigError("denoiser.sigma",
                      "config sigma " + std::to_string(cfg.denoiser.arch.sigma) +
                          " does not match checkpoint sigma " + std::to_string(sigma) +
                          "; sigma lives in the checkpoint and cannot be overridden");

  AppConfig resolved = cfg;
  if (seed_override >= 0) resolved.seed = static_cast<std::uint64_t>(seed_override);
  SamplerConfig scfg = resolved.sampler_config(sigma);
  if (steps_override >= 0) scfg.steps = steps_override;
  if (chains_override > 0) scfg.chains = static_cast<int>(chains_override);
  scfg.validate();

  const SampleFns fns = sampling_functions(ck);
  const Eigen::MatrixXf codes = sample_batch(scfg.chains, scfg, fns.denoise, fns.score,
                                             ck.code_stats);

  TensorContainer c;
  c.meta["kind"] = "samples";
  c.meta["sigma"] = sigma;
  c.meta["steps"] = scfg.steps;
  c.meta["chains"] = scfg.chains;
  c.meta["seed"] = scfg.seed;
  TensorContainer::Entry e;
  e.shape = {static_cast<std::size_t>(codes.rows()), static_cast<std::size_t>(codes.cols())};
  e.data.assign(codes.data(), codes.data() + codes.size());
  c.tensors["codes"] = std::move(e);
  save_container_file(c, out_path);

  const double dt = seconds_since(t0);
  out << "[sample] chains=" << scfg.chains << " steps=" << scfg.steps << " sigma=" << sigma
      << " delta=" << scfg.delta << " in " << dt << " s (" << dt / scfg.chains
      << " s/molecule walk+jump)\n";
  return 0;
}

int cmd_decode(const AppConfig& cfg, const std::string& field_path, const std::string& codes_path,
               const std::string& out_path, const std::string& report_path, std::ostream& out) {
  const auto t0 = Clock::now();
  const FieldCheckpoint ck = parse_field_checkpoint(load_container_file(field_path));
  const Eigen::MatrixXf codes = decodable_codes(load_container_file(codes_path));
  if (codes.cols() != ck.params.cfg.code_dim)
    throw PersistError(PersistErrc::kShapeMismatch, "code dimension mismatch with field model");

  const DecodeOptions opts = cfg.decode_options();
  std::vector<Molecule> decoded;
  std::string report = "index,atoms,peaks_per_channel,refine_fallbacks,mean_displacement\n";
  int failures = 0;
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    DecodeReport rep;
    try {
      Molecule mol = decode_code(codes.row(i).transpose(), ck.params, ck.spec, opts, &rep);
      mol.name = "sample" + std::to_string(i);
      decoded.push_back(std::move(mol));
      std::string peaks;
      for (std::size_t c = 0; c < rep.peaks_per_channel.size(); ++c)
        peaks += (c ? ";" : "") + std::to_string(rep.peaks_per_channel[c]);
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%lld,%d,%s,%d,%.6f\n", static_cast<long long>(i),
                    decoded.back().size(), peaks.c_str(), rep.refine.fallback_count,
                    rep.refine.mean_displacement);
      report += buf;
    } catch (const DecodeError&) {
      ++failures;
      report += std::to_string(i) + ",0,,0,0\n";
    }
  }
  if (decoded.empty()) throw std::runtime_error("all codes decoded to empty molecules");
  write_text_file(out_path, write_xyz_corpus(decoded));
  if (!report_path.empty()) write_text_file(report_path, report);

  const double dt = seconds_since(t0);
  out << "[decode] decoded " << decoded.size() << "/" << codes.rows() << " codes (" << failures
      << " empty) in " << dt << " s (" << dt / static_cast<double>(codes.rows())
      << " s/molecule)\n";
  return 0;
}

int cmd_eval(const std::string& generated_path, const std::string& reference_path,
             const std::string& out_path, const std::string& hist_dir, std::ostream& out) {
  const auto t0 = Clock::now();
  const auto gen = load_corpus(generated_path);
  const auto ref = load_corpus(reference_path);
  const SampleSetReport rep = evaluate_sample_set(gen, ref);
  if (!out_path.empty()) write_text_file(out_path, rep.csv());
  if (!hist_dir.empty()) {
    auto dump = [&](const std::vector<Molecule>& mols, const std::string& prefix) {
      std::vector<double> lengths, angles, counts;
      for (const auto& m : mols) {
        const BondGraph g = infer_bonds(m);
        auto l = bond_lengths(m, g);
        lengths.insert(lengths.end(), l.begin(), l.end());
        auto a = bond_angles_deg(m, g);
        angles.insert(angles.end(), a.begin(), a.end());
        counts.push_back(g.largest_fragment_size());
      }
      write_text_file(hist_dir + "/" + prefix + "_bond_lengths.csv", histogram_csv(lengths));
      write_text_file(hist_dir + "/" + prefix + "_bond_angles.csv", histogram_csv(angles));
      write_text_file(hist_dir + "/" + prefix + "_atoms_per_mol.csv", histogram_csv(counts));
    };
    dump(gen, "generated");
    dump(ref, "reference");
  }
  out << rep.table();
  out << "[eval] done in " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_reconstruct(const AppConfig& cfg, const std::string& field_path,
                    const std::string& data_path, const std::string& out_path, bool no_refine,
                    double resolution_override, std::ostream& out) {
  const auto t0 = Clock::now();
  const FieldCheckpoint ck = parse_field_checkpoint(load_container_file(field_path));
  const auto mols = load_corpus(data_path);
  if (static_cast<Eigen::Index>(mols.size()) != ck.codes.codes.rows())
    throw std::runtime_error("corpus size does not match the checkpoint's code count");

  FieldSpec spec = ck.spec;
  if (resolution_override > 0) {
    spec.resolution = resolution_override;
    spec.validate();
  }
  DecodeOptions opts = cfg.decode_options();
  if (no_refine) opts.refine = false;

  Eigen::MatrixXf denorm = ck.codes.codes;
  if (ck.codes.normalized())
    for (Eigen::Index i = 0; i < denorm.rows(); ++i)
      denorm.row(i) = ck.codes.denormalize(denorm.row(i).transpose()).transpose();

  const ReconstructionReport rep = reconstruction_metrics(ck.params, denorm, mols, spec, opts);
  if (!out_path.empty()) write_text_file(out_path, rep.csv());
  out << "[reconstruct] mse=" << rep.mse << " psnr=" << rep.psnr
      << " atom_count_accuracy=" << rep.atom_count_accuracy << " mean_rmsd=" << rep.mean_rmsd
      << " in " << seconds_since(t0) << " s\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fieldmol: 3D molecules as neural occupancy fields with walk-jump sampling"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = 0;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--threads", threads, "cap on worker threads (0 = hardware)");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic XYZ corpus");
  std::string gen_out;
  long long gen_count = -1, gen_seed = -1;
  gen->add_option("--out", gen_out, "output corpus path")->required();
  gen->add_option("--count", gen_count, "override data.count");
  gen->add_option("--seed", gen_seed, "override the config seed");

  auto* tf = app.add_subcommand("train-field", "train the conditional field + codes");
  std::string tf_data, tf_out, tf_state, tf_resume, tf_log;
  tf->add_option("--data", tf_data, "training corpus (XYZ)")->required();
  tf->add_option("--out", tf_out, "output field model (.fmol)")->required();
  tf->add_option("--state", tf_state, "also save a resumable training state");
  tf->add_option("--resume", tf_resume, "resume from a training state");
  tf->add_option("--log", tf_log, "training log CSV (iter,loss,lr)");

  auto* fc = app.add_subcommand("fit-codes", "fit codes for external molecules");
  std::string fc_field, fc_data, fc_out;
  fc->add_option("--field", fc_field, "trained field model")->required();
  fc->add_option("--data", fc_data, "molecules to encode (XYZ)")->required();
  fc->add_option("--out", fc_out, "output code matrix (.fmol)")->required();

  auto* td = app.add_subcommand("train-denoiser", "train the code denoiser");
  std::string td_field, td_out, td_state, td_resume, td_log;
  td->add_option("--field", td_field, "trained field model")->required();
  td->add_option("--out", td_out, "output denoiser model (.fmol)")->required();
  td->add_option("--state", td_state, "also save a resumable training state");
  td->add_option("--resume", td_resume, "resume from a training state");
  td->add_option("--log", td_log, "training log CSV (iter,loss,lr)");

  auto* sm = app.add_subcommand("sample", "walk-jump sample codes");
  std::string sm_denoiser, sm_out;
  long long sm_steps = -1, sm_chains = -1, sm_seed = -1;
  sm->add_option("--denoiser", sm_denoiser, "trained denoiser model")->required();
  sm->add_option("--out", sm_out, "output sampled codes (.fmol)")->required();
  sm->add_option("--steps", sm_steps, "walk steps per chain");
  sm->add_option("--chains", sm_chains, "number of chains (one sample per chain)");
  sm->add_option("--seed", sm_seed, "override the config seed");

  auto* dc = app.add_subcommand("decode", "decode codes to molecules");
  std::string dc_field, dc_codes, dc_out, dc_report;
  dc->add_option("--field", dc_field, "trained field model")->required();
  dc->add_option("--codes", dc_codes, "code matrix (.fmol)")->required();
  dc->add_option("--out", dc_out, "output molecules (XYZ)")->required();
  dc->add_option("--report", dc_report, "per-molecule decode report CSV");

  auto* ev = app.add_subcommand("eval", "evaluate generated molecules against a reference");
  std::string ev_gen, ev_ref, ev_out, ev_hist;
  ev->add_option("--generated", ev_gen, "generated molecules (XYZ)")->required();
  ev->add_option("--reference", ev_ref, "reference molecules (XYZ)")->required();
  ev->add_option("--out", ev_out, "metrics CSV");
  ev->add_option("--hist-dir", ev_hist, "directory for histogram dumps");

  auto* rc = app.add_subcommand("reconstruct", "field + molecule reconstruction report");
  std::string rc_field, rc_data, rc_out;
  bool rc_no_refine = false;
  double rc_resolution = -1;
  rc->add_option("--field", rc_field, "trained field model")->required();
  rc->add_option("--data", rc_data, "the corpus the model was trained on")->required();
  rc->add_option("--out", rc_out, "reconstruction CSV");
  rc->add_flag("--no-refine", rc_no_refine, "skip continuous refinement");
  rc->add_option("--resolution", rc_resolution, "decode at a different resolution (A)");

  std::vector<const char*> argv;
  argv.push_back("fieldmol");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (threads > 0) set_max_threads(threads);

    AppConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (gen_seed >= 0 && app.got_subcommand(gen)) cfg.seed = static_cast<std::uint64_t>(gen_seed);
    if (gen_count > 0 && app.got_subcommand(gen)) cfg.data.count = static_cast<int>(gen_count);
    cfg.field.train.seed = cfg.seed;
    cfg.denoiser.train.seed = cfg.seed;

    const std::string name = app.get_subcommands().front()->get_name();
    log_run(out, name, cfg);

    if (app.got_subcommand(gen)) return cmd_gen_data(cfg, gen_out, out);
    if (app.got_subcommand(tf))
      return cmd_train_field(cfg, tf_data, tf_out, tf_state, tf_resume, tf_log, out);
    if (app.got_subcommand(fc)) return cmd_fit_codes(cfg, fc_field, fc_data, fc_out, out);
    if (app.got_subcommand(td))
      return cmd_train_denoiser(cfg, td_field, td_out, td_state, td_resume, td_log, out);
    if (app.got_subcommand(sm))
      return cmd_sample(cfg, sm_denoiser, sm_out, sm_steps, sm_chains, sm_seed, out);
    if (app.got_subcommand(dc)) return cmd_decode(cfg, dc_field, dc_codes, dc_out, dc_report, out);
    if (app.got_subcommand(ev)) return cmd_eval(ev_gen, ev_ref, ev_out, ev_hist, out);
    if (app.got_subcommand(rc))
      return cmd_reconstruct(cfg, rc_field, rc_data, rc_out, rc_no_refine, rc_resolution, out);
    err << "error: unknown command\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace fieldmol

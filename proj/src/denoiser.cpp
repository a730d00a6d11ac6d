#include "fieldmol/denoiser.hpp"

#include <cmath>
#include <ostream>

#include "fieldmol/rng.hpp"

namespace fieldmol {

namespace {

constexpr std::uint64_t kShuffleTag = 0x64736875ull;
constexpr std::uint64_t kNoiseTag = 0x646e6f69ull;
constexpr std::uint64_t kDropTag = 0x6464726full;

nlohmann::json cfg_to_json(const DenoiserConfig& cfg) {
  return {{"code_dim", cfg.code_dim}, {"hidden", cfg.hidden},   {"blocks", cfg.blocks},
          {"dropout", cfg.dropout},   {"sigma", cfg.sigma}};
}

DenoiserConfig cfg_from_json(const nlohmann::json& j) {
  DenoiserConfig cfg;
  cfg.code_dim = j.at("code_dim").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.blocks = j.at("blocks").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.sigma = j.at("sigma").get<double>();
  cfg.validate();
  return cfg;
}

void store_refs(TensorContainer& c, const std::string& prefix,
                std::vector<TensorRefT<float>> refs) {
  for (const auto& r : refs) {
    TensorContainer::Entry e;
    e.shape = r.shape;
    e.data.assign(r.data, r.data + r.size);
    c.tensors[prefix + r.name] = std::move(e);
  }
}

void load_refs(const TensorContainer& c, const std::string& prefix,
               std::vector<TensorRefT<float>> refs) {
  for (auto& r : refs) {
    const auto& e = c.at(prefix + r.name);
    if (e.data.size() != r.size)
      throw PersistError(PersistErrc::kShapeMismatch,
                         "tensor " + prefix + r.name + " has unexpected size");
    std::copy(e.data.begin(), e.data.end(), r.data);
  }
}

}  // namespace

void DenoiserTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("denoiser.epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("denoiser.batch_size", "must be >= 1");
  if (weight_decay < 0) throw ConfigError("denoiser.weight_decay", "must be >= 0");
  if (schedule.warmup_iters < 1) throw ConfigError("denoiser.warmup_iters", "must be >= 1");
  if (schedule.peak <= 0) throw ConfigError("denoiser.peak_lr", "must be > 0");
  if (ema_decay <= 0 || ema_decay >= 1) throw ConfigError("denoiser.ema_decay", "must be in (0,1)");
}

DenoiserTrainer::DenoiserTrainer(Eigen::MatrixXf normalized_codes, const DenoiserConfig& cfg,
                                 const DenoiserTrainConfig& tcfg)
    : codes_(std::move(normalized_codes)), cfg_(cfg), tcfg_(tcfg) {
  cfg_.validate();
  tcfg_.validate();
  if (codes_.rows() < 2) throw std::invalid_argument("denoiser training needs >= 2 codes");
  if (codes_.cols() != cfg_.code_dim)
    throw std::invalid_argument("denoiser: code table width does not match code_dim");
  AdamConfig acfg;
  acfg.weight_decay = tcfg_.weight_decay;
  opt_ = AdamT<float>(acfg);
  params_ = denoiser_init<float>(cfg_, tcfg_.seed);
  ema_ = params_;
}

double DenoiserTrainer::run_epoch() {
  const int n = static_cast<int>(codes_.rows());
  const int d = cfg_.code_dim;
  const int bmax = std::min(tcfg_.batch_size, n);

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(substream(tcfg_.seed, kShuffleTag, static_cast<std::uint64_t>(epoch_)));
  shuffle_rng.shuffle(order.begin(), order.end());

  double epoch_loss = 0;
  long long seen = 0;
  for (int start = 0; start < n; start += bmax) {
    const int bsz = std::min(bmax, n - start);
    Eigen::MatrixXf z(bsz, d), y(bsz, d);
    Rng noise_rng(substream(tcfg_.seed, kNoiseTag, static_cast<std::uint64_t>(iter_)));
    for (int b = 0; b < bsz; ++b) {
      z.row(b) = codes_.row(order[start + b]);
      for (int j = 0; j < d; ++j)
        y(b, j) = z(b, j) + static_cast<float>(cfg_.sigma * noise_rng.normal());
    }

    Rng drop_rng(substream(tcfg_.seed, kDropTag, static_cast<std::uint64_t>(iter_)));
    DenoiserCacheT<float> cache;
    const Eigen::MatrixXf zhat =
        denoiser_forward(params_, y, &cache, cfg_.dropout > 0 ? &drop_rng : nullptr);
    const Eigen::MatrixXf diff = zhat - z;
    const double denom = static_cast<double>(bsz) * d;
    const double loss = diff.squaredNorm() / denom;
    if (!std::isfinite(loss))
      throw NumericError("non-finite denoiser loss at iteration " + std::to_string(iter_));

    DenoiserParams grad = denoiser_zeros_like(params_);
    const Eigen::MatrixXf dout = (2.0 / denom) * diff;
    denoiser_backward(params_, cache, dout, grad);

    const double lr = lr_at(tcfg_.schedule, iter_ + 1);
    opt_.step(params_.tensor_refs(), grad.tensor_refs(), lr);
    ema_update(ema_.tensor_refs(), params_.tensor_refs(), tcfg_.ema_decay);

    history_.push_back({iter_, loss, lr});
    ++iter_;
    epoch_loss += loss * bsz;
    seen += bsz;
  }

  ++epoch_;
  last_good_ = checkpoint();
  return epoch_loss / static_cast<double>(seen);
}

void DenoiserTrainer::run(int epochs, std::ostream* log) {
  for (int e = 0; e < epochs; ++e) {
    const std::size_t first = history_.size();
    run_epoch();
    if (log) {
      for (std::size_t i = first; i < history_.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", history_[i].iter, history_[i].loss,
                      history_[i].lr);
        (*log) << buf;
      }
    }
  }
}

TensorContainer DenoiserTrainer::checkpoint() const {
  TensorContainer c;
  c.meta["kind"] = "denoiser_checkpoint";
  c.meta["denoiser"] = cfg_to_json(cfg_);
  c.meta["epoch"] = epoch_;
  c.meta["iter"] = iter_;
  c.meta["seed"] = tcfg_.seed;
  c.meta["adam_step"] = opt_.step_count();
  store_refs(c, "dn.", const_cast<DenoiserParams&>(params_).tensor_refs());
  store_refs(c, "ema.", const_cast<DenoiserParams&>(ema_).tensor_refs());
  auto prefs = const_cast<DenoiserParams&>(params_).tensor_refs();
  const auto& m = opt_.first_moments();
  const auto& v = opt_.second_moments();
  for (std::size_t k = 0; k < m.size(); ++k) {
    c.tensors["opt.dn." + prefs[k].name + ".m"] = {{m[k].size()}, m[k]};
    c.tensors["opt.dn." + prefs[k].name + ".v"] = {{v[k].size()}, v[k]};
  }
  return c;
}

void DenoiserTrainer::restore(const TensorContainer& c) {
  if (c.meta.value("kind", "") != "denoiser_checkpoint")
    throw PersistError(PersistErrc::kBadManifest, "not a denoiser checkpoint");
  const DenoiserConfig cfg = cfg_from_json(c.meta.at("denoiser"));
  if (cfg.code_dim != cfg_.code_dim || cfg.hidden != cfg_.hidden || cfg.blocks != cfg_.blocks)
    throw PersistError(PersistErrc::kShapeMismatch, "checkpoint architecture mismatch");
  load_refs(c, "dn.", params_.tensor_refs());
  load_refs(c, "ema.", ema_.tensor_refs());
  epoch_ = c.meta.at("epoch").get<int>();
  iter_ = c.meta.at("iter").get<long long>();
  auto prefs = params_.tensor_refs();
  std::vector<std::vector<float>> m, v;
  for (const auto& r : prefs) {
    m.push_back(c.at("opt.dn." + r.name + ".m").data);
    v.push_back(c.at("opt.dn." + r.name + ".v").data);
  }
  opt_.set_state(std::move(m), std::move(v), c.meta.at("adam_step").get<long long>());
  last_good_ = checkpoint();
}

TensorContainer make_denoiser_checkpoint(const DenoiserParams& params, const DenoiserParams& ema,
                                         const CodeSet& codes) {
  if (!codes.normalized())
    throw std::invalid_argument("denoiser checkpoint needs normalized code stats");
  TensorContainer c;
  c.meta["kind"] = "denoiser_model";
  c.meta["denoiser"] = cfg_to_json(params.cfg);
  c.meta["sigma"] = params.cfg.sigma;
  c.meta["code_min"] = codes.code_min;
  c.meta["code_max"] = codes.code_max;
  store_refs(c, "dn.", const_cast<DenoiserParams&>(params).tensor_refs());
  store_refs(c, "ema.", const_cast<DenoiserParams&>(ema).tensor_refs());
  c.tensors["code_mean"] = {{static_cast<std::size_t>(codes.mean.size())},
                            {codes.mean.data(), codes.mean.data() + codes.mean.size()}};
  c.tensors["code_std"] = {{static_cast<std::size_t>(codes.stdev.size())},
                           {codes.stdev.data(), codes.stdev.data() + codes.stdev.size()}};
  return c;
}

DenoiserCheckpoint parse_denoiser_checkpoint(const TensorContainer& c) {
  DenoiserCheckpoint ck;
  const DenoiserConfig cfg = cfg_from_json(c.meta.at("denoiser"));
  ck.params.resize(cfg);
  ck.ema.resize(cfg);
  load_refs(c, "dn.", ck.params.tensor_refs());
  load_refs(c, "ema.", ck.ema.tensor_refs());
  const auto& mean = c.at("code_mean").data;
  const auto& sd = c.at("code_std").data;
  ck.code_stats.mean =
      Eigen::Map<const Eigen::VectorXf>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  ck.code_stats.stdev =
      Eigen::Map<const Eigen::VectorXf>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  ck.code_stats.code_min = c.meta.at("code_min").get<float>();
  ck.code_stats.code_max = c.meta.at("code_max").get<float>();
  return ck;
}

}  // namespace fieldmol

#include "fieldmol/trainer.hpp"

#include <cmath>
#include <ostream>

#include "fieldmol/parallel.hpp"
#include "fieldmol/rng.hpp"

namespace fieldmol {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566ull;
constexpr std::uint64_t kPointsTag = 0x706f696eull;
constexpr std::uint64_t kFitTag = 0x66697421ull;

nlohmann::json spec_to_json(const FieldSpec& spec) {
  nlohmann::json j;
  j["radius"] = spec.radius;
  j["box_side"] = spec.box_side;
  j["resolution"] = spec.resolution;
  std::vector<std::string> channels;
  for (auto e : spec.channels) channels.emplace_back(symbol_of(e));
  j["channels"] = channels;
  return j;
}

FieldSpec spec_from_json(const nlohmann::json& j) {
  FieldSpec spec;
  spec.radius = j.at("radius").get<double>();
  spec.box_side = j.at("box_side").get<double>();
  spec.resolution = j.at("resolution").get<double>();
  spec.channels.clear();
  for (const auto& s : j.at("channels")) {
    auto e = element_from_symbol(s.get<std::string>());
    if (!e) throw PersistError(PersistErrc::kBadManifest, "unknown channel element in manifest");
    spec.channels.push_back(*e);
  }
  spec.validate();
  return spec;
}

nlohmann::json mfn_cfg_to_json(const MfnConfig& cfg) {
  return {{"depth", cfg.depth},
          {"hidden", cfg.hidden},
          {"code_dim", cfg.code_dim},
          {"out_channels", cfg.out_channels},
          {"freq_scale", cfg.freq_scale}};
}

MfnConfig mfn_cfg_from_json(const nlohmann::json& j) {
  MfnConfig cfg;
  cfg.depth = j.at("depth").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.code_dim = j.at("code_dim").get<int>();
  cfg.out_channels = j.at("out_channels").get<int>();
  cfg.freq_scale = j.at("freq_scale").get<double>();
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

TensorContainer::Entry matrix_entry(const Eigen::MatrixXf& m) {
  TensorContainer::Entry e;
  e.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  e.data.assign(m.data(), m.data() + m.size());
  return e;
}

Eigen::MatrixXf entry_matrix(const TensorContainer::Entry& e) {
  if (e.shape.size() != 2)
    throw PersistError(PersistErrc::kShapeMismatch, "expected rank-2 tensor");
  Eigen::MatrixXf m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
  std::copy(e.data.begin(), e.data.end(), m.data());
  return m;
}

TensorContainer::Entry vector_entry(const Eigen::VectorXf& v) {
  TensorContainer::Entry e;
  e.shape = {static_cast<std::size_t>(v.size())};
  e.data.assign(v.data(), v.data() + v.size());
  return e;
}

}  // namespace

void FieldTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("field.epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("field.batch_size", "must be >= 1");
  if (points < 2 || points % 2 != 0) throw ConfigError("field.points", "must be even and >= 2");
  if (lr_codes <= 0) throw ConfigError("field.lr_codes", "must be > 0");
  if (lr_decoder <= 0) throw ConfigError("field.lr_decoder", "must be > 0");
}

CodeSet normalize_codes(const CodeSet& raw, int* clamped_dims) {
  if (raw.codes.rows() < 2) throw std::invalid_argument("normalize_codes needs >= 2 codes");
  const Eigen::Index n = raw.codes.rows(), d = raw.codes.cols();
  CodeSet out = raw;
  out.mean.resize(d);
  out.stdev.resize(d);
  int clamped = 0;
  for (Eigen::Index j = 0; j < d; ++j) {
    double m = 0;
    for (Eigen::Index i = 0; i < n; ++i) m += raw.codes(i, j);
    m /= static_cast<double>(n);
    double var = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dlt = raw.codes(i, j) - m;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    double sd = std::sqrt(var);
    if (sd < 1e-8) {
      sd = 1e-8;
      ++clamped;
    }
    out.mean(j) = static_cast<float>(m);
    out.stdev(j) = static_cast<float>(sd);
    for (Eigen::Index i = 0; i < n; ++i)
      out.codes(i, j) = static_cast<float>((raw.codes(i, j) - m) / sd);
  }
  out.code_min = out.codes.minCoeff();
  out.code_max = out.codes.maxCoeff();
  if (clamped_dims) *clamped_dims = clamped;
  return out;
}

FieldTrainer::FieldTrainer(std::vector<Molecule> dataset, const FieldSpec& spec,
                           const MfnConfig& mfn_cfg, const FieldTrainConfig& cfg)
    : spec_(spec), mfn_cfg_(mfn_cfg), cfg_(cfg) {
  spec_.validate();
  mfn_cfg_.validate();
  cfg_.validate();
  if (dataset.empty()) throw std::invalid_argument("empty training dataset");
  if (mfn_cfg_.out_channels != spec_.channel_count())
    throw ConfigError("mfn.out_channels", "must equal the number of field channels");

  centered_.reserve(dataset.size());
  for (auto& mol : dataset) {
    mol.validate();
    Molecule c = mol.centered();
    require_fits(c, spec_);
    centered_.push_back(std::move(c));
  }

  params_ = mfn_init<float>(mfn_cfg_, cfg_.seed);
  codes_ = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(centered_.size()), mfn_cfg_.code_dim);
}

double FieldTrainer::run_epoch() {
  const int n = static_cast<int>(centered_.size());
  const int nc = spec_.channel_count();

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng(substream(cfg_.seed, kShuffleTag, static_cast<std::uint64_t>(epoch_)));
  shuffle_rng.shuffle(order.begin(), order.end());

  double epoch_loss = 0;
  for (int start = 0; start < n; start += cfg_.batch_size) {
    const int bsz = std::min(cfg_.batch_size, n - start);
    std::vector<double> losses(bsz);
    std::vector<MfnParams> grads(bsz);
    Eigen::MatrixXf code_grads(bsz, mfn_cfg_.code_dim);
    std::vector<int> rows(bsz);

    parallel_for(0, bsz, [&](int b) {
      const int mol_id = order[start + b];
      rows[b] = mol_id;
      const std::uint64_t pseed = substream(
          cfg_.seed, kPointsTag,
          static_cast<std::uint64_t>(epoch_) * static_cast<std::uint64_t>(n) + mol_id);
      PointBatch pb = sample_training_points(centered_[mol_id], spec_, cfg_.points, pseed);

      const Eigen::VectorXf code = codes_.row(mol_id).transpose();
      MfnCache cache;
      const Eigen::MatrixXf out = mfn_forward(params_, pb.coords, code, &cache);
      const Eigen::MatrixXf diff = out - pb.targets;
      const double denom = static_cast<double>(cfg_.points) * nc;
      losses[b] = diff.squaredNorm() / denom;
      const Eigen::MatrixXf dout = (2.0 / denom) * diff;

      grads[b] = mfn_zeros_like(params_);
      Eigen::VectorXf dcode = Eigen::VectorXf::Zero(mfn_cfg_.code_dim);
      mfn_backward(params_, cache, dout, code, grads[b], dcode);
      code_grads.row(b) = dcode.transpose();
    });

    // Fixed reduction order keeps results independent of the thread count.
    double batch_loss = 0;
    for (int b = 0; b < bsz; ++b) batch_loss += losses[b];
    batch_loss /= bsz;
    if (!std::isfinite(batch_loss))
      throw NumericError("non-finite training loss at iteration " + std::to_string(iter_));

    MfnParams total = std::move(grads[0]);
    {
      auto trefs = total.tensor_refs();
      for (int b = 1; b < bsz; ++b) {
        auto brefs = grads[b].tensor_refs();
        for (std::size_t k = 0; k < trefs.size(); ++k)
          for (std::size_t i = 0; i < trefs[k].size; ++i) trefs[k].data[i] += brefs[k].data[i];
      }
      const float inv = 1.0f / static_cast<float>(bsz);
      for (auto& r : trefs)
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= inv;
    }

    code_opt_.step(codes_, rows, code_grads, cfg_.lr_codes);
    decoder_opt_.step(params_.tensor_refs(), total.tensor_refs(), cfg_.lr_decoder);

    history_.push_back({iter_, batch_loss, cfg_.lr_decoder});
    ++iter_;
    epoch_loss += batch_loss * bsz;
  }

  ++epoch_;
  last_good_ = checkpoint();
  return epoch_loss / n;
}

void FieldTrainer::run(int epochs, std::ostream* log) {
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

CodeSet FieldTrainer::code_set() const {
  CodeSet cs;
  cs.codes = codes_;
  cs.ids.reserve(centered_.size());
  for (std::size_t i = 0; i < centered_.size(); ++i)
    cs.ids.push_back(centered_[i].name.empty() ? "mol" + std::to_string(i) : centered_[i].name);
  return cs;
}

TensorContainer FieldTrainer::checkpoint() const {
  TensorContainer c;
  c.meta["kind"] = "field_checkpoint";
  c.meta["field_spec"] = spec_to_json(spec_);
  c.meta["mfn"] = mfn_cfg_to_json(mfn_cfg_);
  c.meta["epoch"] = epoch_;
  c.meta["iter"] = iter_;
  c.meta["seed"] = cfg_.seed;
  c.meta["adam_step"] = decoder_opt_.step_count();
  c.meta["sparse_row_steps"] = code_opt_.row_steps();

  store_refs(c, "mfn.", const_cast<MfnParams&>(params_).tensor_refs());
  c.tensors["codes"] = matrix_entry(codes_);

  auto prefs = const_cast<MfnParams&>(params_).tensor_refs();
  const auto& m = decoder_opt_.first_moments();
  const auto& v = decoder_opt_.second_moments();
  for (std::size_t k = 0; k < m.size(); ++k) {
    c.tensors["opt.mfn." + prefs[k].name + ".m"] = {{m[k].size()}, m[k]};
    c.tensors["opt.mfn." + prefs[k].name + ".v"] = {{v[k].size()}, v[k]};
  }
  if (code_opt_.first_moments().size() > 0) {
    c.tensors["opt.codes.m"] = matrix_entry(code_opt_.first_moments());
    c.tensors["opt.codes.v"] = matrix_entry(code_opt_.second_moments());
  }
  return c;
}

void FieldTrainer::restore(const TensorContainer& c) {
  if (c.meta.value("kind", "") != "field_checkpoint")
    throw PersistError(PersistErrc::kBadManifest, "not a field checkpoint");
  const MfnConfig cfg = mfn_cfg_from_json(c.meta.at("mfn"));
  if (cfg.hidden != mfn_cfg_.hidden || cfg.depth != mfn_cfg_.depth ||
      cfg.code_dim != mfn_cfg_.code_dim || cfg.out_channels != mfn_cfg_.out_channels)
    throw PersistError(PersistErrc::kShapeMismatch, "checkpoint architecture mismatch");

  load_refs(c, "mfn.", params_.tensor_refs());
  codes_ = entry_matrix(c.at("codes"));
  if (codes_.rows() != static_cast<Eigen::Index>(centered_.size()))
    throw PersistError(PersistErrc::kShapeMismatch, "checkpoint code count mismatch");

  epoch_ = c.meta.at("epoch").get<int>();
  iter_ = c.meta.at("iter").get<long long>();

  auto prefs = params_.tensor_refs();
  std::vector<std::vector<float>> m, v;
  for (const auto& r : prefs) {
    m.push_back(c.at("opt.mfn." + r.name + ".m").data);
    v.push_back(c.at("opt.mfn." + r.name + ".v").data);
  }
  decoder_opt_.set_state(std::move(m), std::move(v), c.meta.at("adam_step").get<long long>());

  if (c.has("opt.codes.m")) {
    code_opt_.set_state(entry_matrix(c.at("opt.codes.m")), entry_matrix(c.at("opt.codes.v")),
                        c.meta.at("sparse_row_steps").get<std::vector<long long>>());
  }
  last_good_ = checkpoint();
}

Eigen::VectorXf fit_code(const MfnParams& params, const Molecule& mol, const FieldSpec& spec,
                         const FitCodeConfig& cfg) {
  mol.validate();
  Molecule centered = mol.centered();
  require_fits(centered, spec);
  const int nc = spec.channel_count();

  Eigen::VectorXf code = Eigen::VectorXf::Zero(params.cfg.code_dim);
  AdamT<float> opt;
  for (int it = 0; it < cfg.iterations; ++it) {
    PointBatch pb =
        sample_training_points(centered, spec, cfg.points, substream(cfg.seed, kFitTag, it));
    MfnCache cache;
    const Eigen::MatrixXf out = mfn_forward(params, pb.coords, code, &cache);
    const Eigen::MatrixXf diff = out - pb.targets;
    const double denom = static_cast<double>(cfg.points) * nc;
    const double loss = diff.squaredNorm() / denom;
    if (!std::isfinite(loss))
      throw NumericError("fit_code diverged at iteration " + std::to_string(it) +
                         " (non-finite loss, |code| = " + std::to_string(code.norm()) + ")");
    const Eigen::MatrixXf dout = (2.0 / denom) * diff;
    Eigen::VectorXf dcode = Eigen::VectorXf::Zero(code.size());
    mfn_backward_code_only(params, cache, dout, dcode);
    TensorRefT<float> pref{"code", code.data(), static_cast<std::size_t>(code.size()), {}};
    TensorRefT<float> gref{"code", dcode.data(), static_cast<std::size_t>(dcode.size()), {}};
    opt.step({pref}, {gref}, cfg.lr);
  }
  return code;
}

FieldFn learned_field(const MfnParams& params, const Eigen::VectorXf& code) {
  return [params, code](const PointMatrix& pts) { return mfn_forward(params, pts, code); };
}

TensorContainer make_field_checkpoint(const MfnParams& params, const CodeSet& codes,
                                      const FieldSpec& spec) {
  TensorContainer c;
  c.meta["kind"] = "field_model";
  c.meta["field_spec"] = spec_to_json(spec);
  c.meta["mfn"] = mfn_cfg_to_json(params.cfg);
  c.meta["code_ids"] = codes.ids;
  store_refs(c, "mfn.", const_cast<MfnParams&>(params).tensor_refs());
  c.tensors["codes"] = matrix_entry(codes.codes);
  if (codes.normalized()) {
    c.tensors["code_mean"] = vector_entry(codes.mean);
    c.tensors["code_std"] = vector_entry(codes.stdev);
    c.meta["code_min"] = codes.code_min;
    c.meta["code_max"] = codes.code_max;
  }
  return c;
}

FieldCheckpoint parse_field_checkpoint(const TensorContainer& c) {
  FieldCheckpoint ck;
  ck.spec = spec_from_json(c.meta.at("field_spec"));
  const MfnConfig cfg = mfn_cfg_from_json(c.meta.at("mfn"));
  ck.params.resize(cfg);
  load_refs(c, "mfn.", ck.params.tensor_refs());
  ck.codes.codes = entry_matrix(c.at("codes"));
  if (c.meta.contains("code_ids"))
    ck.codes.ids = c.meta.at("code_ids").get<std::vector<std::string>>();
  if (c.has("code_mean")) {
    const auto& mean = c.at("code_mean").data;
    const auto& sd = c.at("code_std").data;
    ck.codes.mean =
        Eigen::Map<const Eigen::VectorXf>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    ck.codes.stdev =
        Eigen::Map<const Eigen::VectorXf>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    ck.codes.code_min = c.meta.at("code_min").get<float>();
    ck.codes.code_max = c.meta.at("code_max").get<float>();
  }
  return ck;
}

}  // namespace fieldmol

#include "fieldmol/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "fieldmol/error.hpp"

namespace fieldmol {

namespace {

void check_keys(const nlohmann::json& j, const std::string& section,
                const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError(section, "must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError(section.empty() ? it.key() : section + "." + it.key(), "unknown key");
  }
}

double num_at(const nlohmann::json& j, const std::string& path, const std::string& key,
              double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(path + "." + key, "expected a number");
  return j.at(key).get<double>();
}

long long int_at(const nlohmann::json& j, const std::string& path, const std::string& key,
                 long long fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer() && !j.at(key).is_number_unsigned())
    throw ConfigError(path + "." + key, "expected an integer");
  return j.at(key).get<long long>();
}

bool bool_at(const nlohmann::json& j, const std::string& path, const std::string& key,
             bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(path + "." + key, "expected a boolean");
  return j.at(key).get<bool>();
}

}  // namespace

SamplerConfig AppConfig::sampler_config(double sigma) const {
  SamplerConfig cfg;
  cfg.sigma = sigma;
  cfg.gamma = sampler.gamma;
  cfg.delta = sampler.delta ? *sampler.delta : sigma / 2.0;
  cfg.steps = sampler.steps;
  cfg.chains = sampler.chains;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

DecodeOptions AppConfig::decode_options() const {
  DecodeOptions opts;
  opts.threshold = field.peak_threshold;
  opts.refine = field.refine;
  opts.refine_opts.radius = field.spec.radius;
  return opts;
}

void AppConfig::validate() const {
  field.spec.validate();
  field.train.validate();
  mfn.validate();
  denoiser.arch.validate();
  denoiser.train.validate();
  sampler_config(denoiser.arch.sigma);  // validates gamma/delta/steps/chains
  if (data.count < 1) throw ConfigError("data.count", "must be >= 1");
  if (data.synth.min_heavy < 3 || data.synth.min_heavy > data.synth.max_heavy ||
      data.synth.max_heavy > 16)
    throw ConfigError("data.min_heavy", "need 3 <= min_heavy <= max_heavy <= 16");
  if (!(field.peak_threshold > 0.0f && field.peak_threshold < 1.0f))
    throw ConfigError("field.peak_threshold", "must be in (0, 1)");
  if (field.fit_iterations < 1) throw ConfigError("field.fit_iterations", "must be >= 1");
  if (field.fit_lr <= 0) throw ConfigError("field.fit_lr", "must be > 0");
  if (metrics.probe_molecules < 1) throw ConfigError("metrics.probe_molecules", "must be >= 1");
  for (double s : metrics.noise_levels)
    if (s < 0) throw ConfigError("metrics.noise_levels", "levels must be >= 0");
  if (mfn.out_channels != field.spec.channel_count())
    throw ConfigError("mfn.out_channels", "derived from field.channels; do not set");
  if (denoiser.arch.code_dim != mfn.code_dim)
    throw ConfigError("denoiser.code_dim", "derived from mfn.code_dim; do not set");
}

AppConfig parse_config(const nlohmann::json& j) {
  AppConfig cfg;
  check_keys(j, "", {"seed", "data", "field", "mfn", "denoiser", "sampler", "metrics"});
  cfg.seed = static_cast<std::uint64_t>(int_at(j, "", "seed", 0));

  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"count", "min_heavy", "max_heavy", "max_extent"});
    cfg.data.count = static_cast<int>(int_at(d, "data", "count", cfg.data.count));
    cfg.data.synth.min_heavy =
        static_cast<int>(int_at(d, "data", "min_heavy", cfg.data.synth.min_heavy));
    cfg.data.synth.max_heavy =
        static_cast<int>(int_at(d, "data", "max_heavy", cfg.data.synth.max_heavy));
    cfg.data.synth.max_extent = num_at(d, "data", "max_extent", cfg.data.synth.max_extent);
  }

  if (j.contains("field")) {
    const auto& f = j.at("field");
    check_keys(f, "field",
               {"radius", "box_side", "resolution", "channels", "epochs", "batch_size", "points",
                "lr_codes", "lr_decoder", "peak_threshold", "refine", "fit_iterations", "fit_lr"});
    cfg.field.spec.radius = num_at(f, "field", "radius", cfg.field.spec.radius);
    cfg.field.spec.box_side = num_at(f, "field", "box_side", cfg.field.spec.box_side);
    cfg.field.spec.resolution = num_at(f, "field", "resolution", cfg.field.spec.resolution);
    if (f.contains("channels")) {
      if (!f.at("channels").is_array()) throw ConfigError("field.channels", "expected an array");
      cfg.field.spec.channels.clear();
      for (const auto& s : f.at("channels")) {
        if (!s.is_string()) throw ConfigError("field.channels", "expected element symbols");
        auto e = element_from_symbol(s.get<std::string>());
        if (!e)
          throw ConfigError("field.channels", "unknown element '" + s.get<std::string>() + "'");
        cfg.field.spec.channels.push_back(*e);
      }
    }
    cfg.field.train.epochs = static_cast<int>(int_at(f, "field", "epochs", cfg.field.train.epochs));
    cfg.field.train.batch_size =
        static_cast<int>(int_at(f, "field", "batch_size", cfg.field.train.batch_size));
    cfg.field.train.points = static_cast<int>(int_at(f, "field", "points", cfg.field.train.points));
    cfg.field.train.lr_codes = num_at(f, "field", "lr_codes", cfg.field.train.lr_codes);
    cfg.field.train.lr_decoder = num_at(f, "field", "lr_decoder", cfg.field.train.lr_decoder);
    cfg.field.peak_threshold =
        static_cast<float>(num_at(f, "field", "peak_threshold", cfg.field.peak_threshold));
    cfg.field.refine = bool_at(f, "field", "refine", cfg.field.refine);
    cfg.field.fit_iterations =
        static_cast<int>(int_at(f, "field", "fit_iterations", cfg.field.fit_iterations));
    cfg.field.fit_lr = num_at(f, "field", "fit_lr", cfg.field.fit_lr);
  }

  if (j.contains("mfn")) {
    const auto& m = j.at("mfn");
    check_keys(m, "mfn", {"depth", "hidden", "code_dim", "freq_scale"});
    cfg.mfn.depth = static_cast<int>(int_at(m, "mfn", "depth", cfg.mfn.depth));
    cfg.mfn.hidden = static_cast<int>(int_at(m, "mfn", "hidden", cfg.mfn.hidden));
    cfg.mfn.code_dim = static_cast<int>(int_at(m, "mfn", "code_dim", cfg.mfn.code_dim));
    cfg.mfn.freq_scale = num_at(m, "mfn", "freq_scale", cfg.mfn.freq_scale);
  }
  cfg.mfn.out_channels = cfg.field.spec.channel_count();

  if (j.contains("denoiser")) {
    const auto& d = j.at("denoiser");
    check_keys(d, "denoiser",
               {"hidden", "blocks", "dropout", "sigma", "epochs", "batch_size", "weight_decay",
                "warmup_iters", "peak_lr", "ema_decay"});
    cfg.denoiser.arch.hidden =
        static_cast<int>(int_at(d, "denoiser", "hidden", cfg.denoiser.arch.hidden));
    cfg.denoiser.arch.blocks =
        static_cast<int>(int_at(d, "denoiser", "blocks", cfg.denoiser.arch.blocks));
    cfg.denoiser.arch.dropout = num_at(d, "denoiser", "dropout", cfg.denoiser.arch.dropout);
    cfg.denoiser.arch.sigma = num_at(d, "denoiser", "sigma", cfg.denoiser.arch.sigma);
    cfg.denoiser.train.epochs =
        static_cast<int>(int_at(d, "denoiser", "epochs", cfg.denoiser.train.epochs));
    cfg.denoiser.train.batch_size =
        static_cast<int>(int_at(d, "denoiser", "batch_size", cfg.denoiser.train.batch_size));
    cfg.denoiser.train.weight_decay =
        num_at(d, "denoiser", "weight_decay", cfg.denoiser.train.weight_decay);
    cfg.denoiser.train.schedule.warmup_iters =
        int_at(d, "denoiser", "warmup_iters", cfg.denoiser.train.schedule.warmup_iters);
    cfg.denoiser.train.schedule.peak =
        num_at(d, "denoiser", "peak_lr", cfg.denoiser.train.schedule.peak);
    cfg.denoiser.train.ema_decay = num_at(d, "denoiser", "ema_decay", cfg.denoiser.train.ema_decay);
  }
  cfg.denoiser.arch.code_dim = cfg.mfn.code_dim;

  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    check_keys(s, "sampler", {"steps", "chains", "gamma", "delta"});
    cfg.sampler.steps = int_at(s, "sampler", "steps", cfg.sampler.steps);
    cfg.sampler.chains = static_cast<int>(int_at(s, "sampler", "chains", cfg.sampler.chains));
    cfg.sampler.gamma = num_at(s, "sampler", "gamma", cfg.sampler.gamma);
    if (s.contains("delta") && !s.at("delta").is_null())
      cfg.sampler.delta = num_at(s, "sampler", "delta", 0.0);
  }

  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "metrics", {"noise_levels", "probe_molecules"});
    if (m.contains("noise_levels")) {
      if (!m.at("noise_levels").is_array())
        throw ConfigError("metrics.noise_levels", "expected an array of numbers");
      cfg.metrics.noise_levels.clear();
      for (const auto& v : m.at("noise_levels")) {
        if (!v.is_number()) throw ConfigError("metrics.noise_levels", "expected a number");
        cfg.metrics.noise_levels.push_back(v.get<double>());
      }
    }
    cfg.metrics.probe_molecules =
        static_cast<int>(int_at(m, "metrics", "probe_molecules", cfg.metrics.probe_molecules));
  }

  cfg.field.train.seed = cfg.seed;
  cfg.denoiser.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << f.rdbuf();
  std::string text = buf.str();
  const auto non_ws = text.find_first_not_of(" \t\r\n");
  if (non_ws == std::string::npos) text = "{}";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("", std::string("config parse: ") + e.what());
  }
  return parse_config(j);
}

nlohmann::json AppConfig::echo() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["data"] = {{"count", data.count},
               {"min_heavy", data.synth.min_heavy},
               {"max_heavy", data.synth.max_heavy},
               {"max_extent", data.synth.max_extent}};
  std::vector<std::string> channels;
  for (auto e : field.spec.channels) channels.emplace_back(symbol_of(e));
  j["field"] = {{"radius", field.spec.radius},
                {"box_side", field.spec.box_side},
                {"resolution", field.spec.resolution},
                {"channels", channels},
                {"epochs", field.train.epochs},
                {"batch_size", field.train.batch_size},
                {"points", field.train.points},
                {"lr_codes", field.train.lr_codes},
                {"lr_decoder", field.train.lr_decoder},
                {"peak_threshold", field.peak_threshold},
                {"refine", field.refine},
                {"fit_iterations", field.fit_iterations},
                {"fit_lr", field.fit_lr}};
  j["mfn"] = {{"depth", mfn.depth},
              {"hidden", mfn.hidden},
              {"code_dim", mfn.code_dim},
              {"freq_scale", mfn.freq_scale}};
  j["denoiser"] = {{"hidden", denoiser.arch.hidden},
                   {"blocks", denoiser.arch.blocks},
                   {"dropout", denoiser.arch.dropout},
                   {"sigma", denoiser.arch.sigma},
                   {"epochs", denoiser.train.epochs},
                   {"batch_size", denoiser.train.batch_size},
                   {"weight_decay", denoiser.train.weight_decay},
                   {"warmup_iters", denoiser.train.schedule.warmup_iters},
                   {"peak_lr", denoiser.train.schedule.peak},
                   {"ema_decay", denoiser.train.ema_decay}};
  j["sampler"] = {{"steps", sampler.steps},
                  {"chains", sampler.chains},
                  {"gamma", sampler.gamma},
                  {"delta", sampler.delta ? *sampler.delta : denoiser.arch.sigma / 2.0}};
  j["metrics"] = {{"noise_levels", metrics.noise_levels},
                  {"probe_molecules", metrics.probe_molecules}};
  return j;
}

std::uint64_t AppConfig::hash() const {
  const std::string s = echo().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace fieldmol

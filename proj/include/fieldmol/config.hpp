#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "fieldmol/decoder.hpp"
#include "fieldmol/denoiser.hpp"
#include "fieldmol/field.hpp"
#include "fieldmol/mfn.hpp"
#include "fieldmol/molecule.hpp"
#include "fieldmol/sampler.hpp"
#include "fieldmol/trainer.hpp"

namespace fieldmol {

struct DataConfig {
  int count = 500;
  SyntheticConfig synth;
};

struct FieldSection {
  FieldSpec spec;
  FieldTrainConfig train;
  float peak_threshold = 0.3f;
  bool refine = true;
  int fit_iterations = 600;
  double fit_lr = 1e-2;
};

struct DenoiserSection {
  DenoiserConfig arch;  // code_dim mirrors mfn.code_dim
  DenoiserTrainConfig train;
};

struct SamplerSection {
  long steps = 1000;
  int chains = 100;
  double gamma = 1.0;
  std::optional<double> delta;  // absent -> sigma / 2
};

struct MetricsConfig {
  std::vector<double> noise_levels = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int probe_molecules = 100;
};

/// Fully-resolved run configuration. Sections: data, field, mfn, denoiser,
/// sampler, metrics, plus the global seed. Unknown keys are hard errors.
struct AppConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  FieldSection field;
  MfnConfig mfn;
  DenoiserSection denoiser;
  SamplerSection sampler;
  MetricsConfig metrics;

  /// Walk configuration at a given sigma; delta defaults to sigma / 2.
  SamplerConfig sampler_config(double sigma) const;

  DecodeOptions decode_options() const;

  void validate() const;

  /// Canonical JSON echo of the resolved configuration; reproduces the run.
  nlohmann::json echo() const;
  std::uint64_t hash() const;
};

AppConfig parse_config(const nlohmann::json& j);

/// Missing keys take defaults; an empty or whitespace-only file is treated
/// as an empty object.
AppConfig load_config(const std::string& path);

}  // namespace fieldmol

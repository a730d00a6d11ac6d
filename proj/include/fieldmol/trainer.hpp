#pragma once

#include <iosfwd>
#include <optional>

#include "fieldmol/field.hpp"
#include "fieldmol/mfn.hpp"
#include "fieldmol/optim.hpp"
#include "fieldmol/persist.hpp"

namespace fieldmol {

/// Per-molecule latent codes plus the normalization statistics needed to map
/// between raw and normalized code space.
struct CodeSet {
  Eigen::MatrixXf codes;  // n_molecules x d
  std::vector<std::string> ids;
  Eigen::VectorXf mean;   // per-dimension; empty until normalize_codes ran
  Eigen::VectorXf stdev;
  float code_min = 0.0f;  // global scalars over the normalized training codes
  float code_max = 0.0f;

  bool normalized() const { return mean.size() > 0; }

  Eigen::VectorXf denormalize(const Eigen::VectorXf& z) const {
    return z.cwiseProduct(stdev) + mean;
  }
  Eigen::VectorXf normalize(const Eigen::VectorXf& z) const {
    return (z - mean).cwiseQuotient(stdev);
  }
};

/// Per-dimension affine transform to zero mean and unit variance (population
/// convention). Zero-variance dimensions are clamped to std 1e-8; the number
/// of clamped dimensions is reported through clamped_dims.
CodeSet normalize_codes(const CodeSet& raw, int* clamped_dims = nullptr);

struct FieldTrainConfig {
  int epochs = 150;
  int batch_size = 16;
  int points = 4000;  // fresh points per molecule per visit; must be even
  double lr_codes = 1e-3;
  double lr_decoder = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossRecord {
  long long iter;
  double loss;  // mean squared error per point per channel
  double lr;
};

/// Joint auto-decoding optimization of the shared field decoder and the
/// per-molecule codes. Codes start at zero; each visit resamples a fresh
/// point batch; code rows step with sparse Adam and the decoder with Adam.
/// Training is bit-reproducible given (seed); checkpoints resume exactly at
/// epoch boundaries because every random stream is derived from
/// (seed, epoch, molecule).
class FieldTrainer {
 public:
  FieldTrainer(std::vector<Molecule> dataset, const FieldSpec& spec, const MfnConfig& mfn_cfg,
               const FieldTrainConfig& cfg);

  /// One pass over the dataset. Returns the epoch mean loss. Throws
  /// NumericError on a non-finite loss after stashing the last good state
  /// (available via last_good_checkpoint()).
  double run_epoch();

  void run(int epochs, std::ostream* log = nullptr);

  int epoch() const { return epoch_; }
  const std::vector<LossRecord>& history() const { return history_; }
  const MfnParams& params() const { return params_; }
  const FieldSpec& spec() const { return spec_; }
  const MfnConfig& mfn_config() const { return mfn_cfg_; }
  const std::vector<Molecule>& molecules() const { return centered_; }

  /// Raw (unnormalized) codes with molecule ids.
  CodeSet code_set() const;

  TensorContainer checkpoint() const;
  /// Restores optimizer state, parameters, codes and epoch counter. The
  /// dataset and configs must match the ones the checkpoint was made with.
  void restore(const TensorContainer& c);

  const std::optional<TensorContainer>& last_good_checkpoint() const { return last_good_; }

 private:
  std::vector<Molecule> centered_;
  FieldSpec spec_;
  MfnConfig mfn_cfg_;
  FieldTrainConfig cfg_;
  MfnParams params_;
  Eigen::MatrixXf codes_;
  Adam decoder_opt_;
  SparseAdam code_opt_;
  int epoch_ = 0;
  long long iter_ = 0;
  std::vector<LossRecord> history_;
  std::optional<TensorContainer> last_good_;
};

struct FitCodeConfig {
  int iterations = 600;
  int points = 4000;
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

/// Test-time auto-decoding: optimizes a code for one molecule against frozen
/// decoder parameters, starting from zero. Throws NumericError on divergence.
Eigen::VectorXf fit_code(const MfnParams& params, const Molecule& mol, const FieldSpec& spec,
                         const FitCodeConfig& cfg);

/// Learned field of one code as a batched FieldFn (normalized coords).
FieldFn learned_field(const MfnParams& params, const Eigen::VectorXf& code);

/// Field-checkpoint schema on top of the tensor container.
TensorContainer make_field_checkpoint(const MfnParams& params, const CodeSet& codes,
                                      const FieldSpec& spec);
struct FieldCheckpoint {
  MfnParams params;
  CodeSet codes;
  FieldSpec spec;
};
FieldCheckpoint parse_field_checkpoint(const TensorContainer& c);

}  // namespace fieldmol

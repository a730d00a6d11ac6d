#pragma once

#include <map>
#include <string>
#include <vector>

#include "fieldmol/decoder.hpp"
#include "fieldmol/molecule.hpp"
#include "fieldmol/trainer.hpp"

namespace fieldmol {

struct StabilityResult {
  bool stable_molecule;
  double stable_atom_fraction;
};

/// An atom is stable when its summed bond order is an allowed valence of its
/// element; the molecule is stable when every atom is.
StabilityResult stability(const Molecule& mol, const BondGraph& bonds, const ValencyTable& table);

/// Exact 1-D first Wasserstein distance between two empirical samples
/// (equal weights; unequal sizes handled by the CDF-difference integral,
/// which equals the merged-quantile coupling).
double wasserstein1d(std::vector<double> a, std::vector<double> b);

/// 0.5 * sum |p_hat - q_hat| over the union of categories.
double total_variation(const std::map<long, long>& p, const std::map<long, long>& q);

/// Per-molecule bond statistics used by the distance metrics.
std::vector<double> bond_lengths(const Molecule& mol, const BondGraph& bonds);
/// All bonded triples j-i-k, in degrees.
std::vector<double> bond_angles_deg(const Molecule& mol, const BondGraph& bonds);

struct SampleSetReport {
  int generated_count = 0;
  int reference_count = 0;
  double stable_mol_pct = 0;
  double stable_atom_pct = 0;
  double validity_pct = 0;      // single fragment + all valences allowed
  double uniqueness_pct = 0;    // distinct graph hashes among valid molecules
  double single_fragment_pct = 0;
  double valency_w1 = 0;
  double atom_tv = 0;
  double bond_tv = 0;
  double bond_len_w1 = 0;       // Angstrom
  double bond_angle_w1 = 0;     // degrees
  double atoms_per_mol_tv = 0;

  std::string csv() const;    // two lines: header + values
  std::string table() const;  // human-readable summary
};

SampleSetReport evaluate_sample_set(const std::vector<Molecule>& generated,
                                    const std::vector<Molecule>& reference,
                                    const ElementTables& tables = ElementTables::builtin());

/// Histogram dumps (bond lengths / angles / atoms per molecule) for external
/// plotting; one value per line.
std::string histogram_csv(const std::vector<double>& values);

struct ReconstructionReport {
  double mse = 0;
  double psnr = 0;  // -10 log10(mse), capped at 120 dB for mse < 1e-12
  double atom_count_accuracy = 0;  // exact per-channel counts
  double mean_rmsd = 0;            // over count-exact reconstructions, aligned
  int rmsd_count = 0;
  int decode_failures = 0;

  std::string csv() const;
};

/// One decodable field: a batched evaluator plus the per-channel oracle the
/// refiner consumes.
struct FieldProvider {
  FieldFn field;
  ChannelOracle oracle;
};

/// Generic reconstruction metrics against per-molecule fields (index-aligned
/// with mols): dense-grid MSE/PSNR plus decoded atom-count accuracy and
/// aligned RMSD.
ReconstructionReport reconstruction_metrics_custom(
    const std::function<FieldProvider(int)>& provider, const std::vector<Molecule>& mols,
    const FieldSpec& spec, const DecodeOptions& opts = {});

/// Field + molecule reconstruction quality of codes against their molecules;
/// codes are rows in denormalized space, aligned with mols.
ReconstructionReport reconstruction_metrics(const MfnParams& params, const Eigen::MatrixXf& codes,
                                            const std::vector<Molecule>& mols,
                                            const FieldSpec& spec, const DecodeOptions& opts = {});

/// Stability percentage after perturbing normalized codes with N(0, s^2) for
/// each s in noise_levels, decoded on the first n_molecules codes.
std::vector<double> noise_robustness_curve(const MfnParams& params, const CodeSet& codes,
                                           const std::vector<double>& noise_levels,
                                           int n_molecules, const FieldSpec& spec,
                                           std::uint64_t seed, const DecodeOptions& opts = {});

/// Least-squares rigid alignment (rotation + translation) of matched point
/// sets; returns the aligned RMSD.
double kabsch_rmsd(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b);

}  // namespace fieldmol

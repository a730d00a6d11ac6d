#include "fieldmol/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "fieldmol/rng.hpp"

namespace fieldmol {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

StabilityResult stability(const Molecule& mol, const BondGraph& bonds, const ValencyTable& table) {
  int stable = 0;
  for (int i = 0; i < mol.size(); ++i) {
    if (!table.has_entry(mol.elements[i]))
      throw std::invalid_argument("element " + std::string(symbol_of(mol.elements[i])) +
                                  " missing from valency table");
    if (table.contains(mol.elements[i], bonds.valence[i])) ++stable;
  }
  return {stable == mol.size(), static_cast<double>(stable) / mol.size()};
}

double wasserstein1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double w = 0, fa = 0, fb = 0, x_prev = 0;
  bool first = true;
  while (i < a.size() || j < b.size()) {
    double x;
    if (j >= b.size() || (i < a.size() && a[i] <= b[j]))
      x = a[i];
    else
      x = b[j];
    if (!first) w += std::abs(fa - fb) * (x - x_prev);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    fa = static_cast<double>(i) / na;
    fb = static_cast<double>(j) / nb;
    x_prev = x;
    first = false;
  }
  return w;
}

double total_variation(const std::map<long, long>& p, const std::map<long, long>& q) {
  double np = 0, nq = 0;
  for (const auto& [k, v] : p) np += static_cast<double>(v);
  for (const auto& [k, v] : q) nq += static_cast<double>(v);
  if (np == 0 && nq == 0) throw std::invalid_argument("total_variation: both histograms empty");
  std::set<long> keys;
  for (const auto& [k, v] : p) keys.insert(k);
  for (const auto& [k, v] : q) keys.insert(k);
  double tv = 0;
  for (long k : keys) {
    const double ph = p.count(k) ? p.at(k) / np : 0.0;
    const double qh = q.count(k) ? q.at(k) / nq : 0.0;
    tv += std::abs(ph - qh);
  }
  return 0.5 * tv;
}

std::vector<double> bond_lengths(const Molecule& mol, const BondGraph& bonds) {
  std::vector<double> out;
  out.reserve(bonds.bonds.size());
  for (const auto& b : bonds.bonds) out.push_back((mol.coords[b.i] - mol.coords[b.j]).norm());
  return out;
}

std::vector<double> bond_angles_deg(const Molecule& mol, const BondGraph& bonds) {
  std::vector<double> out;
  for (int i = 0; i < mol.size(); ++i) {
    const auto& neigh = bonds.adj[i];
    for (std::size_t a = 0; a < neigh.size(); ++a) {
      for (std::size_t b = a + 1; b < neigh.size(); ++b) {
        const Eigen::Vector3d u = mol.coords[neigh[a].first] - mol.coords[i];
        const Eigen::Vector3d v = mol.coords[neigh[b].first] - mol.coords[i];
        const double denom = u.norm() * v.norm();
        if (denom <= 0) continue;
        const double cosang = std::clamp(u.dot(v) / denom, -1.0, 1.0);
        out.push_back(std::acos(cosang) * 180.0 / M_PI);
      }
    }
  }
  return out;
}

namespace {

struct SideStats {
  std::map<long, long> atom_hist;
  std::map<long, long> order_hist;
  std::map<long, long> atoms_per_mol_hist;  // largest fragment
  std::vector<double> valences;
  std::vector<double> lengths;
  std::vector<double> angles;
};

SideStats collect(const std::vector<Molecule>& mols, const ElementTables& tables) {
  SideStats s;
  for (const auto& mol : mols) {
    const BondGraph g = infer_bonds(mol, tables);
    for (int i = 0; i < mol.size(); ++i) {
      s.atom_hist[static_cast<long>(mol.elements[i])]++;
      s.valences.push_back(g.valence[i]);
    }
    for (const auto& b : g.bonds) s.order_hist[b.order]++;
    s.atoms_per_mol_hist[g.largest_fragment_size()]++;
    auto lens = bond_lengths(mol, g);
    s.lengths.insert(s.lengths.end(), lens.begin(), lens.end());
    auto angs = bond_angles_deg(mol, g);
    s.angles.insert(s.angles.end(), angs.begin(), angs.end());
  }
  return s;
}

}  // namespace

SampleSetReport evaluate_sample_set(const std::vector<Molecule>& generated,
                                    const std::vector<Molecule>& reference,
                                    const ElementTables& tables) {
  if (generated.empty() || reference.empty())
    throw std::invalid_argument("evaluate_sample_set: need at least one molecule per side");

  SampleSetReport r;
  r.generated_count = static_cast<int>(generated.size());
  r.reference_count = static_cast<int>(reference.size());

  long stable_mols = 0, valid = 0, single_frag = 0;
  long stable_atoms = 0, total_atoms = 0;
  std::set<std::uint64_t> hashes;
  for (const auto& mol : generated) {
    const BondGraph g = infer_bonds(mol, tables);
    const StabilityResult st = stability(mol, g, tables.valency);
    stable_mols += st.stable_molecule ? 1 : 0;
    stable_atoms += static_cast<long>(std::lround(st.stable_atom_fraction * mol.size()));
    total_atoms += mol.size();
    single_frag += g.connected() ? 1 : 0;
    const bool is_valid = st.stable_molecule && g.connected();
    if (is_valid) {
      ++valid;
      hashes.insert(graph_hash(mol, g));
    }
  }
  r.stable_mol_pct = 100.0 * stable_mols / r.generated_count;
  r.stable_atom_pct = 100.0 * stable_atoms / std::max<long>(1, total_atoms);
  r.validity_pct = 100.0 * valid / r.generated_count;
  r.single_fragment_pct = 100.0 * single_frag / r.generated_count;
  r.uniqueness_pct = valid > 0 ? 100.0 * static_cast<double>(hashes.size()) / valid : 0.0;

  const SideStats gen = collect(generated, tables);
  const SideStats ref = collect(reference, tables);
  r.valency_w1 = wasserstein1d(gen.valences, ref.valences);
  r.atom_tv = total_variation(gen.atom_hist, ref.atom_hist);
  if (gen.order_hist.empty() && ref.order_hist.empty())
    r.bond_tv = 0.0;
  else if (gen.order_hist.empty() || ref.order_hist.empty())
    r.bond_tv = 1.0;
  else
    r.bond_tv = total_variation(gen.order_hist, ref.order_hist);
  r.bond_len_w1 = (gen.lengths.empty() || ref.lengths.empty())
                      ? 0.0
                      : wasserstein1d(gen.lengths, ref.lengths);
  r.bond_angle_w1 =
      (gen.angles.empty() || ref.angles.empty()) ? 0.0 : wasserstein1d(gen.angles, ref.angles);
  r.atoms_per_mol_tv = total_variation(gen.atoms_per_mol_hist, ref.atoms_per_mol_hist);
  return r;
}

std::string SampleSetReport::csv() const {
  std::string head =
      "generated,reference,stable_mol_pct,stable_atom_pct,validity_pct,uniqueness_pct,"
      "single_fragment_pct,valency_w1,atom_tv,bond_tv,bond_len_w1,bond_angle_w1,"
      "atoms_per_mol_tv";
  std::string row = std::to_string(generated_count) + "," + std::to_string(reference_count) +
                    "," + fmt(stable_mol_pct) + "," + fmt(stable_atom_pct) + "," +
                    fmt(validity_pct) + "," + fmt(uniqueness_pct) + "," +
                    fmt(single_fragment_pct) + "," + fmt(valency_w1) + "," + fmt(atom_tv) + "," +
                    fmt(bond_tv) + "," + fmt(bond_len_w1) + "," + fmt(bond_angle_w1) + "," +
                    fmt(atoms_per_mol_tv);
  return head + "\n" + row + "\n";
}

std::string SampleSetReport::table() const {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "molecules        %d generated vs %d reference\n"
                "stable mol %%     %.1f\n"
                "stable atom %%    %.1f\n"
                "validity %%       %.1f\n"
                "uniqueness %%     %.1f\n"
                "single frag %%    %.1f\n"
                "valency W1       %.4f\n"
                "atom TV          %.4f\n"
                "bond TV          %.4f\n"
                "bond len W1 (A)  %.4f\n"
                "bond angle W1    %.3f\n"
                "atoms/mol TV     %.4f\n",
                generated_count, reference_count, stable_mol_pct, stable_atom_pct, validity_pct,
                uniqueness_pct, single_fragment_pct, valency_w1, atom_tv, bond_tv, bond_len_w1,
                bond_angle_w1, atoms_per_mol_tv);
  return buf;
}

std::string histogram_csv(const std::vector<double>& values) {
  std::string out = "value\n";
  for (double v : values) out += fmt(v) + "\n";
  return out;
}

double kabsch_rmsd(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("kabsch_rmsd: mismatched point sets");
  const int n = static_cast<int>(a.size());
  Eigen::Vector3d ca = Eigen::Vector3d::Zero(), cb = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    ca += a[i];
    cb += b[i];
  }
  ca /= n;
  cb /= n;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int i = 0; i < n; ++i) h += (a[i] - ca) * (b[i] - cb).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() > 0 ? 1.0 : -1.0;
  const Eigen::Matrix3d rot = svd.matrixV() * d * svd.matrixU().transpose();
  double sq = 0;
  for (int i = 0; i < n; ++i) sq += (rot * (a[i] - ca) - (b[i] - cb)).squaredNorm();
  return std::sqrt(sq / n);
}

namespace {

/// Greedy per-element nearest matching; adequate when displacements are far
/// below interatomic distances, which reconstruction checks guarantee.
bool match_atoms(const Molecule& truth, const Molecule& decoded,
                 std::vector<Eigen::Vector3d>& ta, std::vector<Eigen::Vector3d>& da) {
  std::vector<bool> used(truth.size(), false);
  for (int i = 0; i < decoded.size(); ++i) {
    int best = -1;
    double best_d = 1e30;
    for (int j = 0; j < truth.size(); ++j) {
      if (used[j] || truth.elements[j] != decoded.elements[i]) continue;
      const double d = (truth.coords[j] - decoded.coords[i]).norm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best < 0) return false;
    used[best] = true;
    da.push_back(decoded.coords[i]);
    ta.push_back(truth.coords[best]);
  }
  return true;
}

}  // namespace

ReconstructionReport reconstruction_metrics_custom(
    const std::function<FieldProvider(int)>& provider, const std::vector<Molecule>& mols,
    const FieldSpec& spec, const DecodeOptions& opts) {
  ReconstructionReport rep;
  double sq_sum = 0;
  long long count = 0;
  int count_exact = 0;
  double rmsd_sum = 0;

  for (std::size_t i = 0; i < mols.size(); ++i) {
    const Molecule truth = mols[i].centered();
    const FieldProvider fp = provider(static_cast<int>(i));
    const VoxelGrid learned = render_voxel_grid(fp.field, spec);
    const VoxelGrid gt = render_ground_truth(truth, spec);
    for (std::size_t v = 0; v < learned.data.size(); ++v) {
      const double d = static_cast<double>(learned.data[v]) - gt.data[v];
      sq_sum += d * d;
    }
    count += static_cast<long long>(learned.data.size());

    try {
      const Molecule decoded = molecule_from_grid(learned, fp.oracle, spec, opts);
      std::map<long, long> want, got;
      for (auto e : truth.elements) want[static_cast<long>(e)]++;
      for (auto e : decoded.elements) got[static_cast<long>(e)]++;
      if (want == got) {
        ++count_exact;
        std::vector<Eigen::Vector3d> ta, da;
        if (match_atoms(truth, decoded, ta, da)) {
          rmsd_sum += kabsch_rmsd(da, ta);
          ++rep.rmsd_count;
        }
      }
    } catch (const DecodeError&) {
      ++rep.decode_failures;
    }
  }

  rep.mse = sq_sum / static_cast<double>(count);
  rep.psnr = rep.mse < 1e-12 ? 120.0 : -10.0 * std::log10(rep.mse);
  rep.atom_count_accuracy = static_cast<double>(count_exact) / static_cast<double>(mols.size());
  rep.mean_rmsd = rep.rmsd_count > 0 ? rmsd_sum / rep.rmsd_count : 0.0;
  return rep;
}

ReconstructionReport reconstruction_metrics(const MfnParams& params, const Eigen::MatrixXf& codes,
                                            const std::vector<Molecule>& mols,
                                            const FieldSpec& spec, const DecodeOptions& opts) {
  if (codes.rows() != static_cast<Eigen::Index>(mols.size()))
    throw std::invalid_argument("reconstruction_metrics: codes and molecules misaligned");
  auto provider = [&](int i) {
    const Eigen::VectorXf code = codes.row(i).transpose();
    return FieldProvider{learned_field(params, code), mfn_channel_oracle(params, code, spec)};
  };
  return reconstruction_metrics_custom(provider, mols, spec, opts);
}

std::string ReconstructionReport::csv() const {
  std::string head = "mse,psnr,atom_count_accuracy,mean_rmsd,rmsd_count,decode_failures";
  std::string row = fmt(mse) + "," + fmt(psnr) + "," + fmt(atom_count_accuracy) + "," +
                    fmt(mean_rmsd) + "," + std::to_string(rmsd_count) + "," +
                    std::to_string(decode_failures);
  return head + "\n" + row + "\n";
}

std::vector<double> noise_robustness_curve(const MfnParams& params, const CodeSet& codes,
                                           const std::vector<double>& noise_levels,
                                           int n_molecules, const FieldSpec& spec,
                                           std::uint64_t seed, const DecodeOptions& opts) {
  if (!codes.normalized())
    throw std::invalid_argument("noise_robustness_curve: normalized codes required");
  const int n = std::min<int>(n_molecules, static_cast<int>(codes.codes.rows()));
  const auto& tables = ElementTables::builtin();

  std::vector<double> curve;
  for (std::size_t li = 0; li < noise_levels.size(); ++li) {
    const double s = noise_levels[li];
    Rng rng(substream(seed, 0x6e6f6973ull, li));
    int stable = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXf z = codes.codes.row(i).transpose();
      for (Eigen::Index j = 0; j < z.size(); ++j)
        z(j) += static_cast<float>(s * rng.normal());
      const Eigen::VectorXf denorm = codes.denormalize(z);
      try {
        const Molecule mol = decode_code(denorm, params, spec, opts);
        const BondGraph g = infer_bonds(mol, tables);
        if (stability(mol, g, tables.valency).stable_molecule) ++stable;
      } catch (const DecodeError&) {
        // counts as unstable
      }
    }
    curve.push_back(100.0 * stable / std::max(1, n));
  }
  return curve;
}

}  // namespace fieldmol

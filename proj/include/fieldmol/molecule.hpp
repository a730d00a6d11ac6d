#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "fieldmol/elements.hpp"

namespace fieldmol {

/// Atoms with 3D coordinates in Angstrom. Invariants: one coordinate per
/// element, all coordinates finite, at least one atom.
struct Molecule {
  std::vector<Element> elements;
  std::vector<Eigen::Vector3d> coords;
  std::string name;

  int size() const { return static_cast<int>(elements.size()); }

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  /// Axis-aligned bounding box (min, max corners).
  std::pair<Eigen::Vector3d, Eigen::Vector3d> bounding_box() const;

  /// Copy translated so the bounding-box center sits at the origin.
  Molecule centered() const;
};

Molecule parse_xyz(const std::string& text);
std::string write_xyz(const Molecule& mol);

/// Concatenated XYZ frames, the corpus format used on disk.
std::vector<Molecule> parse_xyz_corpus(const std::string& text);
std::string write_xyz_corpus(const std::vector<Molecule>& mols);

struct Bond {
  int i, j;   // i < j
  int order;  // 1..3
};

struct BondGraph {
  std::vector<Bond> bonds;
  std::vector<int> valence;                            // per atom, sum of incident orders
  std::vector<std::vector<std::pair<int, int>>> adj;   // per atom: (neighbor, order)
  std::vector<int> fragment_of;                        // connected-component label per atom
  int fragments = 0;

  bool connected() const { return fragments == 1; }
  int largest_fragment_size() const;
};

/// Distance heuristic: bond iff dist <= r_cov(i) + r_cov(j) + 0.40 A; order
/// 2/3 when the length is within +/-0.05 A of the tabulated double/triple
/// length, else 1. Isolated atoms are allowed.
BondGraph infer_bonds(const Molecule& mol, const ElementTables& tables = ElementTables::builtin());

/// Weisfeiler-Lehman hash over (element, incident bond-order multiset) with
/// 3 refinement rounds. Invariant to atom reordering; coordinates are unused
/// beyond the bond graph, so rigid motions cannot change it.
std::uint64_t graph_hash(const Molecule& mol, const BondGraph& bonds);

struct SyntheticConfig {
  int min_heavy = 3;
  int max_heavy = 9;
  /// Generated conformers are resampled until their bounding box fits in a
  /// cube of this side, so the default field box holds every molecule.
  double max_extent = 9.0;
};

/// Deterministic per (seed, index) tree-grammar molecules over {C,H,O,N}:
/// ideal bond lengths, tetrahedral/trigonal local geometry, random dihedrals,
/// occasional carbonyls. Every returned molecule passes its own stability
/// check under infer_bonds and has all heavy-atom pairs >= 1.0 A apart.
std::vector<Molecule> gen_synthetic_dataset(int n, std::uint64_t seed,
                                            const SyntheticConfig& cfg = {},
                                            const ElementTables& tables = ElementTables::builtin());

/// Single molecule of the synthetic stream; gen_synthetic_dataset(n) equals
/// {gen_synthetic_molecule(seed, 0..n-1)} and may be parallelized by index.
Molecule gen_synthetic_molecule(std::uint64_t seed, std::uint64_t index,
                                const SyntheticConfig& cfg = {},
                                const ElementTables& tables = ElementTables::builtin());

}  // namespace fieldmol

#include "fieldmol/molecule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Geometry>

#include "fieldmol/error.hpp"
#include "fieldmol/rng.hpp"

namespace fieldmol {

namespace {

constexpr double kBondSlack = 0.40;       // A added to the covalent-radius sum
constexpr double kOrderTolerance = 0.05;  // A window around tabulated lengths

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> toks;
  std::string t;
  while (iss >> t) toks.push_back(t);
  return toks;
}

double parse_coord(const std::string& tok, int line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v))
    throw ParseError("malformed number '" + tok + "'", line_no);
  return v;
}

struct LineCursor {
  std::vector<std::string> lines;
  int pos = 0;  // 0-based; line number = pos + 1

  explicit LineCursor(const std::string& text) {
    size_t start = 0;
    while (start <= text.size()) {
      size_t eol = text.find('\n', start);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(start, eol - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
      if (eol == text.size()) break;
      start = eol + 1;
    }
  }

  bool at_end() const { return pos >= static_cast<int>(lines.size()); }
  void skip_blank() {
    while (!at_end() && split_ws(lines[pos]).empty()) ++pos;
  }
};

Molecule parse_one(LineCursor& cur) {
  cur.skip_blank();
  if (cur.at_end()) throw ParseError("missing atom-count header", cur.pos);

  const int header_line = cur.pos + 1;
  auto toks = split_ws(cur.lines[cur.pos]);
  int count = 0;
  {
    const std::string& t = toks[0];
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), count);
    if (toks.size() != 1 || ec != std::errc{} || ptr != t.data() + t.size())
      throw ParseError("expected atom count, got '" + cur.lines[cur.pos] + "'", header_line);
  }
  if (count < 1) throw ParseError("atom count must be >= 1", header_line);
  ++cur.pos;

  if (cur.at_end()) throw ParseError("missing comment line", cur.pos);
  Molecule mol;
  mol.name = cur.lines[cur.pos];
  ++cur.pos;

  for (int i = 0; i < count; ++i) {
    const int line_no = cur.pos + 1;
    if (cur.at_end())
      throw ParseError("atom count mismatch: header says " + std::to_string(count) +
                           ", found " + std::to_string(i),
                       line_no);
    auto atoks = split_ws(cur.lines[cur.pos]);
    if (atoks.empty())
      throw ParseError("atom count mismatch: header says " + std::to_string(count) +
                           ", found " + std::to_string(i),
                       line_no);
    if (atoks.size() != 4)
      throw ParseError("expected 'El x y z'", line_no);
    auto el = element_from_symbol(atoks[0]);
    if (!el) throw ParseError("unknown element '" + atoks[0] + "'", line_no);
    mol.elements.push_back(*el);
    mol.coords.emplace_back(parse_coord(atoks[1], line_no), parse_coord(atoks[2], line_no),
                            parse_coord(atoks[3], line_no));
    ++cur.pos;
  }
  return mol;
}

}  // namespace

void Molecule::validate() const {
  if (elements.empty()) throw std::invalid_argument("molecule must have at least one atom");
  if (elements.size() != coords.size())
    throw std::invalid_argument("elements/coords length mismatch");
  for (const auto& c : coords)
    if (!c.allFinite()) throw std::invalid_argument("non-finite coordinate");
}

std::pair<Eigen::Vector3d, Eigen::Vector3d> Molecule::bounding_box() const {
  Eigen::Vector3d lo = coords.front(), hi = coords.front();
  for (const auto& c : coords) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  return {lo, hi};
}

Molecule Molecule::centered() const {
  auto [lo, hi] = bounding_box();
  const Eigen::Vector3d center = 0.5 * (lo + hi);
  Molecule out = *this;
  for (auto& c : out.coords) c -= center;
  return out;
}

Molecule parse_xyz(const std::string& text) {
  LineCursor cur(text);
  Molecule mol = parse_one(cur);
  cur.skip_blank();
  if (!cur.at_end())
    throw ParseError("atom count mismatch: trailing content after declared atoms", cur.pos + 1);
  mol.validate();
  return mol;
}

std::string write_xyz(const Molecule& mol) {
  mol.validate();
  std::string out = std::to_string(mol.size()) + "\n" + mol.name + "\n";
  char buf[128];
  for (int i = 0; i < mol.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f\n",
                  std::string(symbol_of(mol.elements[i])).c_str(), mol.coords[i].x(),
                  mol.coords[i].y(), mol.coords[i].z());
    out += buf;
  }
  return out;
}

std::vector<Molecule> parse_xyz_corpus(const std::string& text) {
  LineCursor cur(text);
  std::vector<Molecule> mols;
  for (;;) {
    cur.skip_blank();
    if (cur.at_end()) break;
    mols.push_back(parse_one(cur));
    mols.back().validate();
  }
  return mols;
}

std::string write_xyz_corpus(const std::vector<Molecule>& mols) {
  std::string out;
  for (const auto& m : mols) out += write_xyz(m);
  return out;
}

BondGraph infer_bonds(const Molecule& mol, const ElementTables& tables) {
  mol.validate();
  const int n = mol.size();
  BondGraph g;
  g.valence.assign(n, 0);
  g.adj.assign(n, {});

  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (mol.coords[i] - mol.coords[j]).norm();
      const double cutoff =
          tables.radius(mol.elements[i]) + tables.radius(mol.elements[j]) + kBondSlack;
      if (d > cutoff) continue;
      int order = 1;
      const double triple = tables.bond_length(mol.elements[i], mol.elements[j], 3);
      const double dbl = tables.bond_length(mol.elements[i], mol.elements[j], 2);
      if (triple > 0.0 && std::abs(d - triple) <= kOrderTolerance)
        order = 3;
      else if (dbl > 0.0 && std::abs(d - dbl) <= kOrderTolerance)
        order = 2;
      g.bonds.push_back({i, j, order});
      g.valence[i] += order;
      g.valence[j] += order;
      g.adj[i].push_back({j, order});
      g.adj[j].push_back({i, order});
    }
  }

  // Connected components.
  g.fragment_of.assign(n, -1);
  int frag = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (g.fragment_of[s] >= 0) continue;
    stack.push_back(s);
    g.fragment_of[s] = frag;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto [v, o] : g.adj[u]) {
        if (g.fragment_of[v] < 0) {
          g.fragment_of[v] = frag;
          stack.push_back(v);
        }
      }
    }
    ++frag;
  }
  g.fragments = frag;
  return g;
}

int BondGraph::largest_fragment_size() const {
  std::vector<int> sizes(fragments, 0);
  for (int f : fragment_of) sizes[f]++;
  int best = 0;
  for (int s : sizes) best = std::max(best, s);
  return best;
}

std::uint64_t graph_hash(const Molecule& mol, const BondGraph& bonds) {
  const int n = mol.size();
  std::vector<std::uint64_t> color(n);
  for (int i = 0; i < n; ++i) {
    std::uint64_t h = hash_mix(0x6d6f6c6861736830ull, static_cast<int>(mol.elements[i]));
    std::vector<int> orders;
    for (auto [j, o] : bonds.adj[i]) orders.push_back(o);
    std::sort(orders.begin(), orders.end());
    for (int o : orders) h = hash_mix(h, static_cast<std::uint64_t>(o));
    color[i] = h;
  }

  std::vector<std::uint64_t> next(n);
  for (int round = 0; round < 3; ++round) {
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> neigh;
      for (auto [j, o] : bonds.adj[i]) neigh.emplace_back(o, color[j]);
      std::sort(neigh.begin(), neigh.end());
      std::uint64_t h = hash_mix(0x726f756e64000000ull + round, color[i]);
      for (auto& [o, c] : neigh) h = hash_mix(hash_mix(h, o), c);
      next[i] = h;
    }
    color.swap(next);
  }

  std::sort(color.begin(), color.end());
  std::uint64_t h = hash_mix(0x66696e616c686173ull, static_cast<std::uint64_t>(n));
  for (auto c : color) h = hash_mix(h, c);
  return h;
}

namespace {

// --- synthetic generator -------------------------------------------------

constexpr double kCarbonylProb = 0.18;

int bond_capacity(Element e) {
  switch (e) {
    case Element::C: return 4;
    case Element::N: return 3;
    case Element::O: return 2;
    default: return 1;
  }
}

Element pick_root(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.70) return Element::C;
  if (u < 0.85) return Element::N;
  return Element::O;
}

// Heavy-heavy single bonds stay within the tabulated pairs, so heteroatoms
// only ever attach to carbon.
Element pick_child(Element parent, Rng& rng) {
  if (parent != Element::C) return Element::C;
  const double u = rng.uniform();
  if (u < 0.60) return Element::C;
  if (u < 0.80) return Element::N;
  return Element::O;
}

const std::array<Eigen::Vector3d, 4>& tetra_dirs() {
  static const std::array<Eigen::Vector3d, 4> dirs = {
      Eigen::Vector3d(1, 1, 1).normalized(), Eigen::Vector3d(1, -1, -1).normalized(),
      Eigen::Vector3d(-1, 1, -1).normalized(), Eigen::Vector3d(-1, -1, 1).normalized()};
  return dirs;
}

const std::array<Eigen::Vector3d, 3>& trigonal_dirs() {
  static const std::array<Eigen::Vector3d, 3> dirs = {
      Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(-0.5, std::sqrt(3.0) / 2.0, 0),
      Eigen::Vector3d(-0.5, -std::sqrt(3.0) / 2.0, 0)};
  return dirs;
}

Eigen::Quaterniond random_rotation(Rng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3));
}

struct HeavyAtom {
  Element element;
  int parent = -1;             // heavy-tree parent, -1 for root
  int parent_order = 1;
  bool sp2 = false;            // carbonyl carbon
  std::vector<int> children;   // heavy children (includes carbonyl oxygens)
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> free_dirs;  // open bonding directions
};

struct Attempt {
  std::vector<HeavyAtom> atoms;
  bool ok = false;
};

Attempt build_topology(int n_heavy, Rng& rng) {
  Attempt a;
  a.atoms.push_back({pick_root(rng)});
  for (int k = 1; k < n_heavy; ++k) {
    std::vector<int> open;
    for (int i = 0; i < static_cast<int>(a.atoms.size()); ++i) {
      int used = (a.atoms[i].parent >= 0 ? 1 : 0) + static_cast<int>(a.atoms[i].children.size());
      if (bond_capacity(a.atoms[i].element) - used > 0) open.push_back(i);
    }
    if (open.empty()) return a;  // dead end, retry
    const int parent = open[rng.uniform_int(open.size())];
    HeavyAtom child{pick_child(a.atoms[parent].element, rng)};
    child.parent = parent;
    a.atoms[parent].children.push_back(static_cast<int>(a.atoms.size()));
    a.atoms.push_back(std::move(child));
  }

  // Carbonyl decoration: a carbon with two free bonds may take a =O.
  const int tree_size = static_cast<int>(a.atoms.size());
  for (int i = 0; i < tree_size; ++i) {
    if (a.atoms[i].element != Element::C) continue;
    int used = (a.atoms[i].parent >= 0 ? 1 : 0) + static_cast<int>(a.atoms[i].children.size());
    if (4 - used < 2) continue;
    if (rng.uniform() >= kCarbonylProb) continue;
    a.atoms[i].sp2 = true;
    HeavyAtom oxo{Element::O};
    oxo.parent = i;
    oxo.parent_order = 2;
    a.atoms[i].children.push_back(static_cast<int>(a.atoms.size()));
    a.atoms.push_back(std::move(oxo));
  }
  a.ok = true;
  return a;
}

// Bonding directions for an atom: slot 0 points at the parent (dropped for
// the root); lone pairs of N and O simply leave tetrahedral slots unused.
std::vector<Eigen::Vector3d> oriented_dirs(const HeavyAtom& atom, const Eigen::Vector3d& to_parent,
                                           bool has_parent, Rng& rng) {
  std::vector<Eigen::Vector3d> base;
  if (atom.sp2) {
    for (const auto& d : trigonal_dirs()) base.push_back(d);
  } else {
    int usable = bond_capacity(atom.element);
    for (int i = 0; i < usable; ++i) base.push_back(tetra_dirs()[i]);
  }

  Eigen::Quaterniond q;
  if (has_parent) {
    // Align slot 0 with the parent bond, then spin by a random dihedral.
    q = Eigen::Quaterniond(Eigen::AngleAxisd(rng.uniform(0.0, 2.0 * M_PI), to_parent)) *
        Eigen::Quaterniond::FromTwoVectors(base[0], to_parent);
  } else {
    q = random_rotation(rng);
  }
  std::vector<Eigen::Vector3d> out;
  for (size_t i = has_parent ? 1 : 0; i < base.size(); ++i) out.push_back(q * base[i]);
  return out;
}

double single_h_length(Element e, const ElementTables& tables) {
  return tables.bond_length(e, Element::H, 1);
}

bool place_geometry(Attempt& a, Rng& rng, const ElementTables& tables) {
  auto& atoms = a.atoms;
  atoms[0].pos = Eigen::Vector3d::Zero();
  atoms[0].free_dirs = oriented_dirs(atoms[0], Eigen::Vector3d::UnitZ(), false, rng);

  std::vector<int> queue{0};
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    const int p = queue[qi];
    for (int c : atoms[p].children) {
      if (atoms[p].free_dirs.empty()) return false;
      const Eigen::Vector3d dir = atoms[p].free_dirs.front();
      atoms[p].free_dirs.erase(atoms[p].free_dirs.begin());
      const double len =
          tables.bond_length(atoms[p].element, atoms[c].element, atoms[c].parent_order);
      if (len <= 0.0) return false;
      atoms[c].pos = atoms[p].pos + len * dir;
      atoms[c].free_dirs = oriented_dirs(atoms[c], -dir, true, rng);
      if (atoms[c].parent_order == 2) {
        // Both slots of a carbonyl oxygen are consumed by the double bond.
        atoms[c].free_dirs.clear();
      }
      queue.push_back(c);
    }
  }
  return true;
}

Molecule assemble(const Attempt& a, const ElementTables& tables) {
  Molecule mol;
  for (const auto& atom : a.atoms) {
    mol.elements.push_back(atom.element);
    mol.coords.push_back(atom.pos);
  }
  for (const auto& atom : a.atoms) {
    const double hlen = single_h_length(atom.element, tables);
    for (const auto& d : atom.free_dirs) {
      mol.elements.push_back(Element::H);
      mol.coords.push_back(atom.pos + hlen * d);
    }
  }
  return mol;
}

bool acceptable(const Molecule& mol, const Attempt& a, const SyntheticConfig& cfg,
                const ElementTables& tables) {
  auto [lo, hi] = mol.bounding_box();
  if (((hi - lo).array() > cfg.max_extent).any()) return false;

  // The inferred graph must match the intended one exactly: no clash-induced
  // extra bonds, no misassigned orders.
  const int n_heavy = static_cast<int>(a.atoms.size());
  std::vector<std::array<int, 3>> intended;  // (i, j, order), i < j
  for (int c = 0; c < n_heavy; ++c) {
    if (a.atoms[c].parent < 0) continue;
    int i = a.atoms[c].parent, j = c;
    if (i > j) std::swap(i, j);
    intended.push_back({i, j, a.atoms[c].parent_order});
  }
  int h_index = n_heavy;
  for (int i = 0; i < n_heavy; ++i)
    for (size_t k = 0; k < a.atoms[i].free_dirs.size(); ++k)
      intended.push_back({i, h_index++, 1});
  std::sort(intended.begin(), intended.end());

  BondGraph g = infer_bonds(mol, tables);
  if (g.bonds.size() != intended.size()) return false;
  std::vector<std::array<int, 3>> got;
  for (const auto& b : g.bonds) got.push_back({b.i, b.j, b.order});
  std::sort(got.begin(), got.end());
  if (got != intended) return false;

  for (int i = 0; i < n_heavy; ++i)
    for (int j = i + 1; j < n_heavy; ++j)
      if ((mol.coords[i] - mol.coords[j]).norm() < 1.0) return false;

  return g.connected();
}

}  // namespace

Molecule gen_synthetic_molecule(std::uint64_t seed, std::uint64_t index,
                                const SyntheticConfig& cfg, const ElementTables& tables) {
  if (cfg.min_heavy < 3 || cfg.min_heavy > cfg.max_heavy || cfg.max_heavy > 16)
    throw std::invalid_argument("invalid size range: need 3 <= min <= max <= 16 heavy atoms");

  Rng rng(substream(seed, index));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int n_heavy =
        cfg.min_heavy + static_cast<int>(rng.uniform_int(cfg.max_heavy - cfg.min_heavy + 1));
    Attempt a = build_topology(n_heavy, rng);
    if (!a.ok) continue;
    if (!place_geometry(a, rng, tables)) continue;
    Molecule mol = assemble(a, tables);
    if (!acceptable(mol, a, cfg, tables)) continue;
    mol.name = "synthetic seed=" + std::to_string(seed) + " index=" + std::to_string(index);
    return mol;
  }
  throw std::runtime_error("synthetic generator failed to produce a valid molecule");
}

std::vector<Molecule> gen_synthetic_dataset(int n, std::uint64_t seed, const SyntheticConfig& cfg,
                                            const ElementTables& tables) {
  if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
  std::vector<Molecule> mols(n);
  for (int i = 0; i < n; ++i) mols[i] = gen_synthetic_molecule(seed, i, cfg, tables);
  return mols;
}

}  // namespace fieldmol

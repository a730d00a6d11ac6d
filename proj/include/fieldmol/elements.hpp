#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace fieldmol {

enum class Element : std::uint8_t { C, H, O, N, F, S, Cl, Br };

inline constexpr int kElementCount = 8;

std::string_view symbol_of(Element e);
std::optional<Element> element_from_symbol(std::string_view s);

/// Allowed total valences per element (the stability convention).
struct ValencyTable {
  std::array<std::vector<int>, kElementCount> allowed;

  bool contains(Element e, int valence) const {
    for (int v : allowed[static_cast<int>(e)])
      if (v == valence) return true;
    return false;
  }
  bool has_entry(Element e) const { return !allowed[static_cast<int>(e)].empty(); }
};

/// Covalent radii, allowed valences and typical bond lengths, parsed from the
/// plain-text table shipped in data/element_tables.txt (embedded at build
/// time). See that file for the format.
struct ElementTables {
  std::array<double, kElementCount> covalent_radius{};
  ValencyTable valency;
  // typical_length[a][b][order-1], 0 when the table has no entry
  std::array<std::array<std::array<double, 3>, kElementCount>, kElementCount> typical_length{};

  double radius(Element e) const { return covalent_radius[static_cast<int>(e)]; }

  double bond_length(Element a, Element b, int order) const {
    return typical_length[static_cast<int>(a)][static_cast<int>(b)][order - 1];
  }

  static ElementTables parse(std::string_view text);

  /// Tables parsed from the embedded copy of data/element_tables.txt.
  static const ElementTables& builtin();
};

}  // namespace fieldmol

#include "fieldmol/elements.hpp"

#include <charconv>
#include <sstream>
#include <string>

#include "fieldmol/error.hpp"

namespace fieldmol {

namespace detail {
extern const std::string_view kElementTablesText;
}

namespace {

constexpr std::array<std::string_view, kElementCount> kSymbols = {
    "C", "H", "O", "N", "F", "S", "Cl", "Br"};

double parse_double(std::string_view tok, int line) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError("malformed number '" + std::string(tok) + "'", line);
  return value;
}

int parse_int(std::string_view tok, int line) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc{} || ptr != tok.data() + tok.size())
    throw ParseError("malformed integer '" + std::string(tok) + "'", line);
  return value;
}

Element parse_element(std::string_view tok, int line) {
  auto e = element_from_symbol(tok);
  if (!e) throw ParseError("unknown element '" + std::string(tok) + "'", line);
  return *e;
}

}  // namespace

std::string_view symbol_of(Element e) { return kSymbols[static_cast<int>(e)]; }

std::optional<Element> element_from_symbol(std::string_view s) {
  for (int i = 0; i < kElementCount; ++i)
    if (kSymbols[i] == s) return static_cast<Element>(i);
  return std::nullopt;
}

ElementTables ElementTables::parse(std::string_view text) {
  ElementTables tables;
  std::array<bool, kElementCount> seen{};

  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;

    std::string buf(line);
    std::istringstream iss(buf);
    std::string word;
    std::vector<std::string> toks;
    while (iss >> word) toks.push_back(word);
    if (toks.empty() || toks[0][0] == '#') continue;

    if (toks[0] == "atom") {
      if (toks.size() != 4) throw ParseError("atom line needs 3 fields", line_no);
      Element e = parse_element(toks[1], line_no);
      tables.covalent_radius[static_cast<int>(e)] = parse_double(toks[2], line_no);
      std::istringstream vals(toks[3]);
      std::string v;
      while (std::getline(vals, v, ','))
        tables.valency.allowed[static_cast<int>(e)].push_back(parse_int(v, line_no));
      seen[static_cast<int>(e)] = true;
    } else if (toks[0] == "bond") {
      if (toks.size() != 5) throw ParseError("bond line needs 4 fields", line_no);
      Element a = parse_element(toks[1], line_no);
      Element b = parse_element(toks[2], line_no);
      int order = parse_int(toks[3], line_no);
      if (order < 1 || order > 3) throw ParseError("bond order must be 1..3", line_no);
      double length = parse_double(toks[4], line_no);
      tables.typical_length[static_cast<int>(a)][static_cast<int>(b)][order - 1] = length;
      tables.typical_length[static_cast<int>(b)][static_cast<int>(a)][order - 1] = length;
    } else {
      throw ParseError("unknown record '" + toks[0] + "'", line_no);
    }
  }

  for (int i = 0; i < kElementCount; ++i)
    if (!seen[i])
      throw ParseError("missing atom entry for element " + std::string(kSymbols[i]));
  return tables;
}

const ElementTables& ElementTables::builtin() {
  static const ElementTables tables = ElementTables::parse(detail::kElementTablesText);
  return tables;
}

}  // namespace fieldmol

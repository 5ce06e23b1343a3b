#pragma once

// Parser for the subset of the MATPOWER case-file language used by the standard test cases:
//
//   function mpc = caseNN
//   mpc.baseMVA = 100;
//   mpc.bus = [ ... ];  mpc.gen = [ ... ];  mpc.branch = [ ... ];  mpc.gencost = [ ... ];
//
// Other `mpc.<field> = <value>;` assignments (version strings, bus_name cell arrays, extra tables)
// are parsed and ignored.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "metaopf/error.hpp"
#include "metaopf/network.hpp"

namespace metaopf {

namespace detail {

struct Table {
  std::vector<std::vector<double>> rows;
  std::size_t line = 0;
};

class CaseLexer {
 public:
  explicit CaseLexer(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_blank(true);
    return pos_ >= text_.size();
  }

  std::size_t line() const noexcept { return line_; }

  [[noreturn]] void fail(const std::string& msg) const { throw CaseSyntaxError(msg, line_, col_); }

  /// Skips spaces, tabs, comments, and (when requested) newlines.
  void skip_blank(bool newlines) {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\r') {
        advance();
      } else if (c == '%') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else if (c == '.' && text_.substr(pos_, 3) == "...") {
        // line continuation: skip to and including the newline
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
        if (pos_ < text_.size()) advance();
      } else if (newlines && c == '\n') {
        advance();
      } else {
        break;
      }
    }
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void expect(char c) {
    skip_blank(false);
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  std::string identifier() {
    skip_blank(false);
    const std::size_t start = pos_;
    if (!(std::isalpha(static_cast<unsigned char>(peek())) || peek() == '_')) fail("expected identifier");
    while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') advance();
    return std::string(text_.substr(start, pos_ - start));
  }

  double number() {
    skip_blank(false);
    std::size_t start = pos_;
    bool negative = false;
    if (peek() == '+' || peek() == '-') {
      negative = peek() == '-';
      advance();
      start = pos_;
    }
    std::size_t end = start;
    while (end < text_.size()) {
      const char c = text_[end];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
          ((c == '+' || c == '-') && end > start && (text_[end - 1] == 'e' || text_[end - 1] == 'E')))
        ++end;
      else
        break;
    }
    const std::string_view tok = text_.substr(start, end - start);
    double value = 0.0;
    if (tok == "Inf" || tok == "inf") {
      value = INFINITY;
    } else {
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        fail("invalid number '" + std::string(tok) + "'");
    }
    while (pos_ < end) advance();
    return negative ? -value : value;
  }

  std::string string_literal() {
    expect('\'');
    std::string out;
    while (true) {
      if (pos_ >= text_.size() || peek() == '\n') fail("unterminated string");
      if (peek() == '\'') {
        advance();
        if (peek() == '\'') {
          out.push_back('\'');
          advance();
          continue;
        }
        return out;
      }
      out.push_back(peek());
      advance();
    }
  }

  Table matrix() {
    Table t;
    t.line = line_;
    expect('[');
    std::vector<double> row;
    auto flush = [&] {
      if (!row.empty()) t.rows.push_back(std::move(row));
      row.clear();
    };
    while (true) {
      skip_blank(false);
      const char c = peek();
      if (c == '\0') fail("unterminated matrix");
      if (c == ']') {
        advance();
        flush();
        return t;
      }
      if (c == ';' || c == '\n') {
        advance();
        flush();
      } else if (c == ',') {
        advance();
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.' ||
                 c == 'I' || c == 'i') {
        row.push_back(number());
      } else {
        fail(std::string("unexpected character '") + c + "' in matrix");
      }
    }
  }

  /// Skips a cell-array literal, respecting string quoting and nesting.
  void skip_cell() {
    expect('{');
    int depth = 1;
    while (depth > 0) {
      skip_blank(true);
      const char c = peek();
      if (c == '\0') fail("unterminated cell array");
      if (c == '\'') {
        string_literal();
        continue;
      }
      if (c == '{') ++depth;
      if (c == '}') --depth;
      advance();
    }
  }

  void end_statement() {
    skip_blank(false);
    if (peek() == ';' || peek() == ',') advance();
    skip_blank(false);
    if (peek() != '\n' && peek() != '\0') fail("expected end of statement");
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

struct RawCase {
  std::string name;
  std::map<std::string, double> scalars;
  std::map<std::string, Table> tables;
};

inline RawCase lex_case(std::string_view text) {
  CaseLexer lx(text);
  RawCase raw;
  while (!lx.at_end()) {
    const std::string head = lx.identifier();
    if (head == "function") {
      const std::string out = lx.identifier();
      lx.expect('=');
      raw.name = lx.identifier();
      (void)out;
      lx.end_statement();
      continue;
    }
    std::string field;
    lx.skip_blank(false);
    if (lx.peek() == '.') {
      lx.expect('.');
      field = lx.identifier();
    } else {
      lx.fail("expected '.' after '" + head + "'");
    }
    lx.expect('=');
    lx.skip_blank(false);
    const char c = lx.peek();
    if (c == '[') {
      raw.tables[field] = lx.matrix();
    } else if (c == '{') {
      lx.skip_cell();
    } else if (c == '\'') {
      lx.string_literal();
    } else {
      raw.scalars[field] = lx.number();
    }
    lx.end_statement();
  }
  return raw;
}

inline const Table& require_table(const RawCase& raw, const std::string& name, std::size_t min_cols) {
  const auto it = raw.tables.find(name);
  if (it == raw.tables.end()) throw InputError("missing required table mpc." + name);
  for (std::size_t r = 0; r < it->second.rows.size(); ++r)
    if (it->second.rows[r].size() < min_cols)
      throw InputError("mpc." + name + " row " + std::to_string(r + 1) + " has " +
                       std::to_string(it->second.rows[r].size()) + " columns, expected at least " +
                       std::to_string(min_cols));
  return it->second;
}

inline int as_int(double v, const std::string& what) {
  if (v != std::floor(v)) throw InputError(what + " must be an integer");
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses MATPOWER case text into a validated Network (bus ids remapped, per-unit, radians).
inline Network parse_case(std::string_view text) {
  using detail::as_int;
  const detail::RawCase raw = detail::lex_case(text);

  Network net;
  net.name = raw.name;
  const auto base = raw.scalars.find("baseMVA");
  if (base == raw.scalars.end()) throw InputError("missing required scalar mpc.baseMVA");
  net.base_mva = base->second;
  if (!(net.base_mva > 0.0)) throw InputError("baseMVA must be positive");
  const double mva = net.base_mva;
  constexpr double deg = std::numbers::pi / 180.0;

  const auto& bus_t = detail::require_table(raw, "bus", 13);
  const auto& gen_t = detail::require_table(raw, "gen", 10);
  const auto& branch_t = detail::require_table(raw, "branch", 11);
  const auto& cost_t = detail::require_table(raw, "gencost", 4);

  std::map<int, int> index_of;
  for (const auto& row : bus_t.rows) {
    const int file_id = as_int(row[0], "bus number");
    if (!index_of.emplace(file_id, static_cast<int>(net.buses.size())).second)
      throw InputError("duplicate bus number " + std::to_string(file_id));
    const int type = as_int(row[1], "bus type");
    if (type < 1 || type > 3)
      throw InputError("bus " + std::to_string(file_id) + ": unsupported bus type " + std::to_string(type));
    Bus b;
    b.id = static_cast<int>(net.buses.size());
    b.file_id = file_id;
    b.kind = type == 3 ? BusKind::slack : BusKind::pq;
    b.p_demand = row[2] / mva;
    b.q_demand = row[3] / mva;
    b.gs = row[4] / mva;
    b.bs = row[5] / mva;
    b.v_mag_init = row[7];
    b.v_ang_init = row[8] * deg;
    b.v_max = row[11];
    b.v_min = row[12];
    net.buses.push_back(b);
  }
  auto bus_index = [&](double v, const char* what) {
    const auto it = index_of.find(as_int(v, what));
    if (it == index_of.end()) throw InputError(std::string(what) + " " + std::to_string(v) + " is not a bus");
    return it->second;
  };

  if (cost_t.rows.size() < gen_t.rows.size())
    throw InputError("mpc.gencost has fewer rows than mpc.gen");
  for (std::size_t g = 0; g < gen_t.rows.size(); ++g) {
    const auto& row = gen_t.rows[g];
    if (row[7] <= 0.0) continue;  // out of service
    Generator gen;
    gen.bus = bus_index(row[0], "generator bus");
    gen.p_setpoint = row[1] / mva;
    gen.q_max = row[3] / mva;
    gen.q_min = row[4] / mva;
    gen.v_setpoint = row[5];
    gen.p_max = row[8] / mva;
    gen.p_min = row[9] / mva;
    const auto& c = cost_t.rows[g];
    if (as_int(c[0], "gencost MODEL") != 2)
      throw InputError("gencost row " + std::to_string(g + 1) + ": only polynomial cost (MODEL=2) is supported");
    const int ncost = as_int(c[3], "gencost NCOST");
    if (ncost < 1 || ncost > 3)
      throw InputError("gencost row " + std::to_string(g + 1) + ": polynomial degree above 2 is not supported");
    if (c.size() < 4 + static_cast<std::size_t>(ncost))
      throw InputError("gencost row " + std::to_string(g + 1) + ": missing coefficients");
    double coeff[3] = {0.0, 0.0, 0.0};  // c2, c1, c0
    for (int k = 0; k < ncost; ++k) coeff[3 - ncost + k] = c[4 + k];
    gen.cost_c2 = coeff[0] * mva * mva;
    gen.cost_c1 = coeff[1] * mva;
    gen.cost_c0 = coeff[2];
    net.generators.push_back(gen);
  }

  for (const auto& row : branch_t.rows) {
    Branch br;
    br.from_bus = bus_index(row[0], "branch from-bus");
    br.to_bus = bus_index(row[1], "branch to-bus");
    br.r = row[2];
    br.x = row[3];
    br.b_charge = row[4];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift = row[9] * deg;
    br.status = row[10] > 0.0 ? BranchStatus::in_service : BranchStatus::out_of_service;
    net.branches.push_back(br);
  }

  // A bus counts as PV only when it actually hosts an in-service generator.
  for (const auto& g : net.generators)
    if (net.buses[g.bus].kind == BusKind::pq) net.buses[g.bus].kind = BusKind::pv;
  for (auto& b : net.buses)
    if (b.kind == BusKind::slack) {
      b.v_mag_init = 1.0;
      b.v_ang_init = 0.0;
    }

  validate(net);
  return net;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Network load_case(const std::string& path) { return parse_case(read_text_file(path)); }

}  // namespace metaopf

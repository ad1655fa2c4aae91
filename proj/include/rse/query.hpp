// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Textual query grammar:
//   az:<lo>..<hi>[,el:<lo>..<hi>]            angular window
//   dist:0..<dh>                             spherical (distance-only)
//   cone:az:<lo>..<hi>[,el:<lo>..<hi>],dist:0..<dh>   conical
//   ring:<dl>..<dh>                          ring (two-pass subtraction)
// Errors carry the byte position of the offending token.

#ifndef RSE_QUERY_HPP_
#define RSE_QUERY_HPP_

#include <cctype>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "rse/geometry.hpp"
#include "rse/util.hpp"

namespace rse {

namespace detail {

struct QueryCursor {
  const std::string& text;
  size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg, size_t at) const {
    throw ConfigError("query parse error at byte " + std::to_string(at) + ": " + msg +
                      " (in '" + text + "')");
  }

  bool eat(const std::string& tok) {
    if (text.compare(pos, tok.size(), tok) == 0) {
      pos += tok.size();
      return true;
    }
    return false;
  }

  void expect(const std::string& tok, const std::string& what) {
    if (!eat(tok)) fail("expected " + what, pos);
  }

  // Hand-rolled scan: a '.' only joins the number when followed by a digit,
  // so "0..5" splits as 0, "..", 5 instead of strtod's "0.", ".5".
  double number() {
    const size_t start = pos;
    size_t q = pos;
    auto digit = [&](size_t i) { return i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); };
    if (q < text.size() && (text[q] == '+' || text[q] == '-')) ++q;
    size_t ndig = 0;
    while (digit(q)) ++q, ++ndig;
    if (q < text.size() && text[q] == '.' && digit(q + 1)) {
      ++q;
      while (digit(q)) ++q, ++ndig;
    }
    if (ndig == 0) fail("expected a number", start);
    if (q < text.size() && (text[q] == 'e' || text[q] == 'E')) {
      size_t e = q + 1;
      if (e < text.size() && (text[e] == '+' || text[e] == '-')) ++e;
      if (digit(e)) {
        q = e;
        while (digit(q)) ++q;
      }
    }
    const double v = std::strtod(text.substr(start, q - start).c_str(), nullptr);
    pos = q;
    return v;
  }

  // "<lo>..<hi>"
  std::pair<double, double> range() {
    const double lo = number();
    expect("..", "'..' between range bounds");
    const double hi = number();
    return {lo, hi};
  }

  bool done() const { return pos >= text.size(); }
};

}  // namespace detail

inline QueryRegion parse_query(const std::string& text) {
  detail::QueryCursor c{text};
  if (c.eat("ring:")) {
    const auto [dl, dh] = c.range();
    if (!c.done()) c.fail("trailing characters after ring query", c.pos);
    if (!(dl > 0.0))
      c.fail("ring inner distance must be positive (use dist:0..D for a sphere)", 5);
    if (dh <= dl) c.fail("ring outer distance must exceed the inner one", 5);
    return QueryRegion::ring(dl, dh);
  }
  if (c.eat("dist:")) {
    const size_t at = c.pos;
    const auto [dl, dh] = c.range();
    if (!c.done()) c.fail("trailing characters after distance query", c.pos);
    if (dl != 0.0)
      c.fail("distance-only query must start at 0 (use ring:A..B for an annulus)", at);
    if (!(dh > 0.0)) c.fail("distance bound must be positive", at);
    return QueryRegion::spherical(dh);
  }

  const bool cone = c.eat("cone:");
  bool have_az = false, have_el = false, have_dist = false;
  double azlo = 0, azhi = 0, ello = -90, elhi = 90, dh = 0;
  while (!c.done()) {
    if (c.eat("az:")) {
      if (have_az) c.fail("duplicate az clause", c.pos - 3);
      const auto [lo, hi] = c.range();
      azlo = lo;
      azhi = hi;
      have_az = true;
    } else if (c.eat("el:")) {
      if (have_el) c.fail("duplicate el clause", c.pos - 3);
      const auto [lo, hi] = c.range();
      ello = lo;
      elhi = hi;
      have_el = true;
    } else if (c.eat("dist:")) {
      if (!cone) c.fail("distance clause is only valid inside cone: queries", c.pos - 5);
      if (have_dist) c.fail("duplicate dist clause", c.pos - 5);
      const size_t at = c.pos;
      const auto [lo, hi] = c.range();
      if (lo != 0.0) c.fail("cone distance must start at 0", at);
      dh = hi;
      have_dist = true;
    } else {
      c.fail("expected az:, el:, or dist: clause", c.pos);
    }
    if (!c.done()) {
      c.expect(",", "',' between clauses");
      if (c.done()) c.fail("trailing comma", c.pos);
    }
  }
  if (!have_az) c.fail("missing az clause", 0);
  if (cone && !have_dist) c.fail("cone query needs a dist clause", 0);

  try {
    if (cone) {
      QueryRegion q = QueryRegion::conical(azlo, azhi, dh);
      q.el_lo = ello;
      q.el_hi = elhi;
      q.validate();
      return q;
    }
    return QueryRegion::angular(azlo, azhi, ello, elhi);
  } catch (const ConfigError& e) {
    c.fail(e.what(), 0);
  }
}

inline std::string format_range(double lo, double hi) {
  std::ostringstream ss;
  ss << lo << ".." << hi;
  return ss.str();
}

inline std::string to_query_string(const QueryRegion& q) {
  std::ostringstream ss;
  const double azhi_wrapped = q.az_hi > 180.0 ? q.az_hi - 360.0 : q.az_hi;
  const bool full_el = q.el_lo == -90.0 && q.el_hi == 90.0;
  switch (q.variant) {
    case RegionVariant::Angular:
      ss << "az:" << format_range(q.az_lo, azhi_wrapped);
      if (!full_el) ss << ",el:" << format_range(q.el_lo, q.el_hi);
      return ss.str();
    case RegionVariant::Spherical:
      ss << "dist:" << format_range(0.0, q.d_hi);
      return ss.str();
    case RegionVariant::Conical:
      ss << "cone:az:" << format_range(q.az_lo, azhi_wrapped);
      if (!full_el) ss << ",el:" << format_range(q.el_lo, q.el_hi);
      ss << ",dist:" << format_range(0.0, q.d_hi);
      return ss.str();
    case RegionVariant::Ring:
      ss << "ring:" << format_range(q.d_lo, q.d_hi);
      return ss.str();
  }
  throw ConfigError("to_query_string: bad variant");
}

}  // namespace rse

#endif  // RSE_QUERY_HPP_

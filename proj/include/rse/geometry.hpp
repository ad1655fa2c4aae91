// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Array frame conventions: origin at array center, azimuth 0 along +x,
// measured counterclockwise in the xy plane, elevation positive toward +z.

#ifndef RSE_GEOMETRY_HPP_
#define RSE_GEOMETRY_HPP_

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rse/util.hpp"

namespace rse {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Unit direction vector for (azimuth, elevation) in degrees.
inline Vec3 unit_direction(double az_deg, double el_deg) {
  const double th = deg2rad(az_deg), ph = deg2rad(el_deg);
  return {std::cos(ph) * std::cos(th), std::cos(ph) * std::sin(th), std::sin(ph)};
}

// Source location in the array frame.
struct SourcePose {
  double azimuth_deg = 0.0;    // [-180, 180]
  double elevation_deg = 0.0;  // [-90, 90]
  double distance_m = 1.0;     // > 0

  void validate() const {
    if (!(distance_m > 0.0)) throw DataError("SourcePose: distance must be positive");
    if (elevation_deg < -90.0 || elevation_deg > 90.0)
      throw DataError("SourcePose: elevation out of [-90, 90]");
    if (azimuth_deg < -180.0 || azimuth_deg > 180.0)
      throw DataError("SourcePose: azimuth out of [-180, 180]");
  }

  Vec3 to_cartesian() const {
    return distance_m * unit_direction(azimuth_deg, elevation_deg);
  }

  static SourcePose from_cartesian(const Vec3& p) {
    SourcePose s;
    s.distance_m = norm(p);
    if (s.distance_m <= 0.0) throw DataError("SourcePose: zero-length vector");
    s.elevation_deg = rad2deg(std::asin(p[2] / s.distance_m));
    s.azimuth_deg = rad2deg(std::atan2(p[1], p[0]));
    return s;
  }
};

struct MicArray {
  std::vector<Vec3> positions;  // meters, array frame
  std::string layout = "custom";

  size_t num_mics() const { return positions.size(); }

  void validate() const {
    if (positions.size() < 2) throw ConfigError("MicArray: need at least 2 mics");
    for (size_t i = 0; i < positions.size(); ++i)
      for (size_t j = i + 1; j < positions.size(); ++j)
        if (norm(positions[i] - positions[j]) < 1e-6)
          throw ConfigError("MicArray: coincident mics");
  }

  double max_spacing() const {
    double d = 0.0;
    for (size_t i = 0; i < positions.size(); ++i)
      for (size_t j = i + 1; j < positions.size(); ++j)
        d = std::max(d, norm(positions[i] - positions[j]));
    return d;
  }

  // n mics on a circle of the given diameter in the xy plane, mic 0 at +x.
  static MicArray circular(size_t n, double diameter_m) {
    if (n < 2 || diameter_m <= 0.0) throw ConfigError("MicArray::circular: bad params");
    MicArray a;
    a.layout = "circular";
    const double r = diameter_m / 2.0;
    for (size_t k = 0; k < n; ++k) {
      const double th = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
      a.positions.push_back({r * std::cos(th), r * std::sin(th), 0.0});
    }
    return a;
  }

  // n mics uniformly spaced along x, centered, spanning the given aperture.
  static MicArray linear(size_t n, double aperture_m) {
    if (n < 2 || aperture_m <= 0.0) throw ConfigError("MicArray::linear: bad params");
    MicArray a;
    a.layout = "linear";
    for (size_t k = 0; k < n; ++k) {
      const double x = -aperture_m / 2.0 +
                       aperture_m * static_cast<double>(k) / static_cast<double>(n - 1);
      a.positions.push_back({x, 0.0, 0.0});
    }
    return a;
  }

  // Named presets, plus parametric forms "linear:N:APERTURE_M" and
  // "circular:N:DIAMETER_M" so sweeps can name arbitrary geometries.
  static MicArray preset(const std::string& name) {
    if (name == "circ8_5cm") return circular(8, 0.05);
    if (name == "lin8_22.5cm") return linear(8, 0.225);
    const auto parametric = [&](const char* kind) -> MicArray {
      const size_t a = name.find(':'), b = name.rfind(':');
      if (a == std::string::npos || b == a)
        throw ConfigError("array preset '" + name + "': want " +
                          std::string(kind) + ":N:SIZE_M");
      size_t n = 0;
      double size = 0.0;
      try {
        n = std::stoul(name.substr(a + 1, b - a - 1));
        size = std::stod(name.substr(b + 1));
      } catch (const std::exception&) {
        throw ConfigError("array preset '" + name + "': bad number");
      }
      return std::string(kind) == "linear" ? linear(n, size) : circular(n, size);
    };
    if (name.rfind("linear:", 0) == 0) return parametric("linear");
    if (name.rfind("circular:", 0) == 0) return parametric("circular");
    throw ConfigError("unknown array preset: " + name);
  }

  // Plain text: one "x y z" line per mic, '#' comments.
  static MicArray from_text(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open array geometry file: " + path);
    MicArray a;
    a.layout = "file";
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ss(line);
      double x, y, z;
      if (!(ss >> x)) continue;  // blank line
      if (!(ss >> y >> z))
        throw DataError(path + ":" + std::to_string(lineno) + ": expected 'x y z'");
      double extra;
      if (ss >> extra)
        throw DataError(path + ":" + std::to_string(lineno) + ": too many fields");
      a.positions.push_back({x, y, z});
    }
    a.validate();
    return a;
  }
};

// Ordered microphone pair; axis points from the second mic to the first.
struct MicPair {
  size_t p1 = 0, p2 = 1;
  double spacing_m = 0.0;
  Vec3 axis = {1.0, 0.0, 0.0};
};

inline MicPair make_mic_pair(const MicArray& a, size_t i, size_t j) {
  if (i >= a.num_mics() || j >= a.num_mics() || i == j)
    throw ConfigError("make_mic_pair: bad mic indices");
  MicPair p;
  p.p1 = i;
  p.p2 = j;
  const Vec3 d = a.positions[i] - a.positions[j];
  p.spacing_m = norm(d);
  p.axis = (1.0 / p.spacing_m) * d;
  return p;
}

// All unordered pairs (i < j) over the selected mics; empty selection = all.
inline std::vector<MicPair> enumerate_pairs(const MicArray& a,
                                            const std::vector<size_t>& selection = {}) {
  std::vector<size_t> sel = selection;
  if (sel.empty())
    for (size_t i = 0; i < a.num_mics(); ++i) sel.push_back(i);
  for (size_t s : sel)
    if (s >= a.num_mics()) throw ConfigError("enumerate_pairs: mic index out of range");
  std::vector<MicPair> pairs;
  for (size_t i = 0; i < sel.size(); ++i)
    for (size_t j = i + 1; j < sel.size(); ++j)
      pairs.push_back(make_mic_pair(a, sel[i], sel[j]));
  return pairs;
}

// Signed path-length difference (meters) for a far-field plane wave from
// (azimuth, elevation): positive when the wave reaches p1 before p2.
inline double tdoa_distance(const MicPair& p, double az_deg, double el_deg) {
  return p.spacing_m * dot(p.axis, unit_direction(az_deg, el_deg));
}

enum class RegionVariant { Angular, Spherical, Conical, Ring };

// User query region: azimuth window x elevation window x distance band.
// The azimuth upper edge is stored unwrapped (az_hi >= az_lo, possibly > 180)
// so windows crossing the -180/180 seam keep a positive width.
struct QueryRegion {
  RegionVariant variant = RegionVariant::Angular;
  double az_lo = -180.0, az_hi = 180.0;
  double el_lo = -90.0, el_hi = 90.0;
  double d_lo = 0.0;
  double d_hi = std::numeric_limits<double>::infinity();

  double az_width() const { return az_hi - az_lo; }

  void validate() const {
    if (az_width() < 0.0 || az_width() > 360.0)
      throw ConfigError("QueryRegion: bad azimuth window");
    if (el_lo > el_hi || el_lo < -90.0 || el_hi > 90.0)
      throw ConfigError("QueryRegion: bad elevation window");
    if (d_lo < 0.0 || d_hi < d_lo) throw ConfigError("QueryRegion: bad distance band");
    if (variant == RegionVariant::Ring && !(d_lo > 0.0))
      throw ConfigError("QueryRegion: ring needs a positive inner distance");
  }

  static QueryRegion angular(double azlo, double azhi, double ello = -90.0,
                             double elhi = 90.0) {
    QueryRegion q;
    q.variant = RegionVariant::Angular;
    q.az_lo = azlo;
    q.az_hi = azhi < azlo ? azhi + 360.0 : azhi;
    q.el_lo = ello;
    q.el_hi = elhi;
    q.validate();
    return q;
  }

  static QueryRegion spherical(double dh) {
    QueryRegion q;
    q.variant = RegionVariant::Spherical;
    q.d_lo = 0.0;
    q.d_hi = dh;
    q.validate();
    return q;
  }

  static QueryRegion conical(double azlo, double azhi, double dh) {
    QueryRegion q = angular(azlo, azhi);
    q.variant = RegionVariant::Conical;
    q.d_lo = 0.0;
    q.d_hi = dh;
    q.validate();
    return q;
  }

  static QueryRegion ring(double dl, double dh) {
    QueryRegion q;
    q.variant = RegionVariant::Ring;
    q.d_lo = dl;
    q.d_hi = dh;
    q.validate();
    return q;
  }
};

inline bool region_contains(const QueryRegion& q, const SourcePose& s) {
  s.validate();
  const bool az_ok = q.az_width() >= 360.0 ||
                     wrap_deg_360(s.azimuth_deg - q.az_lo) <= q.az_width();
  const bool el_ok = s.elevation_deg >= q.el_lo && s.elevation_deg <= q.el_hi;
  const bool d_ok = s.distance_m >= q.d_lo && s.distance_m <= q.d_hi;
  switch (q.variant) {
    case RegionVariant::Angular:
      return az_ok && el_ok;
    case RegionVariant::Spherical:
    case RegionVariant::Ring:
      return d_ok;
    case RegionVariant::Conical:
      return az_ok && el_ok && d_ok;
  }
  return false;
}

}  // namespace rse

#endif  // RSE_GEOMETRY_HPP_

// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Acoustic scene specification, randomized generation, and rendering.
// A SceneSpec is a complete, serializable description of one scene
// (room, array pose, sources, levels, query). Rendering realizes the
// level ratios exactly on the reference channel.

#ifndef RSE_SCENE_HPP_
#define RSE_SCENE_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rse/fft.hpp"
#include "rse/geometry.hpp"
#include "rse/query.hpp"
#include "rse/rir.hpp"
#include "rse/stft.hpp"
#include "rse/util.hpp"
#include "rse/wav.hpp"

namespace rse {

// ---------------------------------------------------------------------------
// Array placement

struct ArrayPose {
  Vec3 center{0.0, 0.0, 0.0};  // room frame, meters
  double yaw_deg = 0.0;        // rotation about +z
};

inline Vec3 array_to_room(const ArrayPose& pose, const Vec3& local) {
  const double c = std::cos(deg2rad(pose.yaw_deg));
  const double s = std::sin(deg2rad(pose.yaw_deg));
  return {pose.center[0] + c * local[0] - s * local[1],
          pose.center[1] + s * local[0] + c * local[1], pose.center[2] + local[2]};
}

inline Vec3 room_to_array(const ArrayPose& pose, const Vec3& room_pos) {
  const double c = std::cos(deg2rad(pose.yaw_deg));
  const double s = std::sin(deg2rad(pose.yaw_deg));
  const Vec3 d = room_pos - pose.center;
  return {c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2]};
}

inline std::vector<Vec3> place_array(const MicArray& array, const ArrayPose& pose) {
  std::vector<Vec3> out;
  out.reserve(array.positions.size());
  for (const Vec3& p : array.positions) out.push_back(array_to_room(pose, p));
  return out;
}

inline double array_radius(const MicArray& array) {
  double r = 0.0;
  for (const Vec3& p : array.positions) r = std::max(r, norm(p));
  return r;
}

// ---------------------------------------------------------------------------
// Scene specification

struct SceneSource {
  SourcePose pose;     // array frame
  std::string kind;    // "speech" | "noise" | "babble"
  uint64_t wave_seed = 0;
  double level_db = 0.0;  // meaning depends on group, see SceneSpec
};

struct SceneSpec {
  uint64_t seed = 0;
  std::string profile = "angular";     // angular | spherical | conical
  std::string noise_preset = "train";  // train | appendix
  std::string array_name = "circ8_5cm";
  RoomSpec room;
  ArrayPose array_pose;
  QueryRegion query = QueryRegion::angular(-30.0, 30.0);
  size_t q = 0;          // number of speech sources inside the query region
  double duration_s = 5.0;

  // level_db of speech[i>0] is its ratio below/above speech[0] (SIR).
  std::vector<SceneSource> speech;
  // train preset: dir_noise[j>0].level_db is within-group SIR vs dir_noise[0],
  // and snr_db scales the whole group against the speech sum.
  // appendix preset: each dir_noise[j].level_db is that source's own SNR.
  std::vector<SceneSource> dir_noise;
  double snr_db = 10.0;

  bool isotropic = false;  // appendix preset only
  double isotropic_snr_db = 10.0;
  uint64_t isotropic_seed = 0;

  std::vector<SceneSource> babble;  // appendix preset only; group SNR below
  double babble_snr_db = 30.0;

  size_t count_in_region_speech() const {
    size_t n = 0;
    for (const auto& s : speech)
      if (region_contains(query, s.pose)) ++n;
    return n;
  }

  void validate() const {
    room.validate();
    query.validate();
    if (speech.empty()) throw ConfigError("scene needs at least one speech source");
    if (duration_s < 0.5 || duration_s > 60.0)
      throw ConfigError("scene duration out of range");
    if (profile != "angular" && profile != "spherical" && profile != "conical")
      throw ConfigError("unknown scene profile '" + profile + "'");
    if (noise_preset != "train" && noise_preset != "appendix")
      throw ConfigError("unknown noise preset '" + noise_preset + "'");
    if (count_in_region_speech() != q)
      throw DataError("scene spec inconsistent: recorded q=" + std::to_string(q) +
                      " but " + std::to_string(count_in_region_speech()) +
                      " speech sources fall inside the query region");
  }
};

// ---- JSON serialization (nlohmann ADL hooks) ----

inline void to_json(nlohmann::json& j, const Vec3& v) { j = {v[0], v[1], v[2]}; }
inline void from_json(const nlohmann::json& j, Vec3& v) {
  v = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline void to_json(nlohmann::json& j, const SourcePose& p) {
  j = {{"az", p.azimuth_deg}, {"el", p.elevation_deg}, {"dist", p.distance_m}};
}
inline void from_json(const nlohmann::json& j, SourcePose& p) {
  p.azimuth_deg = j.at("az").get<double>();
  p.elevation_deg = j.at("el").get<double>();
  p.distance_m = j.at("dist").get<double>();
}

inline void to_json(nlohmann::json& j, const RoomSpec& r) {
  j = {{"lx", r.lx}, {"ly", r.ly}, {"lz", r.lz}, {"t60", r.t60}, {"fs", r.sample_rate}};
}
inline void from_json(const nlohmann::json& j, RoomSpec& r) {
  r.lx = j.at("lx").get<double>();
  r.ly = j.at("ly").get<double>();
  r.lz = j.at("lz").get<double>();
  r.t60 = j.at("t60").get<double>();
  r.sample_rate = j.at("fs").get<int>();
}

inline void to_json(nlohmann::json& j, const ArrayPose& p) {
  j = {{"center", p.center}, {"yaw_deg", p.yaw_deg}};
}
inline void from_json(const nlohmann::json& j, ArrayPose& p) {
  p.center = j.at("center").get<Vec3>();
  p.yaw_deg = j.at("yaw_deg").get<double>();
}

inline void to_json(nlohmann::json& j, const SceneSource& s) {
  j = {{"pose", s.pose}, {"kind", s.kind}, {"wave_seed", s.wave_seed},
       {"level_db", s.level_db}};
}
inline void from_json(const nlohmann::json& j, SceneSource& s) {
  s.pose = j.at("pose").get<SourcePose>();
  s.kind = j.at("kind").get<std::string>();
  s.wave_seed = j.at("wave_seed").get<uint64_t>();
  s.level_db = j.at("level_db").get<double>();
}

inline void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"seed", s.seed},
       {"profile", s.profile},
       {"noise_preset", s.noise_preset},
       {"array", s.array_name},
       {"room", s.room},
       {"array_pose", s.array_pose},
       {"query", to_query_string(s.query)},
       {"q", s.q},
       {"duration_s", s.duration_s},
       {"speech", s.speech},
       {"dir_noise", s.dir_noise},
       {"snr_db", s.snr_db},
       {"isotropic", s.isotropic},
       {"isotropic_snr_db", s.isotropic_snr_db},
       {"isotropic_seed", s.isotropic_seed},
       {"babble", s.babble},
       {"babble_snr_db", s.babble_snr_db}};
}
inline void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.seed = j.at("seed").get<uint64_t>();
  s.profile = j.at("profile").get<std::string>();
  s.noise_preset = j.at("noise_preset").get<std::string>();
  s.array_name = j.at("array").get<std::string>();
  s.room = j.at("room").get<RoomSpec>();
  s.array_pose = j.at("array_pose").get<ArrayPose>();
  s.query = parse_query(j.at("query").get<std::string>());
  s.q = j.at("q").get<size_t>();
  s.duration_s = j.at("duration_s").get<double>();
  s.speech = j.at("speech").get<std::vector<SceneSource>>();
  s.dir_noise = j.at("dir_noise").get<std::vector<SceneSource>>();
  s.snr_db = j.at("snr_db").get<double>();
  s.isotropic = j.at("isotropic").get<bool>();
  s.isotropic_snr_db = j.at("isotropic_snr_db").get<double>();
  s.isotropic_seed = j.at("isotropic_seed").get<uint64_t>();
  s.babble = j.at("babble").get<std::vector<SceneSource>>();
  s.babble_snr_db = j.at("babble_snr_db").get<double>();
}

// ---------------------------------------------------------------------------
// Randomized scene generation

struct SceneRanges {
  double room_lo[3] = {3.0, 3.0, 2.5};
  double room_hi[3] = {10.0, 8.0, 4.0};
  double t60_lo = 0.05, t60_hi = 0.7;
  double wall_margin = 0.5;       // sources and array keep this off every wall
  double duration_lo = 4.0, duration_hi = 6.0;
  double speech_sir_lo = -6.0, speech_sir_hi = 6.0;
  double noise_sir_lo = -15.0, noise_sir_hi = 15.0;
  double snr_lo = 5.0, snr_hi = 15.0;                 // train preset
  double dir_noise_snr_lo = 6.0, dir_noise_snr_hi = 15.0;    // appendix
  double isotropic_snr_lo = 8.0, isotropic_snr_hi = 15.0;    // appendix
  double babble_snr_lo = 20.0, babble_snr_hi = 40.0;         // appendix
  double babble_min_dist = 1.5;
  double speaker_el_max = 40.0;   // |elevation| cap for placed sources
};

namespace detail {

// Target share of scenes with q = 0, 1, 2 in-region speech sources.
inline void q_targets(const std::string& profile, double* p0, double* p1) {
  if (profile == "angular") {
    *p0 = 0.27;
    *p1 = 0.65;
  } else {  // spherical, conical
    *p0 = 0.10;
    *p1 = 0.45;
  }
}

inline size_t draw_q(const std::string& profile, Rng* rng) {
  double p0 = 0, p1 = 0;
  q_targets(profile, &p0, &p1);
  const double u = rng->uniform();
  if (u < p0) return 0;
  if (u < p0 + p1) return 1;
  return 2;
}

inline QueryRegion draw_query(const std::string& profile, Rng* rng) {
  if (profile == "spherical") return QueryRegion::spherical(rng->uniform(0.2, 2.0));
  const double width = rng->uniform(30.0, 90.0);
  const double lo = wrap_deg(rng->uniform(-180.0, 180.0));
  if (profile == "angular") return QueryRegion::angular(lo, wrap_deg(lo + width));
  return QueryRegion::conical(lo, wrap_deg(lo + width), rng->uniform(0.2, 2.0));
}

struct ScenePlacer {
  const SceneRanges& rr;
  const RoomSpec& room;
  const ArrayPose& pose;
  double min_dist;  // keep sources at least this far from the array center

  bool pose_ok(const SourcePose& p) const {
    if (p.distance_m < min_dist) return false;
    const Vec3 rp = array_to_room(pose, p.to_cartesian());
    return room.contains(rp, rr.wall_margin);
  }

  // Draw a pose inside the query region (rejection on room feasibility).
  bool draw_inside(const QueryRegion& q, Rng* rng, SourcePose* out, int tries = 400) const {
    for (int t = 0; t < tries; ++t) {
      SourcePose p;
      if (q.variant == RegionVariant::Spherical) {
        p.azimuth_deg = rng->uniform(-180.0, 180.0);
      } else {
        p.azimuth_deg = wrap_deg(q.az_lo + rng->uniform() * q.az_width());
      }
      const double el_lo = std::max(q.el_lo, -rr.speaker_el_max);
      const double el_hi = std::min(q.el_hi, rr.speaker_el_max);
      p.elevation_deg = el_lo < el_hi ? rng->uniform(el_lo, el_hi)
                                      : rng->uniform(q.el_lo, q.el_hi);
      const bool dist_limited = q.variant != RegionVariant::Angular;
      const double dlo = std::max(q.d_lo, min_dist);
      const double dhi = dist_limited ? q.d_hi : 3.0;
      if (dhi <= dlo) return false;
      p.distance_m = rng->uniform(dlo, dhi);
      if (!region_contains(q, p)) continue;  // el window can exclude the draw
      if (pose_ok(p)) {
        *out = p;
        return true;
      }
    }
    return false;
  }

  // Draw a pose outside the query region.
  bool draw_outside(const QueryRegion& q, Rng* rng, SourcePose* out, int tries = 400) const {
    for (int t = 0; t < tries; ++t) {
      SourcePose p;
      p.azimuth_deg = rng->uniform(-180.0, 180.0);
      p.elevation_deg = rng->uniform(-rr.speaker_el_max, rr.speaker_el_max);
      p.distance_m = rng->uniform(min_dist, 3.5);
      if (region_contains(q, p)) continue;
      if (pose_ok(p)) {
        *out = p;
        return true;
      }
    }
    return false;
  }

  // Unconstrained by the region (noise, babble).
  bool draw_anywhere(Rng* rng, SourcePose* out, double dist_lo, double dist_hi,
                     int tries = 400) const {
    for (int t = 0; t < tries; ++t) {
      SourcePose p;
      p.azimuth_deg = rng->uniform(-180.0, 180.0);
      p.elevation_deg = rng->uniform(-rr.speaker_el_max, rr.speaker_el_max);
      p.distance_m = rng->uniform(dist_lo, dist_hi);
      if (pose_ok(p)) {
        *out = p;
        return true;
      }
    }
    return false;
  }
};

}  // namespace detail

// Draw one complete scene. The in-region speech count q is drawn first from
// its per-profile distribution and held fixed through geometry retries, so
// the realized q proportions match the targets exactly over seeds.
inline SceneSpec random_scene(const std::string& profile, const std::string& noise_preset,
                              uint64_t seed, const SceneRanges& rr = {}) {
  Rng root(seed);
  Rng rng_q = root.fork(1);
  Rng rng_room = root.fork(2);
  Rng rng_place = root.fork(3);
  Rng rng_levels = root.fork(4);
  Rng rng_waves = root.fork(5);

  SceneSpec s;
  s.seed = seed;
  s.profile = profile;
  s.noise_preset = noise_preset;
  s.q = detail::draw_q(profile, &rng_q);
  size_t n_speech = 1 + (rng_q.uniform() < 0.5 ? 1 : 0);
  n_speech = std::max(n_speech, s.q);
  size_t n_dir_noise, n_babble = 0;
  bool isotropic = false;
  if (noise_preset == "train") {
    n_dir_noise = static_cast<size_t>(rng_q.randint(int64_t{1}, int64_t{4}));
  } else if (noise_preset == "appendix") {
    n_dir_noise = static_cast<size_t>(rng_q.randint(int64_t{0}, int64_t{2}));
    isotropic = rng_q.uniform() < 0.5;
    n_babble = static_cast<size_t>(rng_q.randint(int64_t{10}, int64_t{20}));
  } else {
    throw ConfigError("unknown noise preset '" + noise_preset + "'");
  }

  const MicArray array = MicArray::preset(s.array_name);
  const double radius = array_radius(array);
  const double min_dist = std::max(0.15, radius + 0.05);

  constexpr int kSceneTries = 200;
  for (int attempt = 0; attempt < kSceneTries; ++attempt) {
    s.room = RoomSpec{};
    s.room.lx = rng_room.uniform(rr.room_lo[0], rr.room_hi[0]);
    s.room.ly = rng_room.uniform(rr.room_lo[1], rr.room_hi[1]);
    s.room.lz = rng_room.uniform(rr.room_lo[2], rr.room_hi[2]);
    s.room.t60 = rng_room.uniform(rr.t60_lo, rr.t60_hi);

    const double m = rr.wall_margin + radius;
    s.array_pose.center = {rng_room.uniform(m, s.room.lx - m),
                           rng_room.uniform(m, s.room.ly - m),
                           rng_room.uniform(0.8, std::min(1.8, s.room.lz - rr.wall_margin))};
    s.array_pose.yaw_deg = rng_room.uniform(0.0, 360.0);
    s.query = detail::draw_query(profile, &rng_room);

    const detail::ScenePlacer placer{rr, s.room, s.array_pose, min_dist};
    s.speech.clear();
    s.dir_noise.clear();
    s.babble.clear();
    bool ok = true;
    for (size_t i = 0; i < n_speech && ok; ++i) {
      SourcePose p;
      ok = i < s.q ? placer.draw_inside(s.query, &rng_place, &p)
                   : placer.draw_outside(s.query, &rng_place, &p);
      if (ok) s.speech.push_back({p, "speech", 0, 0.0});
    }
    for (size_t j = 0; j < n_dir_noise && ok; ++j) {
      SourcePose p;
      ok = placer.draw_outside(s.query, &rng_place, &p);
      if (ok) s.dir_noise.push_back({p, "noise", 0, 0.0});
    }
    for (size_t b = 0; b < n_babble && ok; ++b) {
      SourcePose p;
      ok = placer.draw_anywhere(&rng_place, &p, rr.babble_min_dist, 4.5);
      if (ok) s.babble.push_back({p, "babble", 0, 0.0});
    }
    if (ok) break;
    if (attempt == kSceneTries - 1)
      throw DataError("random_scene: could not place sources after " +
                      std::to_string(kSceneTries) + " attempts (seed " +
                      std::to_string(seed) + ")");
  }

  s.duration_s = rng_levels.uniform(rr.duration_lo, rr.duration_hi);
  for (size_t i = 0; i < s.speech.size(); ++i)
    s.speech[i].level_db = i == 0 ? 0.0 : rng_levels.uniform(rr.speech_sir_lo, rr.speech_sir_hi);
  if (noise_preset == "train") {
    for (size_t j = 0; j < s.dir_noise.size(); ++j)
      s.dir_noise[j].level_db =
          j == 0 ? 0.0 : rng_levels.uniform(rr.noise_sir_lo, rr.noise_sir_hi);
    s.snr_db = rng_levels.uniform(rr.snr_lo, rr.snr_hi);
  } else {
    for (auto& n : s.dir_noise)
      n.level_db = rng_levels.uniform(rr.dir_noise_snr_lo, rr.dir_noise_snr_hi);
    s.isotropic = isotropic;
    s.isotropic_snr_db = rng_levels.uniform(rr.isotropic_snr_lo, rr.isotropic_snr_hi);
    s.babble_snr_db = rng_levels.uniform(rr.babble_snr_lo, rr.babble_snr_hi);
  }
  for (auto& src : s.speech) src.wave_seed = rng_waves.next_u64();
  for (auto& src : s.dir_noise) src.wave_seed = rng_waves.next_u64();
  for (auto& src : s.babble) src.wave_seed = rng_waves.next_u64();
  s.isotropic_seed = rng_waves.next_u64();

  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Source material

class SourceProvider {
 public:
  virtual ~SourceProvider() = default;
  // Deterministic waveform for (kind, seed): exactly `len` samples, RMS 1.
  virtual std::vector<double> waveform(const std::string& kind, uint64_t seed,
                                       size_t len, int sample_rate) = 0;
};

namespace detail {

inline void normalize_rms(std::vector<double>* x) {
  double e = 0.0;
  for (double v : *x) e += v * v;
  if (!(e > 0.0)) throw DataError("source waveform has no energy");
  const double g = 1.0 / std::sqrt(e / static_cast<double>(x->size()));
  for (double& v : *x) v *= g;
}

// Piecewise-constant syllabic envelope with smooth transitions and pauses.
inline std::vector<double> am_envelope(size_t len, int fs, double pause_prob, Rng* rng) {
  std::vector<double> env(len, 0.0);
  size_t t = 0;
  bool any = false;
  while (t < len) {
    const bool pause = rng->uniform() < pause_prob;
    const double dur_s = pause ? rng->uniform(0.08, 0.3) : rng->uniform(0.06, 0.25);
    const size_t dur = std::max<size_t>(1, static_cast<size_t>(dur_s * fs));
    const double level = pause ? 0.0 : rng->uniform(0.2, 1.0);
    for (size_t i = t; i < std::min(len, t + dur); ++i) env[i] = level;
    any = any || level > 0.0;
    t += dur;
  }
  if (!any) std::fill(env.begin(), env.begin() + std::min<size_t>(len, 4000), 0.7);
  // 15 ms one-pole smoothing so segment edges do not click.
  const double a = std::exp(-1.0 / (0.015 * fs));
  double state = 0.0;
  for (double& v : env) {
    state = a * state + (1.0 - a) * v;
    v = state;
  }
  return env;
}

}  // namespace detail

// Synthetic material: amplitude-modulated colored noise standing in for
// speech, plus stationary noise textures. Fully deterministic per seed.
class SyntheticProvider : public SourceProvider {
 public:
  std::vector<double> waveform(const std::string& kind, uint64_t seed, size_t len,
                               int sample_rate) override {
    if (len == 0) throw ConfigError("waveform length must be positive");
    Rng rng(splitmix64(seed ^ 0x736f757263ULL));
    std::vector<double> x(len);
    if (kind == "speech" || kind == "babble") {
      // Low-passed noise carrier (~300 Hz knee) with a syllabic envelope.
      const double pause_prob = kind == "speech" ? 0.3 : 0.12;
      std::vector<double> env = detail::am_envelope(len, sample_rate, pause_prob, &rng);
      double lp = 0.0;
      for (size_t t = 0; t < len; ++t) {
        const double w = rng.gauss();
        lp = 0.9 * lp + 0.1 * w;
        x[t] = (lp * 3.0 + 0.25 * w) * env[t];
      }
    } else if (kind == "noise") {
      switch (seed % 3) {
        case 0:  // white
          for (double& v : x) v = rng.gauss();
          break;
        case 1: {  // brownish
          double lp = 0.0;
          for (double& v : x) {
            lp = 0.98 * lp + 0.02 * rng.gauss();
            v = lp;
          }
          break;
        }
        default: {  // high-passed
          double prev = 0.0;
          for (double& v : x) {
            const double w = rng.gauss();
            v = w - 0.95 * prev;
            prev = w;
          }
        }
      }
    } else {
      throw ConfigError("unknown source kind '" + kind + "'");
    }
    detail::normalize_rms(&x);
    return x;
  }
};

// Draws material from a directory of 16 kHz mono/multichannel WAV files
// (first channel used). Files are looped or cropped to the requested length;
// the crop offset is derived from the seed.
class WavDirProvider : public SourceProvider {
 public:
  explicit WavDirProvider(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("corpus directory not found: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".wav")
        files_.push_back(e.path().string());
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw DataError("no .wav files in corpus directory: " + dir);
  }

  std::vector<double> waveform(const std::string& kind, uint64_t seed, size_t len,
                               int sample_rate) override {
    (void)kind;  // one pool; kinds share it
    const std::string& path = files_[seed % files_.size()];
    const WavData wav = read_wav(path);
    if (wav.sample_rate != sample_rate)
      throw DataError("corpus file " + path + " has sample rate " +
                      std::to_string(wav.sample_rate) + ", expected " +
                      std::to_string(sample_rate));
    const std::vector<double>& src = wav.channels.at(0);
    if (src.empty()) throw DataError("corpus file " + path + " is empty");
    std::vector<double> x(len);
    const size_t offset = src.size() > len
                              ? splitmix64(seed ^ 0x6f666673ULL) % (src.size() - len)
                              : splitmix64(seed ^ 0x6f666673ULL) % src.size();
    for (size_t t = 0; t < len; ++t) x[t] = src[(offset + t) % src.size()];
    detail::normalize_rms(&x);
    return x;
  }

 private:
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Isotropic (diffuse) noise

// Multichannel noise whose pairwise coherence follows the spherically
// isotropic model sinc(2 pi f d / c). Built in the STFT domain by coloring
// independent complex Gaussians with the Cholesky factor of the coherence
// matrix at each frequency, then synthesized back to time. Output has unit
// variance per channel (one shared gain, so coherence is untouched).
inline std::vector<std::vector<double>> make_isotropic_noise(
    const std::vector<Vec3>& mic_positions, size_t len, uint64_t seed,
    const StftConfig& cfg = {}, double speed_of_sound = kSoundSpeed) {
  const size_t m = mic_positions.size();
  if (m == 0) throw ConfigError("make_isotropic_noise: no microphones");
  if (len == 0) throw ConfigError("make_isotropic_noise: empty output");
  cfg.validate();
  const size_t frames = cfg.num_frames(len);
  const size_t bins = cfg.num_bins();

  // Cholesky factors per bin, with diagonal loading for the rank-deficient
  // low-frequency limit where all channels cohere.
  std::vector<std::vector<double>> chol(bins, std::vector<double>(m * m, 0.0));
  for (size_t f = 0; f < bins; ++f) {
    std::vector<double> g(m * m);
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = 0; j < m; ++j) {
        const double d = norm(mic_positions[i] - mic_positions[j]);
        const double x = 2.0 * kPi * cfg.bin_hz(f) * d / speed_of_sound;
        g[i * m + j] = x == 0.0 ? 1.0 : std::sin(x) / x;
      }
    }
    double load = 1e-6;
    for (int round = 0; round < 8; ++round) {
      std::vector<double> a = g;
      for (size_t i = 0; i < m; ++i) a[i * m + i] += load;
      bool ok = true;
      std::vector<double>& l = chol[f];
      std::fill(l.begin(), l.end(), 0.0);
      for (size_t i = 0; i < m && ok; ++i) {
        for (size_t j = 0; j <= i; ++j) {
          double sum = a[i * m + j];
          for (size_t k = 0; k < j; ++k) sum -= l[i * m + k] * l[j * m + k];
          if (i == j) {
            if (sum <= 0.0) {
              ok = false;
              break;
            }
            l[i * m + i] = std::sqrt(sum);
          } else {
            l[i * m + j] = sum / l[j * m + j];
          }
        }
      }
      if (ok) break;
      load *= 10.0;
      if (round == 7) throw NumericError("isotropic coherence factorization failed");
    }
  }

  Rng rng(splitmix64(seed ^ 0x69736fULL));
  Spectrogram spec;
  spec.cfg = cfg;
  spec.channels = m;
  spec.frames = frames;
  spec.bins = bins;
  spec.num_samples = len;
  spec.data.assign(m * frames * bins, {0.0, 0.0});
  std::vector<std::complex<double>> gvec(m);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (size_t t = 0; t < frames; ++t) {
    for (size_t f = 0; f < bins; ++f) {
      const bool real_bin = f == 0 || f + 1 == bins;
      for (size_t k = 0; k < m; ++k)
        gvec[k] = real_bin
                      ? std::complex<double>(rng.gauss(), 0.0)
                      : std::complex<double>(rng.gauss() * inv_sqrt2, rng.gauss() * inv_sqrt2);
      const std::vector<double>& l = chol[f];
      for (size_t i = 0; i < m; ++i) {
        std::complex<double> acc{0.0, 0.0};
        for (size_t k = 0; k <= i; ++k) acc += l[i * m + k] * gvec[k];
        spec.data[(i * frames + t) * bins + f] = acc;
      }
    }
  }

  std::vector<std::vector<double>> out = istft(spec);
  double var = 0.0;
  for (const auto& ch : out)
    for (double v : ch) var += v * v;
  var /= static_cast<double>(m * len);
  if (!(var > 0.0)) throw NumericError("isotropic noise came out silent");
  const double gain = 1.0 / std::sqrt(var);
  for (auto& ch : out)
    for (double& v : ch) v *= gain;
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

struct SceneRender {
  int sample_rate = 16000;
  std::vector<std::vector<double>> mixture;  // [mic][t]
  std::vector<double> target;                // reference channel, in-region speech
  size_t q = 0;
  // Scaled per-group reference-channel images, for level verification and
  // oracle baselines.
  std::vector<std::vector<double>> speech_ref;
  std::vector<double> noise_ref;  // all noise contributions summed
  // Full multichannel image of each in-region speech source (mixture scale),
  // for covariance-based oracle beamformers. [source][mic][t]
  std::vector<std::vector<std::vector<double>>> target_imgs;
};

namespace detail {

inline double ref_energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline std::vector<std::vector<double>> render_source(
    const RoomSpec& room, const std::vector<Vec3>& mics_room, const Vec3& src_room,
    const std::vector<double>& wave, size_t len, std::vector<double>* early_ref) {
  const Rir rir = simulate_rir(room, src_room, mics_room);
  std::vector<std::vector<double>> out(mics_room.size());
  for (size_t mc = 0; mc < mics_room.size(); ++mc) {
    std::vector<double> y = fft_convolve(wave, rir.taps[mc]);
    y.resize(len, 0.0);
    out[mc] = std::move(y);
  }
  if (early_ref != nullptr) {
    const RirSplit split = split_direct_early(rir);
    std::vector<double> y = fft_convolve(wave, split.early[0]);
    y.resize(len, 0.0);
    *early_ref = std::move(y);
  }
  return out;
}

inline void accumulate(std::vector<std::vector<double>>* acc,
                       const std::vector<std::vector<double>>& x, double gain) {
  for (size_t mc = 0; mc < acc->size(); ++mc)
    for (size_t t = 0; t < (*acc)[mc].size(); ++t) (*acc)[mc][t] += gain * x[mc][t];
}

}  // namespace detail

// Render a scene. Level ratios (SIR between speech sources, SNR between the
// speech sum and each noise group) are realized exactly as energy ratios on
// the reference channel. The whole mixture is then scaled to reference-channel
// RMS 0.1; ratios are unaffected.
inline SceneRender mix_scene(const SceneSpec& spec, SourceProvider& provider) {
  spec.validate();
  const int fs = spec.room.sample_rate;
  const size_t len = static_cast<size_t>(std::llround(spec.duration_s * fs));
  const MicArray array = MicArray::preset(spec.array_name);
  const std::vector<Vec3> mics = place_array(array, spec.array_pose);
  const size_t m = mics.size();

  SceneRender out;
  out.sample_rate = fs;
  out.q = spec.q;
  out.mixture.assign(m, std::vector<double>(len, 0.0));
  out.target.assign(len, 0.0);
  out.noise_ref.assign(len, 0.0);

  // Speech: images, per-source SIR scaling relative to the first source.
  std::vector<std::vector<std::vector<double>>> speech_img(spec.speech.size());
  std::vector<std::vector<double>> speech_early(spec.speech.size());
  std::vector<double> speech_gain(spec.speech.size(), 1.0);
  for (size_t i = 0; i < spec.speech.size(); ++i) {
    const auto& src = spec.speech[i];
    const std::vector<double> wave = provider.waveform(src.kind, src.wave_seed, len, fs);
    const Vec3 pos = array_to_room(spec.array_pose, src.pose.to_cartesian());
    speech_img[i] =
        detail::render_source(spec.room, mics, pos, wave, len, &speech_early[i]);
    const double e = detail::ref_energy(speech_img[i][0]);
    if (!(e > 0.0)) throw DataError("speech source " + std::to_string(i) + " is silent");
    if (i > 0) {
      const double e0 = detail::ref_energy(speech_img[0][0]);
      speech_gain[i] = std::sqrt(e0 / (e * std::pow(10.0, src.level_db / 10.0)));
    }
  }
  std::vector<double> speech_sum_ref(len, 0.0);
  out.speech_ref.assign(spec.speech.size(), std::vector<double>(len, 0.0));
  for (size_t i = 0; i < spec.speech.size(); ++i) {
    detail::accumulate(&out.mixture, speech_img[i], speech_gain[i]);
    for (size_t t = 0; t < len; ++t) {
      out.speech_ref[i][t] = speech_gain[i] * speech_img[i][0][t];
      speech_sum_ref[t] += out.speech_ref[i][t];
    }
    if (region_contains(spec.query, spec.speech[i].pose)) {
      for (size_t t = 0; t < len; ++t) out.target[t] += speech_gain[i] * speech_early[i][t];
      auto img = speech_img[i];
      for (auto& ch : img)
        for (double& v : ch) v *= speech_gain[i];
      out.target_imgs.push_back(std::move(img));
    }
  }
  const double e_speech = detail::ref_energy(speech_sum_ref);

  const auto snr_gain = [&](double e_noise, double snr_db) {
    if (!(e_noise > 0.0)) throw DataError("noise contribution is silent");
    return std::sqrt(e_speech / (e_noise * std::pow(10.0, snr_db / 10.0)));
  };

  // Directional noise.
  if (!spec.dir_noise.empty()) {
    std::vector<std::vector<std::vector<double>>> noise_img(spec.dir_noise.size());
    std::vector<double> noise_gain(spec.dir_noise.size(), 1.0);
    for (size_t j = 0; j < spec.dir_noise.size(); ++j) {
      const auto& src = spec.dir_noise[j];
      const std::vector<double> wave = provider.waveform(src.kind, src.wave_seed, len, fs);
      const Vec3 pos = array_to_room(spec.array_pose, src.pose.to_cartesian());
      noise_img[j] = detail::render_source(spec.room, mics, pos, wave, len, nullptr);
    }
    if (spec.noise_preset == "train") {
      // Within-group SIR vs the first noise, then one group gain to the SNR.
      for (size_t j = 1; j < spec.dir_noise.size(); ++j) {
        const double e0 = detail::ref_energy(noise_img[0][0]);
        const double e = detail::ref_energy(noise_img[j][0]);
        if (!(e > 0.0)) throw DataError("noise source " + std::to_string(j) + " is silent");
        noise_gain[j] =
            std::sqrt(e0 / (e * std::pow(10.0, spec.dir_noise[j].level_db / 10.0)));
      }
      std::vector<double> group_ref(len, 0.0);
      for (size_t j = 0; j < spec.dir_noise.size(); ++j)
        for (size_t t = 0; t < len; ++t) group_ref[t] += noise_gain[j] * noise_img[j][0][t];
      const double g = snr_gain(detail::ref_energy(group_ref), spec.snr_db);
      for (size_t j = 0; j < spec.dir_noise.size(); ++j) noise_gain[j] *= g;
    } else {
      for (size_t j = 0; j < spec.dir_noise.size(); ++j)
        noise_gain[j] = snr_gain(detail::ref_energy(noise_img[j][0]),
                                 spec.dir_noise[j].level_db);
    }
    for (size_t j = 0; j < spec.dir_noise.size(); ++j) {
      detail::accumulate(&out.mixture, noise_img[j], noise_gain[j]);
      for (size_t t = 0; t < len; ++t) out.noise_ref[t] += noise_gain[j] * noise_img[j][0][t];
    }
  }

  // Isotropic field (appendix preset).
  if (spec.isotropic) {
    std::vector<std::vector<double>> iso =
        make_isotropic_noise(array.positions, len, spec.isotropic_seed);
    const double g = snr_gain(detail::ref_energy(iso[0]), spec.isotropic_snr_db);
    detail::accumulate(&out.mixture, iso, g);
    for (size_t t = 0; t < len; ++t) out.noise_ref[t] += g * iso[0][t];
  }

  // Babble: many distant sources, each normalized on the reference channel,
  // summed and scaled as one group.
  if (!spec.babble.empty()) {
    std::vector<std::vector<double>> group(m, std::vector<double>(len, 0.0));
    for (const auto& src : spec.babble) {
      const std::vector<double> wave = provider.waveform(src.kind, src.wave_seed, len, fs);
      const Vec3 pos = array_to_room(spec.array_pose, src.pose.to_cartesian());
      const auto img = detail::render_source(spec.room, mics, pos, wave, len, nullptr);
      const double e = detail::ref_energy(img[0]);
      if (!(e > 0.0)) throw DataError("babble source is silent");
      const double g = 1.0 / std::sqrt(e);
      for (size_t mc = 0; mc < m; ++mc)
        for (size_t t = 0; t < len; ++t) group[mc][t] += g * img[mc][t];
    }
    const double g = snr_gain(detail::ref_energy(group[0]), spec.babble_snr_db);
    detail::accumulate(&out.mixture, group, g);
    for (size_t t = 0; t < len; ++t) out.noise_ref[t] += g * group[0][t];
  }

  // Fixed presentation level on the reference channel.
  const double r = signal_rms(out.mixture[0]);
  if (!(r > 0.0)) throw DataError("rendered mixture is silent");
  const double g = 0.1 / r;
  for (auto& ch : out.mixture)
    for (double& v : ch) v *= g;
  for (double& v : out.target) v *= g;
  for (auto& ch : out.speech_ref)
    for (double& v : ch) v *= g;
  for (double& v : out.noise_ref) v *= g;
  for (auto& img : out.target_imgs)
    for (auto& ch : img)
      for (double& v : ch) v *= g;
  if (!all_finite(out.target)) throw NumericError("scene render produced non-finite target");
  for (const auto& ch : out.mixture)
    if (!all_finite(ch)) throw NumericError("scene render produced non-finite mixture");
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines manifests

inline void write_manifest(const std::string& path, const std::vector<nlohmann::json>& lines) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot write manifest: " + path);
    for (const auto& j : lines) f << j.dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<nlohmann::json> read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open manifest: " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest " + path + " line " + std::to_string(ln) +
                      " is not valid JSON: " + e.what());
    }
  }
  return out;
}

}  // namespace rse

#endif  // RSE_SCENE_HPP_

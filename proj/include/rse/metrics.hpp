// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Evaluation metrics and report writers: scale-invariant SDR for active
// queries, energy decay for empty ones, CSV per utterance and aggregate JSON.

#ifndef RSE_METRICS_HPP_
#define RSE_METRICS_HPP_

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rse/util.hpp"

namespace rse {

constexpr double kSdrCapDb = 60.0;
constexpr double kDecayCapDb = 80.0;

// Scale-invariant signal-to-distortion ratio in dB, capped to +-60 so that
// exact reconstructions do not report infinity. The estimate is compared to
// its projection onto the reference, which removes any global gain.
inline double si_sdr(const std::vector<double>& reference,
                     const std::vector<double>& estimate) {
  if (reference.size() != estimate.size())
    throw DataError("si_sdr: length mismatch");
  double rr = 0.0, er = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    rr += reference[i] * reference[i];
    er += estimate[i] * reference[i];
  }
  if (!(rr > 0.0)) throw DataError("si_sdr: reference signal is silent");
  const double alpha = er / rr;
  const double num = alpha * alpha * rr;
  double den = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    const double d = alpha * reference[i] - estimate[i];
    den += d * d;
  }
  if (!(den > 0.0)) return kSdrCapDb;
  if (!(num > 0.0)) return -kSdrCapDb;
  const double db = 10.0 * std::log10(num / den);
  return std::min(kSdrCapDb, std::max(-kSdrCapDb, db));
}

// Residual energy suppression for empty queries: how far the estimate is
// below the reference-channel mixture, capped at 80 dB for near-zero output.
inline double energy_decay(const std::vector<double>& mixture_ref,
                           const std::vector<double>& estimate) {
  if (mixture_ref.size() != estimate.size())
    throw DataError("energy_decay: length mismatch");
  double my = 0.0, mz = 0.0;
  for (size_t i = 0; i < mixture_ref.size(); ++i) {
    my += mixture_ref[i] * mixture_ref[i];
    mz += estimate[i] * estimate[i];
  }
  if (!(my > 0.0)) throw DataError("energy_decay: mixture is silent");
  if (!(mz > 0.0)) return kDecayCapDb;
  return std::min(kDecayCapDb, 10.0 * std::log10(my / mz));
}

// One evaluated utterance. sdr_db is NaN when the query was empty (no
// reference to compare against); decay_db is always defined.
struct UtteranceMetrics {
  std::string scene_id;
  size_t q = 0;
  double sdr_db = std::numeric_limits<double>::quiet_NaN();
  double decay_db = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    out << text;
    if (!out.good()) throw DataError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("atomic rename failed: " + path);
}

inline std::string metric_cell(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

struct RunningStat {
  size_t n = 0;
  double sum = 0.0, sum2 = 0.0;
  void add(double x) {
    ++n;
    sum += x;
    sum2 += x * x;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - m * m));
  }
};

}  // namespace detail

inline std::string metrics_csv(const std::vector<UtteranceMetrics>& rows) {
  std::string out = "scene_id,q,sdr_db,decay_db,stoi,pesq\n";
  for (const UtteranceMetrics& r : rows) {
    out += r.scene_id;
    out += ',';
    out += std::to_string(r.q);
    out += ',';
    out += detail::metric_cell(r.sdr_db);
    out += ',';
    out += detail::metric_cell(r.decay_db);
    out += ",n/a,n/a\n";
  }
  return out;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<UtteranceMetrics>& rows) {
  detail::write_text_atomic(path, metrics_csv(rows));
}

// Aggregate grouped by source count: empty queries report decay, active ones
// report SDR. Intrusive perceptual metrics are not computable here and are
// reported as "n/a" rather than silently dropped.
inline nlohmann::json aggregate_metrics(const std::vector<UtteranceMetrics>& rows) {
  std::map<size_t, detail::RunningStat> sdr, decay;
  std::map<size_t, size_t> counts;
  for (const UtteranceMetrics& r : rows) {
    ++counts[r.q];
    if (!std::isnan(r.sdr_db)) sdr[r.q].add(r.sdr_db);
    if (!std::isnan(r.decay_db)) decay[r.q].add(r.decay_db);
  }
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [q, n] : counts) {
    nlohmann::json g;
    g["count"] = n;
    if (decay.count(q) && decay[q].n) {
      g["decay_db_mean"] = decay[q].mean();
      g["decay_db_std"] = decay[q].stddev();
    }
    if (q > 0 && sdr.count(q) && sdr[q].n) {
      g["sdr_db_mean"] = sdr[q].mean();
      g["sdr_db_std"] = sdr[q].stddev();
    }
    groups["q" + std::to_string(q)] = g;
  }
  nlohmann::json out;
  out["utterances"] = rows.size();
  out["groups"] = groups;
  out["stoi"] = "n/a";
  out["pesq"] = "n/a";
  return out;
}

inline void write_metrics_json(const std::string& path,
                               const std::vector<UtteranceMetrics>& rows) {
  detail::write_text_atomic(path, aggregate_metrics(rows).dump(2) + "\n");
}

}  // namespace rse

#endif  // RSE_METRICS_HPP_

// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// rse: command-line front end. Subcommands cover scene synthesis, spatial
// feature dumps, toy-scale training, region extraction, oracle baselines,
// metric reports, and ablation sweeps.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "rse/baselines.hpp"
#include "rse/config.hpp"
#include "rse/metrics.hpp"
#include "rse/model.hpp"
#include "rse/scene.hpp"
#include "rse/spatial.hpp"
#include "rse/wav.hpp"

namespace fs = std::filesystem;
using namespace rse;

namespace {

// ---------------------------------------------------------------------------
// Worker fan-out: contiguous index chunks, first exception wins.

void parallel_chunks(size_t n, size_t jobs,
                     const std::function<void(size_t, size_t, size_t)>& fn) {
  if (n == 0) return;
  jobs = std::max<size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex mu;
  std::exception_ptr first;
  const size_t per = (n + jobs - 1) / jobs;
  for (size_t w = 0; w < jobs; ++w) {
    const size_t lo = w * per, hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi, w] {
      try {
        fn(lo, hi, w);
      } catch (...) {
        std::lock_guard<std::mutex> g(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

void parallel_each(size_t n, size_t jobs, const std::function<void(size_t)>& fn) {
  parallel_chunks(n, jobs, [&](size_t lo, size_t hi, size_t) {
    for (size_t i = lo; i < hi; ++i) fn(i);
  });
}

// ---------------------------------------------------------------------------
// Config schema shared by the config-consuming subcommands

const std::map<std::string, std::set<std::string>>& cli_schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"scenes",
       {"profile", "noise", "array", "duration_lo", "duration_hi", "t60_lo",
        "t60_hi"}},
      {"model",
       {"preset", "variant", "blocks", "hidden", "region_dim", "band_scheme",
        "agg", "sampling", "ref_channel", "pair_mics"}},
      {"stft", {"sample_rate", "window", "hop", "fft"}},
      {"train",
       {"lr", "lr_decay", "epochs_per_decay", "weight_decay", "lambda",
        "crop_samples"}},
  };
  return s;
}

ConfigFile load_cli_config(const std::string& path) {
  ConfigFile cf = path.empty() ? ConfigFile{} : ConfigFile::load(path);
  cf.check_schema(cli_schema());
  return cf;
}

SceneRanges ranges_from(const ConfigFile& cf) {
  SceneRanges rr;
  rr.duration_lo = cf.get_double("scenes", "duration_lo", rr.duration_lo);
  rr.duration_hi = cf.get_double("scenes", "duration_hi", rr.duration_hi);
  rr.t60_lo = cf.get_double("scenes", "t60_lo", rr.t60_lo);
  rr.t60_hi = cf.get_double("scenes", "t60_hi", rr.t60_hi);
  return rr;
}

SamplingStrategy sampling_from_string(const std::string& s) {
  try {
    if (s.rfind("number:", 0) == 0)
      return SamplingStrategy::fixed_number(std::stoul(s.substr(7)));
    if (s.rfind("interval:", 0) == 0)
      return SamplingStrategy::fixed_interval(std::stod(s.substr(9)));
  } catch (const std::exception&) {
  }
  throw ConfigError("bad sampling spec '" + s + "' (want number:N or interval:DEG)");
}

std::vector<size_t> parse_index_list(const std::string& s) {
  std::vector<size_t> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    try {
      out.push_back(std::stoul(s.substr(pos, next - pos)));
    } catch (const std::exception&) {
      throw ConfigError("bad index list '" + s + "'");
    }
    pos = next + 1;
  }
  return out;
}

ModelConfig model_config_from(const ConfigFile& cf) {
  const std::string preset = cf.get_str("model", "preset", "toy");
  const ModelVariant var =
      variant_from_string(cf.get_str("model", "variant", "angle"));
  ModelConfig mc = ModelConfig::preset(preset, var);
  mc.blocks = static_cast<size_t>(cf.get_int("model", "blocks", static_cast<int64_t>(mc.blocks)));
  mc.hidden = static_cast<size_t>(cf.get_int("model", "hidden", static_cast<int64_t>(mc.hidden)));
  mc.region_dim =
      static_cast<size_t>(cf.get_int("model", "region_dim", static_cast<int64_t>(mc.region_dim)));
  mc.band_scheme = cf.get_str("model", "band_scheme", mc.band_scheme);
  mc.agg = agg_method_from_string(cf.get_str("model", "agg", agg_method_name(mc.agg)));
  if (cf.has("model", "sampling"))
    mc.sampling = sampling_from_string(cf.get_str("model", "sampling", ""));
  mc.ref_channel =
      static_cast<size_t>(cf.get_int("model", "ref_channel", static_cast<int64_t>(mc.ref_channel)));
  if (cf.has("model", "pair_mics"))
    mc.pair_mics = parse_index_list(cf.get_str("model", "pair_mics", ""));
  // the scene array is the single source of truth for geometry
  mc.array = MicArray::preset(cf.get_str("scenes", "array", "circ8_5cm"));
  mc.stft.sample_rate =
      static_cast<int>(cf.get_int("stft", "sample_rate", mc.stft.sample_rate));
  mc.stft.window_len =
      static_cast<size_t>(cf.get_int("stft", "window", static_cast<int64_t>(mc.stft.window_len)));
  mc.stft.hop = static_cast<size_t>(cf.get_int("stft", "hop", static_cast<int64_t>(mc.stft.hop)));
  mc.stft.fft_size =
      static_cast<size_t>(cf.get_int("stft", "fft", static_cast<int64_t>(mc.stft.fft_size)));
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const ConfigFile& cf, uint64_t seed) {
  TrainConfig tc;
  tc.lr0 = cf.get_double("train", "lr", tc.lr0);
  tc.lr_decay = cf.get_double("train", "lr_decay", tc.lr_decay);
  tc.epochs_per_decay = static_cast<size_t>(
      cf.get_int("train", "epochs_per_decay", static_cast<int64_t>(tc.epochs_per_decay)));
  tc.weight_decay = cf.get_double("train", "weight_decay", tc.weight_decay);
  tc.lambda_inactive = cf.get_double("train", "lambda", tc.lambda_inactive);
  tc.crop_samples =
      static_cast<size_t>(cf.get_int("train", "crop_samples", 8000));
  tc.seed = seed;
  return tc;
}

// Corpus root: --corpus flag, else RSE_CORPUS_ROOT, else synthetic sources.
std::unique_ptr<SourceProvider> make_provider(std::string corpus) {
  if (corpus.empty()) {
    const char* env = std::getenv("RSE_CORPUS_ROOT");
    if (env != nullptr) corpus = env;
  }
  if (corpus.empty()) return std::make_unique<SyntheticProvider>();
  return std::make_unique<WavDirProvider>(corpus);
}

std::string scene_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06zu", i);
  return buf;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string config, out, corpus;
  size_t scenes = 3;
  uint64_t seed = 0;
  size_t jobs = 1;
};

int cmd_simulate(const SimulateOpts& o) {
  const ConfigFile cf = load_cli_config(o.config);
  const std::string profile = cf.get_str("scenes", "profile", "angular");
  const std::string noise = cf.get_str("scenes", "noise", "train");
  const std::string array = cf.get_str("scenes", "array", "circ8_5cm");
  MicArray::preset(array);  // fail early on a bad name
  const SceneRanges rr = ranges_from(cf);
  const auto provider = make_provider(o.corpus);
  fs::create_directories(o.out);

  std::vector<nlohmann::json> rows(o.scenes);
  std::vector<size_t> qh(3, 0);
  std::mutex mu;
  const Rng root(o.seed);
  parallel_each(o.scenes, o.jobs, [&](size_t i) {
    SceneSpec spec = random_scene(profile, noise, root.fork(i).next_u64(), rr);
    spec.array_name = array;
    const SceneRender r = mix_scene(spec, *provider);
    const std::string id = scene_name(i);

    WavData mixw;
    mixw.sample_rate = r.sample_rate;
    mixw.channels = r.mixture;
    write_wav(fs::path(o.out) / (id + "_mix.wav"), mixw);
    WavData tgtw;
    tgtw.sample_rate = r.sample_rate;
    tgtw.channels = {r.target};
    write_wav(fs::path(o.out) / (id + "_target.wav"), tgtw);
    std::vector<std::string> srcs;
    for (size_t k = 0; k < r.target_imgs.size(); ++k) {
      const std::string f = id + "_src" + std::to_string(k) + ".wav";
      WavData sw;
      sw.sample_rate = r.sample_rate;
      sw.channels = r.target_imgs[k];
      write_wav(fs::path(o.out) / f, sw);
      srcs.push_back(f);
    }

    nlohmann::json j;
    j["id"] = id;
    j["q"] = r.q;
    j["query"] = to_query_string(spec.query);
    j["sample_rate"] = r.sample_rate;
    j["mixture"] = id + "_mix.wav";
    j["target"] = id + "_target.wav";
    j["sources"] = srcs;
    j["spec"] = spec;
    rows[i] = std::move(j);
    std::lock_guard<std::mutex> g(mu);
    ++qh[std::min<size_t>(r.q, 2)];
  });

  write_manifest((fs::path(o.out) / "manifest.jsonl").string(), rows);
  std::cout << "wrote " << o.scenes << " scenes to " << o.out << "\n";
  for (size_t q = 0; q < 3; ++q)
    std::cout << "  q=" << q << ": " << qh[q] << " ("
              << 100.0 * static_cast<double>(qh[q]) / static_cast<double>(o.scenes)
              << "%)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// manifest loading shared by train/evaluate

struct SceneRow {
  std::string id;
  size_t q = 0;
  QueryRegion query;
  std::string mixture, target;
  std::vector<std::string> sources;
  SceneSpec spec;
  bool has_spec = false;
  int sample_rate = 16000;
};

SceneRow parse_row(const nlohmann::json& j, const fs::path& base) {
  SceneRow r;
  try {
    r.id = j.at("id").get<std::string>();
    r.q = j.at("q").get<size_t>();
    r.query = parse_query(j.at("query").get<std::string>());
    r.sample_rate = j.at("sample_rate").get<int>();
    r.mixture = (base / j.at("mixture").get<std::string>()).string();
    r.target = (base / j.at("target").get<std::string>()).string();
    for (const auto& s : j.at("sources"))
      r.sources.push_back((base / s.get<std::string>()).string());
    if (j.count("spec")) {
      r.spec = j.at("spec").get<SceneSpec>();
      r.has_spec = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest row" + (r.id.empty() ? "" : " " + r.id) + ": " +
                    e.what());
  }
  return r;
}

std::vector<double> read_mono(const std::string& path) {
  const WavData w = read_wav(path);
  return w.channels.at(0);
}

// On-the-fly scene synthesis shared by train and ablate.
std::vector<TrainItem> synth_items(const std::string& profile,
                                   const std::string& noise,
                                   const std::string& array, size_t n,
                                   uint64_t seed, SourceProvider& provider,
                                   const SceneRanges& rr, size_t jobs) {
  std::vector<TrainItem> items(n);
  const Rng root(seed);
  parallel_each(n, jobs, [&](size_t i) {
    SceneSpec spec = random_scene(profile, noise, root.fork(i).next_u64(), rr);
    spec.array_name = array;
    SceneRender r = mix_scene(spec, provider);
    items[i] = TrainItem{std::move(r.mixture), std::move(r.target), r.q, spec.query};
  });
  return items;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string config, manifest, checkpoint, resume, log, corpus;
  size_t scenes = 0;
  size_t steps = 200;
  uint64_t seed = 0;
  size_t jobs = 1;
};

int cmd_train(const TrainOpts& o) {
  const ConfigFile cf = load_cli_config(o.config);
  const ModelConfig mc = model_config_from(cf);
  const TrainConfig tc = train_config_from(cf, o.seed);

  std::vector<TrainItem> items;
  if (!o.manifest.empty()) {
    const fs::path base = fs::path(o.manifest).parent_path();
    for (const auto& j : read_manifest(o.manifest)) {
      SceneRow row = parse_row(j, base);
      if (row.sample_rate != mc.stft.sample_rate)
        throw DataError("manifest scene " + row.id + " sample rate " +
                        std::to_string(row.sample_rate) +
                        " differs from the model's " +
                        std::to_string(mc.stft.sample_rate));
      TrainItem it;
      it.mixture = read_wav(row.mixture).channels;
      it.target = read_mono(row.target);
      it.q = row.q;
      it.query = row.query;
      items.push_back(std::move(it));
    }
  } else if (o.scenes > 0) {
    const auto provider = make_provider(o.corpus);
    items = synth_items(cf.get_str("scenes", "profile", "angular"),
                        cf.get_str("scenes", "noise", "train"),
                        cf.get_str("scenes", "array", "circ8_5cm"), o.scenes,
                        o.seed ^ 0x5ce9e5ULL, *provider, ranges_from(cf), o.jobs);
  } else {
    throw ConfigError("train: pass --manifest FILE or --scenes N");
  }

  Model model(mc, o.seed);
  AdamW opt;
  uint64_t step0 = 0;
  if (!o.resume.empty()) {
    model = load_checkpoint(o.resume, &opt, &step0);
    std::cout << "resumed from " << o.resume << " at step " << step0 << "\n";
  }
  Trainer tr(model, std::move(items), tc);
  if (!o.resume.empty()) {
    tr.optimizer() = opt;
    tr.set_train_step(step0);
  }

  std::string log = "step,loss,lr,scene,q\n";
  const size_t print_every = std::max<size_t>(1, o.steps / 10);
  std::vector<double> losses;
  for (size_t s = 0; s < o.steps; ++s) {
    const TrainStats st = tr.step();
    losses.push_back(st.loss);
    char line[128];
    std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g,%zu,%zu\n", st.step,
                  st.loss, st.lr, st.scene, st.q);
    log += line;
    if (s % print_every == 0 || s + 1 == o.steps)
      std::cout << "step " << st.step << "  loss " << st.loss << "  lr " << st.lr
                << "  scene " << st.scene << " (q=" << st.q << ")\n";
  }
  if (!o.log.empty()) detail::write_text_atomic(o.log, log);
  if (!o.checkpoint.empty()) {
    save_checkpoint(o.checkpoint, model, &tr.optimizer(), tr.train_step());
    std::cout << "checkpoint written to " << o.checkpoint << "\n";
  }

  if (losses.size() >= 20) {
    const size_t k = 10;
    double head = 0.0, tail = 0.0;
    for (size_t i = 0; i < k; ++i) {
      head += losses[i];
      tail += losses[losses.size() - k + i];
    }
    std::cout << "smoothed loss: first-" << k << " mean " << head / k
              << ", last-" << k << " mean " << tail / k << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOpts {
  std::string checkpoint, dist_checkpoint, in, query, out;
  std::string scheme = "a-then-d";
};

int cmd_extract(const ExtractOpts& o) {
  const QueryRegion q = parse_query(o.query);
  const WavData wav = read_wav(o.in);
  std::vector<double> est;
  int fs = wav.sample_rate;

  const auto check_rate = [&](const Model& m) {
    if (m.cfg.stft.sample_rate != wav.sample_rate)
      throw DataError("input sample rate " + std::to_string(wav.sample_rate) +
                      " does not match the model's " +
                      std::to_string(m.cfg.stft.sample_rate));
  };

  if (q.variant == RegionVariant::Conical) {
    if (o.dist_checkpoint.empty())
      throw ConfigError(
          "a conical query composes an angle model and a distance model; pass "
          "--checkpoint (angle) and --dist-checkpoint (distance)");
    Model am = load_checkpoint(o.checkpoint);
    Model dm = load_checkpoint(o.dist_checkpoint);
    check_rate(am);
    check_rate(dm);
    est = extract_conical(am, dm, wav.channels, q,
                          conical_scheme_from_string(o.scheme));
  } else {
    Model m = load_checkpoint(o.checkpoint);
    check_rate(m);
    est = extract(m, wav.channels, q);
  }

  WavData out;
  out.sample_rate = fs;
  out.channels = {est};
  write_wav(o.out, out);
  std::cout << "wrote " << o.out << " (" << est.size() << " samples)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string manifest, system, checkpoint, dist_checkpoint;
  std::string scheme = "a-then-d";
  std::string out_csv, out_json;
  size_t jobs = 1;
};

// In-region source poses drive the steered baselines; empty queries steer at
// the query's azimuth midpoint.
std::vector<SourcePose> target_poses(const SceneRow& row) {
  if (!row.has_spec)
    throw DataError("manifest row " + row.id +
                    " lacks the scene spec needed by steered baselines");
  std::vector<SourcePose> out;
  for (const auto& s : row.spec.speech)
    if (region_contains(row.query, s.pose)) out.push_back(s.pose);
  return out;
}

SourcePose fallback_pose(const QueryRegion& q) {
  SourcePose p;
  if (q.variant == RegionVariant::Angular || q.variant == RegionVariant::Conical)
    p.azimuth_deg = wrap_deg(q.az_lo + 0.5 * (q.az_hi - q.az_lo));
  return p;
}

std::vector<double> evaluate_estimate(const EvaluateOpts& o, const SceneRow& row,
                                      const WavData& mixw, Model* model,
                                      Model* dist_model) {
  const auto& mix = mixw.channels;
  if (o.system == "mixture") return mix.at(0);

  if (o.system == "model") {
    if (row.query.variant == RegionVariant::Conical) {
      if (model == nullptr || dist_model == nullptr)
        throw ConfigError(
            "conical scenes need --checkpoint (angle) and --dist-checkpoint "
            "(distance)");
      return extract_conical(*model, *dist_model, mix, row.query,
                             conical_scheme_from_string(o.scheme));
    }
    if (model == nullptr) throw ConfigError("system=model needs --checkpoint");
    return extract(*model, mix, row.query);
  }

  // steered baselines share the mixture spectrogram
  StftConfig cfg;
  cfg.sample_rate = mixw.sample_rate;
  const Spectrogram mspec = stft(mix, cfg);
  std::vector<double> est(mixw.num_samples(), 0.0);

  if (o.system == "das") {
    const MicArray arr = MicArray::preset(row.spec.array_name);
    auto poses = target_poses(row);
    if (poses.empty()) poses.push_back(fallback_pose(row.query));
    for (const auto& p : poses) {
      const auto y = istft_single(
          das_beamform(mspec, arr, p.azimuth_deg, p.elevation_deg), 0);
      for (size_t t = 0; t < est.size(); ++t) est[t] += y[t];
    }
    return est;
  }

  if (o.system == "irm-mvdr" || o.system == "csm-mvdr") {
    // one pass per in-region source, summed
    for (const std::string& spath : row.sources) {
      const WavData tgtw = read_wav(spath);
      if (tgtw.num_channels() != mix.size() ||
          tgtw.num_samples() != mixw.num_samples())
        throw DataError("target image " + spath + " does not match the mixture");
      const Spectrogram tspec = stft(tgtw.channels, cfg);
      Spectrogram out(cfg, 1, mspec.frames, mspec.num_samples);
      if (o.system == "csm-mvdr") {
        out = csm_mvdr(mspec, tspec, 0);
      } else {
        std::vector<std::vector<double>> resid(mix.size());
        for (size_t m = 0; m < mix.size(); ++m) {
          resid[m].resize(mixw.num_samples());
          for (size_t t = 0; t < resid[m].size(); ++t)
            resid[m][t] = mix[m][t] - tgtw.channels[m][t];
        }
        const Tensor irm = ideal_ratio_mask(tspec, stft(resid, cfg), 0);
        out = irm_mvdr(mspec, irm, 0);
      }
      const auto y = istft_single(out, 0);
      for (size_t t = 0; t < est.size(); ++t) est[t] += y[t];
    }
    return est;  // zero sources (q=0) leaves exact silence
  }

  throw ConfigError("unknown system '" + o.system + "'");
}

int cmd_evaluate(const EvaluateOpts& o) {
  const auto manifest = read_manifest(o.manifest);
  if (manifest.empty()) throw DataError("manifest is empty: " + o.manifest);
  const fs::path base = fs::path(o.manifest).parent_path();

  std::unique_ptr<Model> proto, dist_proto;
  if (o.system == "model") {
    if (o.checkpoint.empty()) throw ConfigError("system=model needs --checkpoint");
    proto = std::make_unique<Model>(load_checkpoint(o.checkpoint));
    if (!o.dist_checkpoint.empty())
      dist_proto = std::make_unique<Model>(load_checkpoint(o.dist_checkpoint));
  }

  std::vector<UtteranceMetrics> ms(manifest.size());
  parallel_chunks(manifest.size(), o.jobs, [&](size_t lo, size_t hi, size_t) {
    // each worker forwards through its own copy of the model
    std::unique_ptr<Model> model, dist_model;
    if (proto) model = std::make_unique<Model>(*proto);
    if (dist_proto) dist_model = std::make_unique<Model>(*dist_proto);
    for (size_t i = lo; i < hi; ++i) {
      const SceneRow row = parse_row(manifest[i], base);
      const WavData mixw = read_wav(row.mixture);
      const std::vector<double> est =
          evaluate_estimate(o, row, mixw, model.get(), dist_model.get());
      UtteranceMetrics um;
      um.scene_id = row.id;
      um.q = row.q;
      um.decay_db = energy_decay(mixw.channels.at(0), est);
      if (row.q > 0) um.sdr_db = si_sdr(read_mono(row.target), est);
      ms[i] = um;
    }
  });

  if (!o.out_csv.empty()) write_metrics_csv(o.out_csv, ms);
  if (!o.out_json.empty()) write_metrics_json(o.out_json, ms);
  std::cout << aggregate_metrics(ms).dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOpts {
  std::string dimension, out, corpus;
  uint64_t seed = 0;
  size_t steps = 150;
  size_t train_scenes = 8;
  size_t eval_scenes = 6;
  size_t repeats = 3;
  size_t jobs = 1;
};

std::vector<std::string> ablation_grid(const std::string& dim) {
  if (dim == "sampling")
    return {"interval:10", "interval:15", "interval:20",
            "number:3",    "number:4",    "number:6",   "number:8"};
  if (dim == "aggregation") return {"concat", "tac", "taa", "rnn", "rnn-loop"};
  if (dim == "mics") return {"linear:2:0.225", "linear:4:0.225", "linear:8:0.225"};
  if (dim == "diameter")
    return {"circular:4:0.02", "circular:4:0.05", "circular:4:0.10"};
  throw ConfigError("unknown ablation dimension '" + dim +
                    "' (want sampling|aggregation|mics|diameter)");
}

int cmd_ablate(const AblateOpts& o) {
  const auto grid = ablation_grid(o.dimension);
  const auto provider = make_provider(o.corpus);
  SceneRanges rr;
  rr.duration_lo = 2.5;
  rr.duration_hi = 3.5;

  std::string csv = "dimension,value,params,sdr_db_mean,sdr_db_std,decay_db_mean,decay_db_std,repeats\n";
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    const std::string& value = grid[gi];
    detail::RunningStat sdr_stat, decay_stat;
    size_t params = 0;

    for (size_t rep = 0; rep < o.repeats; ++rep) {
      const uint64_t rseed = Rng(o.seed).fork(gi * 97 + rep).next_u64();
      ModelConfig mc = ModelConfig::preset("toy", ModelVariant::Angle);
      std::string array = "circ8_5cm";
      if (o.dimension == "sampling") mc.sampling = sampling_from_string(value);
      if (o.dimension == "aggregation") mc.agg = agg_method_from_string(value);
      if (o.dimension == "mics" || o.dimension == "diameter") array = value;
      mc.array = MicArray::preset(array);
      mc.validate();

      auto items = synth_items("angular", "train", array, o.train_scenes, rseed,
                               *provider, rr, o.jobs);
      Model model(mc, rseed);
      params = model.num_params();
      TrainConfig tc;
      tc.crop_samples = 8000;
      tc.seed = rseed;
      Trainer tr(model, std::move(items), tc);
      for (size_t s = 0; s < o.steps; ++s) tr.step();

      const auto eval_items =
          synth_items("angular", "train", array, o.eval_scenes, rseed ^ 0xe7a1ULL,
                      *provider, rr, o.jobs);
      detail::RunningStat sdr_rep, decay_rep;
      for (const TrainItem& it : eval_items) {
        const auto est = extract(model, it.mixture, it.query);
        if (it.q > 0)
          sdr_rep.add(si_sdr(it.target, est));
        else
          decay_rep.add(energy_decay(it.mixture[0], est));
      }
      if (sdr_rep.n) sdr_stat.add(sdr_rep.mean());
      if (decay_rep.n) decay_stat.add(decay_rep.mean());
      std::cout << o.dimension << "=" << value << " repeat " << rep + 1 << "/"
                << o.repeats << ": sdr "
                << (sdr_rep.n ? std::to_string(sdr_rep.mean()) : "n/a")
                << " decay "
                << (decay_rep.n ? std::to_string(decay_rep.mean()) : "n/a")
                << "\n";
    }

    char line[256];
    std::snprintf(line, sizeof(line), "%s,%s,%zu,%s,%s,%s,%s,%zu\n",
                  o.dimension.c_str(), value.c_str(), params,
                  sdr_stat.n ? detail::metric_cell(sdr_stat.mean()).c_str() : "n/a",
                  sdr_stat.n ? detail::metric_cell(sdr_stat.stddev()).c_str() : "n/a",
                  decay_stat.n ? detail::metric_cell(decay_stat.mean()).c_str() : "n/a",
                  decay_stat.n ? detail::metric_cell(decay_stat.stddev()).c_str() : "n/a",
                  o.repeats);
    csv += line;
  }

  if (!o.out.empty()) detail::write_text_atomic(o.out, csv);
  std::cout << csv;
  return 0;
}

// ---------------------------------------------------------------------------
// features

struct FeaturesOpts {
  std::string in, out_prefix, array = "circ8_5cm", pairs, config;
};

int cmd_features(const FeaturesOpts& o) {
  const ConfigFile cf = load_cli_config(o.config);
  const WavData wav = read_wav(o.in);
  StftConfig cfg;
  cfg.sample_rate = wav.sample_rate;
  cfg.window_len = static_cast<size_t>(cf.get_int("stft", "window", static_cast<int64_t>(cfg.window_len)));
  cfg.hop = static_cast<size_t>(cf.get_int("stft", "hop", static_cast<int64_t>(cfg.hop)));
  cfg.fft_size = static_cast<size_t>(cf.get_int("stft", "fft", static_cast<int64_t>(cfg.fft_size)));
  cfg.validate();

  const MicArray arr = MicArray::preset(cf.get_str("scenes", "array", o.array));
  if (arr.num_mics() != wav.num_channels())
    throw DataError("input has " + std::to_string(wav.num_channels()) +
                    " channels but the array has " +
                    std::to_string(arr.num_mics()) + " mics");
  const std::vector<size_t> sel =
      o.pairs.empty() ? std::vector<size_t>{} : parse_index_list(o.pairs);
  const auto pairs = enumerate_pairs(arr, sel);
  const FeaturePack pack = compute_features(stft(wav.channels, cfg), pairs);
  dump_features(pack, cfg, o.out_prefix);
  std::cout << "wrote " << o.out_prefix << ".{ipd,ild}.f64 and "
            << o.out_prefix << ".json (" << pack.pairs.size() << " pairs, "
            << pack.frames << " frames, " << pack.bins << " bins)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "region-customizable sound extraction: simulation, training, extraction, "
      "baselines, evaluation, ablations"};
  app.require_subcommand(1);

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "synthesize scenes to WAV + manifest");
  sim->add_option("--config", so.config, "INI config (sections: scenes)");
  sim->add_option("--out", so.out, "output directory")->required();
  sim->add_option("--scenes", so.scenes, "number of scenes");
  sim->add_option("--seed", so.seed, "random seed")->required();
  sim->add_option("--jobs", so.jobs, "worker threads");
  sim->add_option("--corpus", so.corpus,
                  "speech corpus directory (default: $RSE_CORPUS_ROOT, else synthetic)");

  TrainOpts to;
  auto* trn = app.add_subcommand("train", "train a toy extraction model");
  trn->add_option("--config", to.config, "INI config (model/stft/train/scenes)");
  trn->add_option("--manifest", to.manifest, "train on a simulated manifest");
  trn->add_option("--scenes", to.scenes, "or synthesize this many scenes on the fly");
  trn->add_option("--steps", to.steps, "training steps");
  trn->add_option("--seed", to.seed, "random seed")->required();
  trn->add_option("--checkpoint", to.checkpoint, "checkpoint output path");
  trn->add_option("--resume", to.resume, "resume from this checkpoint");
  trn->add_option("--log", to.log, "per-step CSV log path");
  trn->add_option("--jobs", to.jobs, "worker threads for scene synthesis");
  trn->add_option("--corpus", to.corpus, "speech corpus directory");

  ExtractOpts eo;
  auto* ext = app.add_subcommand("extract", "extract a spatial region from a WAV");
  ext->add_option("--checkpoint", eo.checkpoint, "model checkpoint")->required();
  ext->add_option("--dist-checkpoint", eo.dist_checkpoint,
                  "distance-model checkpoint (conical queries)");
  ext->add_option("--scheme", eo.scheme,
                  "conical composition: intersect|a-then-d|d-then-a");
  ext->add_option("--in", eo.in, "input multichannel WAV")->required();
  ext->add_option("--query", eo.query,
                  "region query, e.g. az:-30..30, dist:0..0.9, ring:0.5..1.1, "
                  "cone:az:-150..-90,dist:0..1.5")
      ->required();
  ext->add_option("--out", eo.out, "output WAV")->required();

  EvaluateOpts vo;
  auto* ev = app.add_subcommand("evaluate", "score a system over a manifest");
  ev->add_option("--manifest", vo.manifest, "manifest from simulate")->required();
  ev->add_option("--system", vo.system, "model|das|irm-mvdr|csm-mvdr|mixture")
      ->required()
      ->check(CLI::IsMember({"model", "das", "irm-mvdr", "csm-mvdr", "mixture"}));
  ev->add_option("--checkpoint", vo.checkpoint, "model checkpoint (system=model)");
  ev->add_option("--dist-checkpoint", vo.dist_checkpoint,
                 "distance-model checkpoint for conical scenes");
  ev->add_option("--scheme", vo.scheme, "conical composition scheme");
  ev->add_option("--out-csv", vo.out_csv, "per-utterance CSV path");
  ev->add_option("--out-json", vo.out_json, "aggregate JSON path");
  ev->add_option("--jobs", vo.jobs, "worker threads");

  AblateOpts ao;
  auto* ab = app.add_subcommand("ablate", "sweep one design dimension");
  ab->add_option("--dimension", ao.dimension, "sampling|aggregation|mics|diameter")
      ->required();
  ab->add_option("--out", ao.out, "CSV table path");
  ab->add_option("--seed", ao.seed, "random seed")->required();
  ab->add_option("--steps", ao.steps, "training steps per run");
  ab->add_option("--train-scenes", ao.train_scenes, "training scenes per run");
  ab->add_option("--eval-scenes", ao.eval_scenes, "evaluation scenes per run");
  ab->add_option("--repeats", ao.repeats, "repeat seeds per grid value");
  ab->add_option("--jobs", ao.jobs, "worker threads for scene synthesis");
  ab->add_option("--corpus", ao.corpus, "speech corpus directory");

  FeaturesOpts fo;
  auto* ft = app.add_subcommand("features", "dump IPD/ILD features for a WAV");
  ft->add_option("--in", fo.in, "input multichannel WAV")->required();
  ft->add_option("--out-prefix", fo.out_prefix, "output file prefix")->required();
  ft->add_option("--array", fo.array, "array preset matching the recording");
  ft->add_option("--pairs", fo.pairs, "comma-separated mic subset");
  ft->add_option("--config", fo.config, "INI config (stft/scenes sections)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(so);
    if (trn->parsed()) return cmd_train(to);
    if (ext->parsed()) return cmd_extract(eo);
    if (ev->parsed()) return cmd_evaluate(vo);
    if (ab->parsed()) return cmd_ablate(ao);
    if (ft->parsed()) return cmd_features(fo);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

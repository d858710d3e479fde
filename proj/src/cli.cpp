#include "embedloc/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "embedloc/audio_io.hpp"
#include "embedloc/config_json.hpp"
#include "embedloc/error.hpp"
#include "embedloc/hash.hpp"
#include "embedloc/parallel.hpp"
#include "embedloc/rng.hpp"

namespace embedloc {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// RunConfig

std::string to_string(SplitSelection s) {
  switch (s) {
    case SplitSelection::train: return "train";
    case SplitSelection::test: return "test";
    case SplitSelection::all: return "all";
  }
  return "test";
}

SplitSelection parse_split_selection(const std::string& text, const std::string& where) {
  if (text == "train") return SplitSelection::train;
  if (text == "test") return SplitSelection::test;
  if (text == "all") return SplitSelection::all;
  throw ConfigError(where + ": expected train, test or all, got '" + text + "'");
}

namespace {

// Keys for derive_seed; fixed so that seeds stay stable across releases.
constexpr std::uint64_t kAugmentSeedKey = 0xa0;
constexpr std::uint64_t kTrainSeedKey = 0xa1;
constexpr std::uint64_t kProbeSeedKey = 0xa2;

json synth_to_json(const SynthSpec& s) {
  return {{"num_tracks", s.num_tracks},   {"duration_s", s.duration_s},
          {"bpm_min", s.bpm_min},         {"bpm_max", s.bpm_max},
          {"test_fraction", s.test_fraction}, {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
  const std::string where = "synth";
  reject_unknown_keys(j, {"num_tracks", "duration_s", "bpm_min", "bpm_max", "test_fraction", "seed"},
                      where);
  SynthSpec s;
  read_json_field(j, "num_tracks", s.num_tracks, where);
  read_json_field(j, "duration_s", s.duration_s, where);
  read_json_field(j, "bpm_min", s.bpm_min, where);
  read_json_field(j, "bpm_max", s.bpm_max, where);
  read_json_field(j, "test_fraction", s.test_fraction, where);
  read_json_field(j, "seed", s.seed, where);
  if (s.num_tracks < 2) throw ConfigError("synth.num_tracks must be >= 2");
  if (!(s.duration_s > 0.0)) throw ConfigError("synth.duration_s must be > 0");
  if (s.bpm_min < kProbeMinBpm || s.bpm_max > kProbeMaxBpm || s.bpm_min > s.bpm_max) {
    throw ConfigError("synth.bpm_min/bpm_max must satisfy 30 <= min <= max <= 300");
  }
  if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0)) {
    throw ConfigError("synth.test_fraction must be in (0, 1)");
  }
  return s;
}

json embed_to_json(const EmbedOptions& o) {
  return {{"window_seconds", o.window_seconds}, {"hop_seconds", o.hop_seconds}};
}

EmbedOptions embed_from_json(const json& j) {
  reject_unknown_keys(j, {"window_seconds", "hop_seconds"}, "embed");
  EmbedOptions o;
  read_json_field(j, "window_seconds", o.window_seconds, "embed");
  read_json_field(j, "hop_seconds", o.hop_seconds, "embed");
  o.validate();
  return o;
}

void require_k_grid(const std::vector<std::size_t>& k, const std::string& where) {
  if (k.empty()) throw ConfigError(where + ": empty k grid");
  for (auto v : k) {
    if (v == 0) throw ConfigError(where + ": k must be >= 1");
  }
}

json metrics_to_json(const MetricsConfig& m) {
  return {{"k_grid", m.k_grid},
          {"retrieval_k", m.retrieval_k},
          {"rmms_direction", to_string(m.rmms_direction)},
          {"tag_precision", to_string(m.tag_precision)},
          {"split", to_string(m.split)}};
}

MetricsConfig metrics_from_json(const json& j) {
  const std::string where = "metrics";
  reject_unknown_keys(j, {"k_grid", "retrieval_k", "rmms_direction", "tag_precision", "split"},
                      where);
  MetricsConfig m;
  read_json_field(j, "k_grid", m.k_grid, where);
  read_json_field(j, "retrieval_k", m.retrieval_k, where);
  std::string text;
  text = to_string(m.rmms_direction);
  read_json_field(j, "rmms_direction", text, where);
  m.rmms_direction = parse_rmms_direction(text);
  text = to_string(m.tag_precision);
  read_json_field(j, "tag_precision", text, where);
  m.tag_precision = parse_tag_precision_variant(text);
  text = to_string(m.split);
  read_json_field(j, "split", text, where);
  m.split = parse_split_selection(text, where + ".split");
  require_k_grid(m.k_grid, where + ".k_grid");
  require_k_grid(m.retrieval_k, where + ".retrieval_k");
  return m;
}

json sweep_to_json(const SweepConfig& s) {
  std::vector<std::string> kinds;
  for (auto k : s.kinds) kinds.push_back(to_string(k));
  return {{"kinds", kinds},
          {"stretch_grid", s.stretch_grid},
          {"semitone_grid", s.semitone_grid},
          {"split", to_string(s.split)},
          {"max_tracks", s.max_tracks}};
}

SweepConfig sweep_from_json(const json& j) {
  const std::string where = "sweep";
  reject_unknown_keys(j, {"kinds", "stretch_grid", "semitone_grid", "split", "max_tracks"}, where);
  SweepConfig s;
  std::vector<std::string> kinds{"time_stretch", "pitch_shift"};
  read_json_field(j, "kinds", kinds, where);
  s.kinds.clear();
  for (const auto& k : kinds) s.kinds.push_back(parse_sweep_kind(k));
  if (s.kinds.empty()) throw ConfigError("sweep.kinds: empty");
  read_json_field(j, "stretch_grid", s.stretch_grid, where);
  read_json_field(j, "semitone_grid", s.semitone_grid, where);
  std::string split = to_string(s.split);
  read_json_field(j, "split", split, where);
  s.split = parse_split_selection(split, where + ".split");
  read_json_field(j, "max_tracks", s.max_tracks, where);
  return s;
}

// Seeds are owned by the global seed; section-level copies are refused so
// that a config cannot carry two conflicting seeds.
json section_without_seed(const json& doc, const char* section) {
  if (!doc.contains(section)) return json::object();
  const json& j = doc.at(section);
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  if (j.contains("rng_seed")) {
    throw ConfigError(std::string(section) +
                      ".rng_seed: derived from the global seed; set `seed` instead");
  }
  return j;
}

}  // namespace

AugmentationSpec RunConfig::augment_effective() const {
  AugmentationSpec a = augment;
  a.rng_seed = derive_seed(seed, {kAugmentSeedKey});
  return a;
}

TrainConfig RunConfig::train_effective(std::size_t workers) const {
  TrainConfig t = train;
  t.rng_seed = derive_seed(seed, {kTrainSeedKey});
  t.workers = std::max<std::size_t>(1, workers);
  return t;
}

ProbeConfig RunConfig::probe_effective() const {
  ProbeConfig p = probe;
  p.rng_seed = derive_seed(seed, {kProbeSeedKey});
  return p;
}

json to_json(const RunConfig& c) {
  json augment = to_json(c.augment);
  augment.erase("rng_seed");
  json train = to_json(c.train);
  train.erase("rng_seed");
  train.erase("workers");
  json probe = to_json(c.probe);
  probe.erase("rng_seed");
  return {{"seed", c.seed},
          {"paths", {{"corpus_dir", c.corpus_dir.generic_string()},
                     {"output_dir", c.output_dir.generic_string()}}},
          {"synth", synth_to_json(c.synth)},
          {"mel", to_json(c.mel)},
          {"augment", augment},
          {"encoder", to_json(c.encoder)},
          {"train", train},
          {"probe", probe},
          {"embed", embed_to_json(c.embed)},
          {"metrics", metrics_to_json(c.metrics)},
          {"sweep", sweep_to_json(c.sweep)}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown_keys(j, {"seed", "paths", "synth", "mel", "augment", "encoder", "train",
                          "probe", "embed", "metrics", "sweep"},
                      "config");
  RunConfig c;
  read_json_field(j, "seed", c.seed, "config");
  auto section = [&](const char* name) {
    if (!j.contains(name)) return json::object();
    if (!j.at(name).is_object()) throw ConfigError(std::string(name) + ": expected an object");
    return j.at(name);
  };
  const json paths = section("paths");
  reject_unknown_keys(paths, {"corpus_dir", "output_dir"}, "paths");
  std::string dir = c.corpus_dir.string();
  read_json_field(paths, "corpus_dir", dir, "paths");
  c.corpus_dir = dir;
  dir = c.output_dir.string();
  read_json_field(paths, "output_dir", dir, "paths");
  c.output_dir = dir;
  c.synth = synth_from_json(section("synth"));
  c.mel = mel_config_from_json(section("mel"));
  c.augment = augmentation_from_json(section_without_seed(j, "augment"));
  c.encoder = encoder_config_from_json(section("encoder"));
  json train = section_without_seed(j, "train");
  if (train.contains("workers")) {
    throw ConfigError("train.workers: use the --workers flag (it does not change results)");
  }
  c.train = train_config_from_json(train);
  c.probe = probe_config_from_json(section_without_seed(j, "probe"));
  c.embed = embed_from_json(section("embed"));
  c.metrics = metrics_from_json(section("metrics"));
  c.sweep = sweep_from_json(section("sweep"));
  if (c.train.timing.context_seconds != c.augment.context_seconds) {
    throw ConfigError("train.pair_context_seconds must equal augment.context_seconds");
  }
  return c;
}

std::string config_hash(const RunConfig& c) { return content_hash(to_json(c).dump()); }

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects path=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("--set: empty component in '" + path + "'");
    if (!node->is_object()) {
      throw ConfigError("--set " + path + ": '" + path.substr(0, start - 1) + "' is not an object");
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Context {
  RunConfig config;
  std::string hash;
  std::size_t workers = 1;
  std::ostream& out;
};

json provenance(const Context& ctx) {
  return {{"config_hash", ctx.hash}, {"seed", ctx.config.seed}};
}

std::string csv_preamble(const Context& ctx) {
  return "# config_hash=" + ctx.hash + " seed=" + std::to_string(ctx.config.seed) + "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path manifest_path(const RunConfig& c) {
  const auto p = c.corpus_dir / "manifest.jsonl";
  if (!fs::exists(p)) {
    throw ConfigError("paths.corpus_dir: no manifest.jsonl in '" + c.corpus_dir.string() + "'");
  }
  return p;
}

fs::path existing_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw ConfigError(what + ": '" + dir.string() + "' not found");
  return dir;
}

bool in_split(const TrackRecord& r, SplitSelection s) {
  if (s == SplitSelection::all) return true;
  return (s == SplitSelection::train) == (r.split == Split::train);
}

EmbeddingSet subset(const EmbeddingSet& set, const std::vector<TrackRecord>& records,
                    SplitSelection split) {
  const auto rec = align_records(set, records);
  EmbeddingSet out(set.dim());
  out.checkpoint_id = set.checkpoint_id;
  out.chain_id = set.chain_id;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (in_split(*rec[i], split)) out.add(set.ids()[i], set.vector(i));
  }
  if (out.size() == 0) {
    throw DataError("no embedded tracks in the " + to_string(split) + " split");
  }
  return out;
}

void cmd_synth(const Context& ctx) {
  const auto& c = ctx.config;
  SynthSpec spec = c.synth;
  spec.sample_rate_hz = c.mel.sample_rate_hz;
  const auto records = generate_synthetic_corpus(spec, c.corpus_dir);
  json j = provenance(ctx);
  j["synth"] = synth_to_json(spec);
  j["sample_rate_hz"] = spec.sample_rate_hz;
  j["tracks"] = records.size();
  write_json(c.corpus_dir / "synth.json", j);
  ctx.out << "synth: " << records.size() << " tracks -> "
          << (c.corpus_dir / "manifest.jsonl").string() << "\n";
}

void cmd_extract(const Context& ctx) {
  const auto& c = ctx.config;
  const auto records = read_manifest(manifest_path(c));
  std::vector<std::size_t> frames(records.size());
  parallel_for(records.size(), ctx.workers, [&](std::size_t i) {
    const auto& r = records[i];
    const fs::path wav = c.corpus_dir / "audio" / (r.track_id + ".wav");
    const fs::path raw = c.corpus_dir / "audio" / (r.track_id + ".f32");
    PcmAudio audio;
    if (fs::exists(wav)) {
      audio = read_wav(wav);
    } else if (fs::exists(raw)) {
      audio = read_raw_f32(raw, c.mel.sample_rate_hz);
    } else {
      throw DataError(r.track_id + ": no audio/" + r.track_id + ".wav or .f32 in " +
                      c.corpus_dir.string());
    }
    if (audio.sample_rate_hz != c.mel.sample_rate_hz) {
      throw DataError(r.track_id + ": sample rate " + std::to_string(audio.sample_rate_hz) +
                      " differs from mel.sample_rate_hz " + std::to_string(c.mel.sample_rate_hz));
    }
    const auto mel = compute_mel(audio.samples, c.mel, r.track_id);
    fs::path target(r.feature_path);
    if (target.is_relative()) target = c.corpus_dir / target;
    fs::create_directories(target.parent_path());
    write_mel(target, mel);
    frames[i] = mel.num_frames();
  });
  json tracks = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    tracks.push_back({{"track_id", records[i].track_id}, {"frames", frames[i]}});
  }
  json j = provenance(ctx);
  j["mel"] = to_json(c.mel);
  j["tracks"] = tracks;
  write_json(c.corpus_dir / "extract.json", j);
  ctx.out << "extract: " << records.size() << " feature files\n";
}

void cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  const Corpus corpus = load_corpus(manifest_path(c), c.mel);
  const auto train = c.train_effective(ctx.workers);
  const auto aug = c.augment_effective();
  const auto result = train_encoder(corpus, aug, train, c.encoder, [&](std::size_t step, double loss) {
    if ((step + 1) % 100 == 0 || step + 1 == train.total_steps) {
      ctx.out << "train: step " << step + 1 << " loss " << loss << "\n";
    }
  });
  const fs::path dir = c.output_dir / "models" / aug.chain_id();
  save_encoder(result.params, dir);
  json j = provenance(ctx);
  j["checkpoint_id"] = checkpoint_id(result.params);
  j["chain_id"] = aug.chain_id();
  j["augment"] = to_json(aug);
  j["train"] = to_json(train);
  j["train"].erase("workers");
  j["final_loss"] = result.losses.back();
  write_json(dir / "provenance.json", j);
  std::ostringstream losses;
  losses.precision(17);
  losses << csv_preamble(ctx) << "step,loss\n";
  for (std::size_t s = 0; s < result.losses.size(); ++s) losses << s << "," << result.losses[s] << "\n";
  write_text(dir / "losses.csv", losses.str());
  ctx.out << "train: " << aug.chain_id() << " checkpoint " << checkpoint_id(result.params) << " -> "
          << dir.string() << "\n";
}

fs::path model_dir(const Context& ctx, const std::string& flag) {
  if (!flag.empty()) return existing_dir(flag, "--model");
  return existing_dir(ctx.config.output_dir / "models" / ctx.config.augment.chain_id(),
                      "model for chain " + ctx.config.augment.chain_id());
}

fs::path embeddings_dir(const Context& ctx, const std::string& flag) {
  if (!flag.empty()) return existing_dir(flag, "--embeddings");
  return existing_dir(ctx.config.output_dir / "embeddings" / ctx.config.augment.chain_id(),
                      "embeddings for chain " + ctx.config.augment.chain_id());
}

void cmd_embed(const Context& ctx, const std::string& model) {
  const auto& c = ctx.config;
  const auto params = load_encoder(model_dir(ctx, model));
  const Corpus corpus = load_corpus(manifest_path(c), c.mel);
  const auto result = embed_corpus(corpus, params, c.embed, {}, ctx.workers);
  json extra = provenance(ctx);
  extra["skipped"] = result.skipped;
  extra["embed"] = embed_to_json(c.embed);
  const fs::path dir = c.output_dir / "embeddings" / params.chain_id;
  save_embeddings(result.set, dir, extra);
  ctx.out << "embed: " << result.set.size() << " tracks (" << result.skipped.size()
          << " too short) -> " << dir.string() << "\n";
}

void cmd_sweep(const Context& ctx, const std::string& model) {
  const auto& c = ctx.config;
  const auto params = load_encoder(model_dir(ctx, model));
  const Corpus corpus = load_corpus(manifest_path(c), c.mel);
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    if (in_split(corpus.records[i], c.sweep.split)) indices.push_back(i);
  }
  if (c.sweep.max_tracks > 0 && indices.size() > c.sweep.max_tracks) indices.resize(c.sweep.max_tracks);
  if (indices.empty()) throw DataError("sweep: no tracks in the " + to_string(c.sweep.split) + " split");
  for (SweepKind kind : c.sweep.kinds) {
    const auto& grid =
        kind == SweepKind::time_stretch ? c.sweep.stretch_grid : c.sweep.semitone_grid;
    const auto result = manipulation_sweep(corpus, indices, params, kind, grid, c.embed, ctx.workers);
    const std::string stem = params.chain_id + "_" + to_string(kind);
    json j = to_json(result);
    j["provenance"] = provenance(ctx);
    write_json(c.output_dir / "sweeps" / (stem + ".json"), j);
    write_text(c.output_dir / "sweeps" / (stem + ".csv"), csv_preamble(ctx) + to_csv(result));
    ctx.out << "sweep: " << stem << " over " << indices.size() << " tracks\n";
  }
}

void write_report(const Context& ctx, const std::string& stem, const NeighborhoodReport& report) {
  json j = to_json(report);
  j["provenance"] = provenance(ctx);
  j["split"] = to_string(ctx.config.metrics.split);
  const fs::path dir = ctx.config.output_dir / "reports";
  write_json(dir / (stem + ".json"), j);
  write_text(dir / (stem + ".csv"), csv_preamble(ctx) + to_csv(report));
}

void cmd_neighborhood(const Context& ctx, const std::string& embeddings) {
  const auto& c = ctx.config;
  const auto records = read_manifest(manifest_path(c));
  const auto set = subset(load_embeddings(embeddings_dir(ctx, embeddings)), records, c.metrics.split);
  const auto report = neighborhood_report(
      set, records, c.metrics.k_grid, {"tempo_rmms", "key_precision", "tag_precision", "tag_retrieval"},
      c.metrics.rmms_direction, c.metrics.tag_precision);
  write_report(ctx, "neighborhood_" + set.chain_id, report);
  ctx.out << "neighborhood: " << set.chain_id << " " << report.rows.size() << " rows over "
          << set.size() << " tracks\n";
}

void cmd_retrieval(const Context& ctx, const std::string& embeddings) {
  const auto& c = ctx.config;
  const auto records = read_manifest(manifest_path(c));
  const auto set = subset(load_embeddings(embeddings_dir(ctx, embeddings)), records, c.metrics.split);
  const auto report = neighborhood_report(set, records, c.metrics.retrieval_k,
                                          {"tag_precision", "tag_retrieval"},
                                          c.metrics.rmms_direction, c.metrics.tag_precision);
  write_report(ctx, "retrieval_" + set.chain_id, report);
  ctx.out << "retrieval: " << set.chain_id << " " << report.rows.size() << " rows over "
          << set.size() << " tracks\n";
}

void cmd_probe(const Context& ctx, const std::string& embeddings) {
  const auto& c = ctx.config;
  const auto records = read_manifest(manifest_path(c));
  const auto all = load_embeddings(embeddings_dir(ctx, embeddings));
  const auto train_set = subset(all, records, SplitSelection::train);
  const auto test_set = subset(all, records, SplitSelection::test);
  const auto config = c.probe_effective();
  const auto trained = train_probe(train_set, records, config);
  const fs::path dir = c.output_dir / "probes" / all.chain_id;
  save_probe(trained.model, dir);
  const auto eval = evaluate_probe(trained.model, test_set, records);
  json j = provenance(ctx);
  j["chain_id"] = all.chain_id;
  j["checkpoint_id"] = all.checkpoint_id;
  j["probe"] = to_json(config);
  j["train_tracks"] = train_set.size();
  j["test_tracks"] = test_set.size();
  j["final_loss"] = trained.losses.back();
  j["acc1"] = eval.acc1;
  j["acc2"] = eval.acc2;
  write_json(dir / "provenance.json", j);
  write_json(c.output_dir / "reports" / ("probe_" + all.chain_id + ".json"), j);
  write_text(c.output_dir / "reports" / ("probe_" + all.chain_id + ".csv"),
             csv_preamble(ctx) + to_csv(eval, config.tolerance));
  ctx.out << "probe: " << all.chain_id << " acc1 " << eval.acc1 << " acc2 " << eval.acc2 << "\n";
}

std::string csv_field(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream s;
    s.precision(17);
    s << v.get<double>();
    return s.str();
  }
  return v.dump();
}

void cmd_report(const Context& ctx) {
  const auto& c = ctx.config;
  const fs::path dir = existing_dir(c.output_dir / "reports", "reports directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no reports in " + dir.string());
  json merged = provenance(ctx);
  merged["reports"] = json::object();
  std::string csv = csv_preamble(ctx) + "source,chain_id,metric,k,value,report_config_hash\n";
  for (const auto& path : files) {
    std::ifstream in(path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("bad report " + path.string() + ": " + e.what());
    }
    const std::string stem = path.stem().string();
    const std::string kind = stem.substr(0, stem.find('_'));
    const std::string hash = j.contains("provenance") ? j["provenance"].value("config_hash", "")
                                                      : j.value("config_hash", "");
    const std::string chain = j.value("chain_id", "");
    if (j.contains("rows")) {
      for (const auto& row : j["rows"]) {
        csv += kind + "," + chain + "," + row.value("metric", "") + "," + csv_field(row["k"]) +
               "," + csv_field(row["value"]) + "," + hash + "\n";
      }
    } else if (j.contains("acc1")) {
      for (const char* metric : {"acc1", "acc2"}) {
        csv += kind + "," + chain + "," + metric + ",," + csv_field(j[metric]) + "," + hash + "\n";
      }
    }
    merged["reports"][stem] = std::move(j);
  }
  write_json(c.output_dir / "report.json", merged);
  write_text(c.output_dir / "report.csv", csv);
  ctx.out << "report: merged " << files.size() << " reports -> "
          << (c.output_dir / "report.json").string() << "\n";
}

RunConfig load_run_config(const std::string& config_file, const std::vector<std::string>& sets) {
  json doc = json::object();
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("--config: cannot open '" + config_file + "'");
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("--config: " + config_file + ": " + e.what());
    }
  }
  for (const auto& s : sets) apply_override(doc, s);
  if (const char* env = std::getenv("EMBEDLOC_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      doc["seed"] = seed;
    } catch (const std::exception&) {
      throw ConfigError(std::string("EMBEDLOC_SEED: not an unsigned integer: '") + env + "'");
    }
  }
  return run_config_from_json(doc);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"embedloc: augmentation, contrastive training and embedding locality analysis",
               "embedloc"};
  app.require_subcommand(1);
  std::string config_file, model, embeddings;
  std::vector<std::string> sets;
  std::size_t workers = 1;
  bool deterministic = false;

  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {
      {"synth", "generate the synthetic corpus (audio + manifest)"},
      {"extract", "compute mel features for every manifest track"},
      {"train", "train a contrastive encoder with the configured augmentation chain"},
      {"embed", "embed every corpus track with a trained encoder"},
      {"sweep", "time-stretch / pitch-shift manipulation sweeps"},
      {"neighborhood", "tempo, key and tag locality of k-nearest neighbourhoods"},
      {"retrieval", "tag precision and retrieval at k"},
      {"probe", "train and evaluate the tempo probe"},
      {"report", "merge the JSON reports into report.json / report.csv"},
      {"config", "print the resolved configuration and its hash"},
  };
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("-c,--config", config_file, "JSON run configuration");
    sub->add_option("--set", sets, "override a config leaf: dotted.path=value")->take_all();
    sub->add_option("-w,--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", deterministic, "force single-threaded execution");
    const std::string name = cmd.name;
    if (name == "embed" || name == "sweep") {
      sub->add_option("--model", model, "encoder checkpoint directory");
    }
    if (name == "neighborhood" || name == "retrieval" || name == "probe") {
      sub->add_option("--embeddings", embeddings, "embedding set directory");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "embedloc: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return 2;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    Context ctx{load_run_config(config_file, sets), "", deterministic ? 1 : workers, out};
    ctx.hash = config_hash(ctx.config);
    if (name != "config") {
      fs::create_directories(ctx.config.output_dir);
      write_json(ctx.config.output_dir / ("config_" + ctx.hash + ".json"), to_json(ctx.config));
    }
    if (name == "synth") cmd_synth(ctx);
    else if (name == "extract") cmd_extract(ctx);
    else if (name == "train") cmd_train(ctx);
    else if (name == "embed") cmd_embed(ctx, model);
    else if (name == "sweep") cmd_sweep(ctx, model);
    else if (name == "neighborhood") cmd_neighborhood(ctx, embeddings);
    else if (name == "retrieval") cmd_retrieval(ctx, embeddings);
    else if (name == "probe") cmd_probe(ctx, embeddings);
    else if (name == "report") cmd_report(ctx);
    else out << to_json(ctx.config).dump(2) << "\nconfig_hash " << ctx.hash << "\n";
    return 0;
  } catch (const ConfigError& e) {
    err << "embedloc: configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "embedloc: data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "embedloc: numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    err << "embedloc: data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "embedloc: internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace embedloc

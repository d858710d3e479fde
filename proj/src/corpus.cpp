#include "embedloc/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "embedloc/audio_io.hpp"
#include "embedloc/error.hpp"

namespace embedloc {
namespace {

using nlohmann::json;

constexpr std::array<const char*, 12> kPitchNames = {
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

// Adds amplitude * sum_n n^-2 sin(2 pi n f t) using a rotating
// phasor per partial.
void add_tone(std::vector<double>& out, int rate, double hz, double amplitude,
              Timbre timbre) {
  const int partials = timbre == Timbre::saw_like ? 6 : 1;
  for (int n = 1; n <= partials; ++n) {
    const double f = hz * n;
    if (f >= 0.45 * rate) break;
    const double gain = amplitude / (n * n);
    const double w = 2.0 * std::numbers::pi * f / rate;
    const std::complex<double> step(std::cos(w), std::sin(w));
    std::complex<double> phasor(1.0, 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += gain * phasor.imag();
      phasor *= step;
      if ((i & 4095) == 4095) phasor /= std::abs(phasor);
    }
  }
}

// Decaying noise burst; `smoothing` > 0 runs it through a one-pole lowpass
// with that coefficient (darker hit).
void add_hit(std::vector<double>& out, int rate, double time_s, double amplitude,
             double decay_s, double smoothing, Rng& rng) {
  double state = 0.0;
  const auto start = static_cast<long>(std::lround(time_s * rate));
  const auto length = static_cast<long>(std::ceil(6.0 * decay_s * rate));
  for (long i = 0; i < length; ++i) {
    const long j = start + i;
    if (j < 0 || j >= static_cast<long>(out.size())) continue;
    const double env = std::exp(-static_cast<double>(i) / (decay_s * rate));
    state = smoothing * state + (1.0 - smoothing) * rng.normal();
    out[static_cast<std::size_t>(j)] += amplitude * env * state;
  }
}

}  // namespace

// --- keys -------------------------------------------------------------------

std::string KeyLabel::to_string() const {
  return std::string(kPitchNames[static_cast<std::size_t>(pitch_class)]) +
         (minor ? " minor" : " major");
}

KeyLabel parse_key(std::string_view text) {
  const auto space = text.find(' ');
  if (space == std::string_view::npos) {
    throw DataError("key label '" + std::string(text) + "' lacks a mode");
  }
  const auto note = text.substr(0, space);
  const auto mode = text.substr(space + 1);
  if (note.empty() || note.size() > 2) {
    throw DataError("bad key root in '" + std::string(text) + "'");
  }
  static constexpr std::array<int, 7> naturals = {9, 11, 0, 2, 4, 5, 7};  // A..G
  const char letter = note[0];
  if (letter < 'A' || letter > 'G') {
    throw DataError("bad key root in '" + std::string(text) + "'");
  }
  int pc = naturals[static_cast<std::size_t>(letter - 'A')];
  if (note.size() == 2) {
    if (note[1] == '#') {
      pc += 1;
    } else if (note[1] == 'b') {
      pc += 11;
    } else {
      throw DataError("bad accidental in '" + std::string(text) + "'");
    }
  }
  KeyLabel key;
  key.pitch_class = pc % 12;
  if (mode == "major") {
    key.minor = false;
  } else if (mode == "minor") {
    key.minor = true;
  } else {
    throw DataError("bad key mode in '" + std::string(text) + "'");
  }
  return key;
}

std::vector<KeyLabel> all_keys() {
  std::vector<KeyLabel> keys;
  for (bool minor : {false, true}) {
    for (int pc = 0; pc < 12; ++pc) keys.push_back({pc, minor});
  }
  return keys;
}

// --- manifest ---------------------------------------------------------------

void TrackRecord::validate() const {
  if (track_id.empty()) throw DataError("track record with empty track_id");
  if (bpm && !(*bpm >= 30.0 && *bpm <= 300.0)) {
    throw DataError("track " + track_id + ": bpm " + std::to_string(*bpm) +
                    " outside [30, 300]");
  }
  if (!(duration_s >= 0.0)) {
    throw DataError("track " + track_id + ": negative duration");
  }
}

std::string manifest_line(const TrackRecord& r) {
  json j;
  j["track_id"] = r.track_id;
  j["feature_path"] = r.feature_path;
  j["duration_s"] = r.duration_s;
  j["bpm"] = r.bpm ? json(*r.bpm) : json(nullptr);
  j["key_label"] = r.key_label ? json(r.key_label->to_string()) : json(nullptr);
  j["tags"] = r.tags;
  j["split"] = split_name(r.split);
  return j.dump();
}

TrackRecord parse_manifest_line(std::string_view line) {
  TrackRecord r;
  try {
    const json j = json::parse(line);
    r.track_id = j.at("track_id").get<std::string>();
    r.feature_path = j.at("feature_path").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    if (j.contains("bpm") && !j["bpm"].is_null()) r.bpm = j["bpm"].get<double>();
    if (j.contains("key_label") && !j["key_label"].is_null()) {
      r.key_label = parse_key(j["key_label"].get<std::string>());
    }
    if (j.contains("tags")) r.tags = j["tags"].get<std::set<std::string>>();
    r.split = parse_split(j.at("split").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest line: ") + e.what());
  }
  r.validate();
  return r;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<TrackRecord>& records) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  for (const auto& r : records) out << manifest_line(r) << '\n';
}

std::vector<TrackRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest: " + path.string());
  std::vector<TrackRecord> records;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_manifest_line(line));
    if (!seen.insert(records.back().track_id).second) {
      throw DataError("duplicate track_id in manifest: " + records.back().track_id);
    }
  }
  return records;
}

// --- pairs ------------------------------------------------------------------

std::optional<PairSample> sample_pair(const TrackRecord& track,
                                      const MelSpectrogram& features,
                                      const PairTiming& timing, Rng& rng) {
  const MelConfig& config = features.config();
  const double fps = config.frames_per_second();
  const std::size_t context = config.frames_for_seconds(timing.context_seconds);
  const double min_duration =
      2.0 * timing.context_seconds + timing.max_offset_seconds;
  if (track.duration_s < min_duration || features.num_frames() < context) {
    return std::nullopt;
  }
  const std::size_t last_start = features.num_frames() - context;
  const auto window =
      static_cast<std::size_t>(std::floor(timing.max_offset_seconds * fps + 1e-9));

  const std::size_t anchor = rng.index(last_start + 1);
  const std::size_t lo = anchor > window ? anchor - window : 0;
  const std::size_t hi = std::min(last_start, anchor + window);
  const std::size_t positive = lo + rng.index(hi - lo + 1);

  PairSample pair;
  pair.track_id = track.track_id;
  pair.anchor = features.slice(anchor, context);
  pair.positive = features.slice(positive, context);
  pair.anchor_offset_s = static_cast<double>(anchor) / fps;
  pair.positive_offset_s = static_cast<double>(positive) / fps;
  return pair;
}

// --- synthetic corpus -------------------------------------------------------

std::string to_string(Timbre t) {
  switch (t) {
    case Timbre::sine:
      return "sine";
    case Timbre::saw_like:
      return "saw-like";
    case Timbre::noise_perc:
      return "noise-perc";
  }
  return "?";
}

std::string to_string(Density d) { return d == Density::sparse ? "sparse" : "dense"; }

std::string to_string(Brightness b) {
  return b == Brightness::bright ? "bright" : "dark";
}

std::vector<SynthTrackPlan> plan_synthetic_corpus(const SynthSpec& spec) {
  if (spec.num_tracks == 0) return {};
  if (spec.bpm_min < 30 || spec.bpm_max > 300 || spec.bpm_min > spec.bpm_max) {
    throw ConfigError("synth bpm range must lie within [30, 300]");
  }
  if (!(spec.duration_s > 0.0)) throw ConfigError("synth.duration_s must be positive");
  Rng rng(derive_seed(spec.seed, {0x5e7}));
  const std::size_t n = spec.num_tracks;

  // Shuffled slots: tempo strata and key cycle are assigned independently.
  auto shuffled = [&](std::size_t count) {
    std::vector<std::size_t> p(count);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = count; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
    return p;
  };
  const auto tempo_slot = shuffled(n);
  const auto key_slot = shuffled(n);
  const auto split_slot = shuffled(n);
  const auto keys = all_keys();
  const auto test_count =
      static_cast<std::size_t>(std::lround(spec.test_fraction * static_cast<double>(n)));

  std::vector<SynthTrackPlan> plans(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& plan = plans[i];
    char id[32];
    std::snprintf(id, sizeof(id), "syn%05zu", i);
    plan.record.track_id = id;
    plan.record.feature_path = "features/" + plan.record.track_id + ".emlt";
    plan.record.duration_s = spec.duration_s;
    const double span = spec.bpm_max - spec.bpm_min;
    const double stratum = (static_cast<double>(tempo_slot[i]) + rng.uniform()) /
                           static_cast<double>(n);
    plan.record.bpm = std::round(spec.bpm_min + span * stratum);
    plan.record.key_label = keys[key_slot[i] % keys.size()];
    plan.record.split = split_slot[i] < test_count ? Split::test : Split::train;
    plan.timbre = static_cast<Timbre>(rng.index(3));
    plan.density = static_cast<Density>(rng.index(2));
    plan.brightness = static_cast<Brightness>(rng.index(2));
    plan.beat_phase_s = rng.uniform(0.0, 60.0 / *plan.record.bpm);
    plan.noise_seed = rng.next_u64();
    plan.record.tags = {to_string(plan.timbre), to_string(plan.density),
                        to_string(plan.brightness)};
  }
  return plans;
}

std::vector<double> render_track(const SynthTrackPlan& plan, int rate) {
  const auto samples = static_cast<std::size_t>(plan.record.duration_s * rate);
  std::vector<double> out(samples, 0.0);

  // Sustained triad; the root is emphasised so it dominates the chroma.
  const KeyLabel key = plan.record.key_label.value_or(KeyLabel{});
  const int base = 84;  // roots C6..B6
  const int root = base + ((key.pitch_class - base % 12) % 12 + 12) % 12;
  const Timbre tone_timbre =
      plan.timbre == Timbre::noise_perc ? Timbre::sine : plan.timbre;
  add_tone(out, rate, midi_to_hz(root), 0.12, tone_timbre);
  add_tone(out, rate, midi_to_hz(root + (key.minor ? 3 : 4)), 0.06, tone_timbre);
  add_tone(out, rate, midi_to_hz(root + 7), 0.06, tone_timbre);

  // Percussion on every beat. Dense beats are a three-stroke flam inside the
  // first quarter of the beat, so the beat stays the only periodicity in
  // the tempo range.
  Rng noise(plan.noise_seed);
  const double period = 60.0 / plan.record.bpm.value_or(120.0);
  const bool long_hits = plan.timbre == Timbre::noise_perc;
  const double decay = long_hits ? 0.03 : 0.006;
  // Dark hits are lowpassed near 400 Hz, with more gain to keep them audible.
  const bool dark = plan.brightness == Brightness::dark;
  const double smoothing = dark ? 0.85 : 0.0;
  const double gain = (long_hits ? 0.25 : 0.4) * (dark ? 2.0 : 1.0);
  for (double t = plan.beat_phase_s; t < plan.record.duration_s; t += period) {
    add_hit(out, rate, t, gain, decay, smoothing, noise);
    if (plan.density == Density::dense) {
      add_hit(out, rate, t + 0.125 * period, 0.6 * gain, decay, smoothing, noise);
      add_hit(out, rate, t + 0.25 * period, 0.4 * gain, decay, smoothing, noise);
    }
  }
  for (double& s : out) s = std::clamp(s, -1.0, 1.0);
  return out;
}

std::vector<TrackRecord> generate_synthetic_corpus(const SynthSpec& spec,
                                                   const std::filesystem::path& dir) {
  std::vector<TrackRecord> records;
  for (const auto& plan : plan_synthetic_corpus(spec)) {
    write_wav(dir / "audio" / (plan.record.track_id + ".wav"),
              render_track(plan, spec.sample_rate_hz), spec.sample_rate_hz);
    records.push_back(plan.record);
  }
  write_manifest(dir / "manifest.jsonl", records);
  return records;
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const MelConfig& config) {
  Corpus corpus;
  corpus.records = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  corpus.features.reserve(corpus.records.size());
  for (const auto& r : corpus.records) {
    std::filesystem::path p(r.feature_path);
    if (p.is_relative()) p = root / p;
    corpus.features.push_back(read_mel(p, config, r.track_id));
  }
  return corpus;
}

}  // namespace embedloc

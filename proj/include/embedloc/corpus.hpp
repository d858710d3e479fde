#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "embedloc/melfront.hpp"
#include "embedloc/rng.hpp"

namespace embedloc {

enum class Split { train, test };

/// One of the 24 major/minor keys.
struct KeyLabel {
  int pitch_class = 0;  // 0 = C
  bool minor = false;

  std::string to_string() const;  // "C# minor"
  auto operator<=>(const KeyLabel&) const = default;
};

/// Parses "C major", "F# minor", "Bb major" (flats are normalized to sharps).
KeyLabel parse_key(std::string_view text);
std::vector<KeyLabel> all_keys();

struct TrackRecord {
  std::string track_id;
  std::string feature_path;
  double duration_s = 0.0;
  std::optional<double> bpm;
  std::optional<KeyLabel> key_label;
  std::set<std::string> tags;
  Split split = Split::train;

  /// Throws DataError when bpm is outside [30, 300] or the id is empty.
  void validate() const;
  bool operator==(const TrackRecord&) const = default;
};

/// JSON lines, one record per line, UTF-8.
void write_manifest(const std::filesystem::path& path,
                    const std::vector<TrackRecord>& records);
std::vector<TrackRecord> read_manifest(const std::filesystem::path& path);

std::string manifest_line(const TrackRecord& record);
TrackRecord parse_manifest_line(std::string_view line);

// ---------------------------------------------------------------------------
// Contrastive pairs.

struct PairTiming {
  double context_seconds = 4.5;
  double max_offset_seconds = 5.0;
  bool operator==(const PairTiming&) const = default;
};

struct PairSample {
  MelSpectrogram anchor;
  MelSpectrogram positive;
  std::string track_id;
  double anchor_offset_s = 0.0;
  double positive_offset_s = 0.0;
};

/// Anchor start uniform over the track; positive start uniform within
/// +-max_offset of it, clipped to the track. Both segments carry
/// context_seconds of frames. Returns nullopt ("skip, resample another
/// track") when the track is shorter than 2 * context + max_offset.
std::optional<PairSample> sample_pair(const TrackRecord& track,
                                      const MelSpectrogram& features,
                                      const PairTiming& timing, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic corpus: click rhythm at a known tempo over a sustained triad in
// a known key, tagged by timbre family, rhythm density and percussion
// brightness. The triad always sits in one octave so that tracks in the
// same key share their band profile.

enum class Timbre { sine, saw_like, noise_perc };
enum class Density { sparse, dense };
enum class Brightness { bright, dark };

struct SynthSpec {
  std::size_t num_tracks = 200;
  double duration_s = 16.0;
  int sample_rate_hz = 16000;
  int bpm_min = 60;
  int bpm_max = 180;
  double test_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct SynthTrackPlan {
  TrackRecord record;
  Timbre timbre = Timbre::sine;
  Density density = Density::sparse;
  Brightness brightness = Brightness::bright;
  double beat_phase_s = 0.0;
  std::uint64_t noise_seed = 0;
};

std::string to_string(Timbre t);
std::string to_string(Density d);
std::string to_string(Brightness b);

/// Ground truth for every track. Integer BPMs are stratified over
/// [bpm_min, bpm_max]; keys cycle through all 24 in shuffled order.
std::vector<SynthTrackPlan> plan_synthetic_corpus(const SynthSpec& spec);

/// Mono PCM in [-1, 1] for one planned track.
std::vector<double> render_track(const SynthTrackPlan& plan, int sample_rate_hz);

/// Writes <dir>/audio/<id>.wav for every track plus <dir>/manifest.jsonl
/// (feature_path = "features/<id>.emlt", relative to <dir>).
std::vector<TrackRecord> generate_synthetic_corpus(const SynthSpec& spec,
                                                   const std::filesystem::path& dir);

/// Manifest plus decoded features, index-aligned.
struct Corpus {
  std::vector<TrackRecord> records;
  std::vector<MelSpectrogram> features;

  std::vector<std::size_t> indices(Split split) const;
};

/// Loads every record's feature file; relative paths resolve against `root`.
Corpus load_corpus(const std::filesystem::path& manifest_path,
                   const MelConfig& config);

}  // namespace embedloc

#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "embedloc/corpus.hpp"
#include "embedloc/embedspace.hpp"
#include "embedloc/encoder.hpp"

namespace embedloc {

// ---------------------------------------------------------------------------
// Manipulation sweeps: distance between a track's average embedding and
// that of a time-stretched or pitch-shifted copy.

enum class SweepKind { time_stretch, pitch_shift };

std::string to_string(SweepKind kind);
SweepKind parse_sweep_kind(const std::string& text);

/// Stretch factors 2^(i/8), i = -8..8.
std::vector<double> default_stretch_grid();
/// Semitone shifts -12..12.
std::vector<double> default_semitone_grid();

struct SweepResult {
  SweepKind kind = SweepKind::time_stretch;
  std::vector<double> grid;  // stretch factor tau, or semitones
  std::vector<std::string> track_ids;
  // distances[t][g]; NaN where the modified track was too short to embed.
  std::vector<std::vector<double>> distances;
  std::vector<double> mean, q25, q75;
  std::vector<std::size_t> count;
  std::string checkpoint_id, chain_id;
};

/// Grid must contain the identity (1 for stretch, 0 semitones) or a
/// ConfigError is thrown. Quartiles use linear interpolation between order
/// statistics.
SweepResult manipulation_sweep(const Corpus& corpus, const std::vector<std::size_t>& indices,
                               const EncoderParams& params, SweepKind kind,
                               const std::vector<double>& grid,
                               const EmbedOptions& options = {}, std::size_t workers = 1);

/// Linear-interpolation quantile of unsorted values (q in [0, 1]).
double quantile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Neighbourhood metrics. Each takes the neighbour table of the set (rows
// from knn_table with at least k columns) and the manifest records.

enum class RmmsDirection { seed, neighbor };
enum class TagPrecisionVariant { multiset, per_neighbor };

std::string to_string(RmmsDirection d);
std::string to_string(TagPrecisionVariant v);
RmmsDirection parse_rmms_direction(const std::string& text);
TagPrecisionVariant parse_tag_precision_variant(const std::string& text);

/// Tempo octaves {1/3, 1/2, 1, 2, 3}.
const std::vector<double>& tempo_octaves();

struct MetricValue {
  double value = 0.0;
  std::size_t seeds = 0;    // seeds (or tag carriers) contributing
  std::size_t skipped = 0;  // seeds lacking labels; single-carrier tags for retrieval
  std::vector<double> per_seed;  // NaN for skipped seeds; per tag for retrieval
};

/// Maps every id of the set to its manifest record; DataError if missing.
std::vector<const TrackRecord*> align_records(const EmbeddingSet& set,
                                              const std::vector<TrackRecord>& records);

using NeighborTable = std::vector<std::vector<Neighbor>>;

/// Per seed sqrt(mean_j min_o (o*bpm_s - bpm_j)^2), averaged over seeds.
/// With RmmsDirection::neighbor the octave multiplies bpm_j instead.
MetricValue tempo_rmms(const NeighborTable& table, const std::vector<const TrackRecord*>& rec,
                       std::size_t k, RmmsDirection direction = RmmsDirection::seed);

/// Fraction of the k neighbours sharing the seed's key label.
MetricValue key_precision(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k);

/// Multiset: (neighbour tags found in the seed's set) / (all neighbour tags).
/// Per-neighbour: mean over tagged neighbours of that fraction.
MetricValue tag_precision(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k,
                          TagPrecisionVariant variant = TagPrecisionVariant::multiset);

/// Per tag: fraction of carriers with a carrier among their k neighbours;
/// averaged over tags. `skipped` counts single-carrier tags (scored 0).
MetricValue tag_retrieval(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k);

struct NeighborhoodRow {
  std::string metric;
  std::size_t k = 0;
  MetricValue value;
};

struct NeighborhoodReport {
  std::vector<std::size_t> k_grid;
  std::vector<NeighborhoodRow> rows;
  RmmsDirection rmms_direction = RmmsDirection::seed;
  TagPrecisionVariant tag_variant = TagPrecisionVariant::multiset;
  std::string checkpoint_id, chain_id;

  double value(const std::string& metric, std::size_t k) const;
};

/// Evaluates the listed metrics ("tempo_rmms", "key_precision",
/// "tag_precision", "tag_retrieval") at every k.
NeighborhoodReport neighborhood_report(const EmbeddingSet& set,
                                       const std::vector<TrackRecord>& records,
                                       const std::vector<std::size_t>& k_grid,
                                       const std::vector<std::string>& metrics,
                                       RmmsDirection direction = RmmsDirection::seed,
                                       TagPrecisionVariant variant = TagPrecisionVariant::multiset);

nlohmann::json to_json(const NeighborhoodReport& report);
/// Long format: metric,k,value,seeds,skipped.
std::string to_csv(const NeighborhoodReport& report);
nlohmann::json to_json(const SweepResult& sweep);
/// factor,mean,q25,q75,count
std::string to_csv(const SweepResult& sweep);

}  // namespace embedloc

#include "embedloc/locality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "embedloc/augment.hpp"
#include "embedloc/error.hpp"
#include "embedloc/parallel.hpp"

namespace embedloc {

using nlohmann::json;

// --- sweeps -----------------------------------------------------------------

std::string to_string(SweepKind kind) {
  return kind == SweepKind::time_stretch ? "time_stretch" : "pitch_shift";
}

SweepKind parse_sweep_kind(const std::string& text) {
  if (text == "time_stretch" || text == "TS") return SweepKind::time_stretch;
  if (text == "pitch_shift" || text == "PS") return SweepKind::pitch_shift;
  throw ConfigError("sweep.kind: expected time_stretch or pitch_shift, got '" + text + "'");
}

std::vector<double> default_stretch_grid() {
  std::vector<double> grid;
  for (int i = -8; i <= 8; ++i) grid.push_back(std::exp2(i / 8.0));
  return grid;
}

std::vector<double> default_semitone_grid() {
  std::vector<double> grid;
  for (int s = -12; s <= 12; ++s) grid.push_back(s);
  return grid;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

SweepResult manipulation_sweep(const Corpus& corpus, const std::vector<std::size_t>& indices,
                               const EncoderParams& params, SweepKind kind,
                               const std::vector<double>& grid, const EmbedOptions& options,
                               std::size_t workers) {
  const double identity = kind == SweepKind::time_stretch ? 1.0 : 0.0;
  const bool has_identity = std::any_of(grid.begin(), grid.end(), [&](double g) {
    return std::abs(g - identity) < 1e-12;
  });
  if (!has_identity) {
    throw ConfigError("sweep.grid must contain the identity factor (" +
                      std::to_string(identity) + ")");
  }
  for (double g : grid) {
    if (kind == SweepKind::time_stretch && !(g > kMinStretch && g < kMaxStretch)) {
      throw ConfigError("sweep.grid: stretch factor " + std::to_string(g) + " out of range");
    }
  }

  SweepResult r;
  r.kind = kind;
  r.grid = grid;
  r.checkpoint_id = checkpoint_id(params);
  r.chain_id = params.chain_id;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> rows(indices.size());
  std::vector<bool> usable(indices.size(), false);
  parallel_for(indices.size(), workers, [&](std::size_t t) {
    const MelSpectrogram& x = corpus.features.at(indices[t]);
    const auto base = embed_track(x, params, options);
    if (!base) return;
    usable[t] = true;
    rows[t].assign(grid.size(), nan);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const MelSpectrogram modified =
          kind == SweepKind::time_stretch
              ? time_stretch(x, TimeStretchParams{grid[g]})
              : pitch_shift(x, PitchShiftParams{std::exp2(grid[g] / 12.0)});
      const auto v = embed_track(modified, params, options);
      if (v) rows[t][g] = cosine_distance(*base, *v);
    }
  });
  for (std::size_t t = 0; t < indices.size(); ++t) {
    if (!usable[t]) continue;
    r.track_ids.push_back(corpus.records.at(indices[t]).track_id);
    r.distances.push_back(std::move(rows[t]));
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> column;
    for (const auto& row : r.distances) {
      if (!std::isnan(row[g])) column.push_back(row[g]);
    }
    double sum = 0.0;
    for (double d : column) sum += d;
    r.count.push_back(column.size());
    r.mean.push_back(column.empty() ? nan : sum / static_cast<double>(column.size()));
    r.q25.push_back(quantile(column, 0.25));
    r.q75.push_back(quantile(column, 0.75));
  }
  return r;
}

// --- neighbourhood metrics -----------------------------------------------------

std::string to_string(RmmsDirection d) {
  return d == RmmsDirection::seed ? "seed" : "neighbor";
}

std::string to_string(TagPrecisionVariant v) {
  return v == TagPrecisionVariant::multiset ? "multiset" : "per_neighbor";
}

RmmsDirection parse_rmms_direction(const std::string& text) {
  if (text == "seed") return RmmsDirection::seed;
  if (text == "neighbor") return RmmsDirection::neighbor;
  throw ConfigError("metrics.rmms_direction: expected seed or neighbor, got '" + text + "'");
}

TagPrecisionVariant parse_tag_precision_variant(const std::string& text) {
  if (text == "multiset") return TagPrecisionVariant::multiset;
  if (text == "per_neighbor") return TagPrecisionVariant::per_neighbor;
  throw ConfigError("metrics.tag_precision: expected multiset or per_neighbor, got '" +
                    text + "'");
}

const std::vector<double>& tempo_octaves() {
  static const std::vector<double> octaves{1.0 / 3.0, 0.5, 1.0, 2.0, 3.0};
  return octaves;
}

std::vector<const TrackRecord*> align_records(const EmbeddingSet& set,
                                              const std::vector<TrackRecord>& records) {
  std::unordered_map<std::string, const TrackRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.track_id, &r);
  std::vector<const TrackRecord*> out;
  out.reserve(set.size());
  for (const auto& id : set.ids()) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("track '" + id + "' is missing from the manifest");
    out.push_back(it->second);
  }
  return out;
}

namespace {

void check_table(const NeighborTable& table, const std::vector<const TrackRecord*>& rec,
                 std::size_t k) {
  if (k == 0) throw ConfigError("metrics: k must be >= 1");
  if (table.size() != rec.size()) {
    throw DataError("neighbour table and records are not aligned");
  }
  for (const auto& row : table) {
    if (row.size() < k) {
      throw ConfigError("metrics: neighbour table has fewer than k = " + std::to_string(k) +
                        " columns");
    }
  }
}

MetricValue finish(double sum, std::size_t seeds, std::size_t skipped,
                   std::vector<double> per_seed) {
  MetricValue v;
  v.per_seed = std::move(per_seed);
  v.seeds = seeds;
  v.skipped = skipped;
  v.value = seeds ? sum / static_cast<double>(seeds) : std::numeric_limits<double>::quiet_NaN();
  return v;
}

}  // namespace

MetricValue tempo_rmms(const NeighborTable& table, const std::vector<const TrackRecord*>& rec,
                       std::size_t k, RmmsDirection direction) {
  check_table(table, rec, k);
  double sum = 0.0;
  std::size_t seeds = 0, skipped = 0;
  std::vector<double> per_seed(rec.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t s = 0; s < rec.size(); ++s) {
    bool labelled = rec[s]->bpm.has_value();
    for (std::size_t j = 0; j < k && labelled; ++j) {
      labelled = rec[table[s][j].index]->bpm.has_value();
    }
    if (!labelled) {
      ++skipped;
      continue;
    }
    const double seed_bpm = *rec[s]->bpm;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double nb = *rec[table[s][j].index]->bpm;
      double best = std::numeric_limits<double>::infinity();
      for (double o : tempo_octaves()) {
        const double d = direction == RmmsDirection::seed ? o * seed_bpm - nb : seed_bpm - o * nb;
        best = std::min(best, d * d);
      }
      total += best;
    }
    per_seed[s] = std::sqrt(total / static_cast<double>(k));
    sum += per_seed[s];
    ++seeds;
  }
  return finish(sum, seeds, skipped, std::move(per_seed));
}

MetricValue key_precision(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k) {
  check_table(table, rec, k);
  double sum = 0.0;
  std::size_t seeds = 0, skipped = 0;
  std::vector<double> per_seed(rec.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t s = 0; s < rec.size(); ++s) {
    bool labelled = rec[s]->key_label.has_value();
    for (std::size_t j = 0; j < k && labelled; ++j) {
      labelled = rec[table[s][j].index]->key_label.has_value();
    }
    if (!labelled) {
      ++skipped;
      continue;
    }
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k; ++j) {
      hits += *rec[table[s][j].index]->key_label == *rec[s]->key_label;
    }
    per_seed[s] = static_cast<double>(hits) / static_cast<double>(k);
    sum += per_seed[s];
    ++seeds;
  }
  return finish(sum, seeds, skipped, std::move(per_seed));
}

MetricValue tag_precision(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k,
                          TagPrecisionVariant variant) {
  check_table(table, rec, k);
  double sum = 0.0;
  std::size_t seeds = 0, skipped = 0;
  std::vector<double> per_seed(rec.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t s = 0; s < rec.size(); ++s) {
    const auto& seed_tags = rec[s]->tags;
    if (seed_tags.empty()) {
      ++skipped;
      continue;
    }
    std::size_t found = 0, retrieved = 0, tagged = 0;
    double per_neighbor = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& tags = rec[table[s][j].index]->tags;
      if (tags.empty()) continue;
      std::size_t hit = 0;
      for (const auto& t : tags) hit += seed_tags.count(t);
      found += hit;
      retrieved += tags.size();
      per_neighbor += static_cast<double>(hit) / static_cast<double>(tags.size());
      ++tagged;
    }
    if (retrieved == 0) {
      ++skipped;
      continue;
    }
    per_seed[s] = variant == TagPrecisionVariant::multiset
                      ? static_cast<double>(found) / static_cast<double>(retrieved)
                      : per_neighbor / static_cast<double>(tagged);
    sum += per_seed[s];
    ++seeds;
  }
  return finish(sum, seeds, skipped, std::move(per_seed));
}

MetricValue tag_retrieval(const NeighborTable& table,
                          const std::vector<const TrackRecord*>& rec, std::size_t k) {
  check_table(table, rec, k);
  std::map<std::string, std::vector<std::size_t>> carriers;
  for (std::size_t s = 0; s < rec.size(); ++s) {
    for (const auto& t : rec[s]->tags) carriers[t].push_back(s);
  }
  double sum = 0.0;
  std::size_t single = 0;
  std::vector<double> per_seed;
  for (const auto& [tag, tracks] : carriers) {
    if (tracks.size() == 1) ++single;
    std::size_t hits = 0;
    for (std::size_t s : tracks) {
      for (std::size_t j = 0; j < k; ++j) {
        if (rec[table[s][j].index]->tags.count(tag)) {
          ++hits;
          break;
        }
      }
    }
    per_seed.push_back(static_cast<double>(hits) / static_cast<double>(tracks.size()));
    sum += per_seed.back();
  }
  return finish(sum, carriers.size(), single, std::move(per_seed));
}

double NeighborhoodReport::value(const std::string& metric, std::size_t k) const {
  for (const auto& row : rows) {
    if (row.metric == metric && row.k == k) return row.value.value;
  }
  throw DataError("report has no " + metric + " at k = " + std::to_string(k));
}

NeighborhoodReport neighborhood_report(const EmbeddingSet& set,
                                       const std::vector<TrackRecord>& records,
                                       const std::vector<std::size_t>& k_grid,
                                       const std::vector<std::string>& metrics,
                                       RmmsDirection direction, TagPrecisionVariant variant) {
  if (k_grid.empty()) throw ConfigError("metrics.k: empty k grid");
  NeighborhoodReport report;
  report.k_grid = k_grid;
  report.rmms_direction = direction;
  report.tag_variant = variant;
  report.checkpoint_id = set.checkpoint_id;
  report.chain_id = set.chain_id;
  const auto rec = align_records(set, records);
  const std::size_t k_max = *std::max_element(k_grid.begin(), k_grid.end());
  const NeighborTable table = knn_table(set, k_max);
  for (const auto& metric : metrics) {
    for (std::size_t k : k_grid) {
      MetricValue v;
      if (metric == "tempo_rmms") {
        v = tempo_rmms(table, rec, k, direction);
      } else if (metric == "key_precision") {
        v = key_precision(table, rec, k);
      } else if (metric == "tag_precision") {
        v = tag_precision(table, rec, k, variant);
      } else if (metric == "tag_retrieval") {
        v = tag_retrieval(table, rec, k);
      } else {
        throw ConfigError("metrics: unknown metric '" + metric + "'");
      }
      report.rows.push_back({metric, k, v});
    }
  }
  return report;
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

json to_json(const NeighborhoodReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"metric", r.metric},
                    {"k", r.k},
                    {"value", number_or_null(r.value.value)},
                    {"seeds", r.value.seeds},
                    {"skipped", r.value.skipped}});
  }
  return {{"k_grid", report.k_grid},
          {"rmms_direction", to_string(report.rmms_direction)},
          {"tag_precision_variant", to_string(report.tag_variant)},
          {"checkpoint_id", report.checkpoint_id},
          {"chain_id", report.chain_id},
          {"rows", rows}};
}

std::string to_csv(const NeighborhoodReport& report) {
  std::string out = "metric,k,value,seeds,skipped\n";
  for (const auto& r : report.rows) {
    out += r.metric + "," + std::to_string(r.k) + "," + csv_number(r.value.value) + "," +
           std::to_string(r.value.seeds) + "," + std::to_string(r.value.skipped) + "\n";
  }
  return out;
}

json to_json(const SweepResult& sweep) {
  json factors = json::array();
  for (std::size_t g = 0; g < sweep.grid.size(); ++g) {
    factors.push_back({{"factor", sweep.grid[g]},
                       {"mean", number_or_null(sweep.mean[g])},
                       {"q25", number_or_null(sweep.q25[g])},
                       {"q75", number_or_null(sweep.q75[g])},
                       {"count", sweep.count[g]}});
  }
  json tracks = json::object();
  for (std::size_t t = 0; t < sweep.track_ids.size(); ++t) {
    json row = json::array();
    for (double d : sweep.distances[t]) row.push_back(number_or_null(d));
    tracks[sweep.track_ids[t]] = row;
  }
  return {{"kind", to_string(sweep.kind)},
          {"factor_unit", sweep.kind == SweepKind::time_stretch ? "stretch" : "semitones"},
          {"checkpoint_id", sweep.checkpoint_id},
          {"chain_id", sweep.chain_id},
          {"factors", factors},
          {"distances", tracks}};
}

std::string to_csv(const SweepResult& sweep) {
  std::string out = "factor,mean,q25,q75,count\n";
  for (std::size_t g = 0; g < sweep.grid.size(); ++g) {
    out += csv_number(sweep.grid[g]) + "," + csv_number(sweep.mean[g]) + "," +
           csv_number(sweep.q25[g]) + "," + csv_number(sweep.q75[g]) + "," +
           std::to_string(sweep.count[g]) + "\n";
  }
  return out;
}

}  // namespace embedloc

#pragma once

#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "embedloc/augment.hpp"
#include "embedloc/corpus.hpp"
#include "embedloc/embedspace.hpp"
#include "embedloc/encoder.hpp"
#include "embedloc/locality.hpp"
#include "embedloc/melfront.hpp"
#include "embedloc/probe.hpp"

namespace embedloc {

/// Which tracks a command evaluates on.
enum class SplitSelection { train, test, all };

std::string to_string(SplitSelection s);
SplitSelection parse_split_selection(const std::string& text, const std::string& where);

struct MetricsConfig {
  std::vector<std::size_t> k_grid{1, 2, 4, 8, 16, 32};
  std::vector<std::size_t> retrieval_k{1, 5, 10};
  RmmsDirection rmms_direction = RmmsDirection::seed;
  TagPrecisionVariant tag_precision = TagPrecisionVariant::multiset;
  SplitSelection split = SplitSelection::test;
};

struct SweepConfig {
  std::vector<SweepKind> kinds{SweepKind::time_stretch, SweepKind::pitch_shift};
  std::vector<double> stretch_grid = default_stretch_grid();
  std::vector<double> semitone_grid = default_semitone_grid();
  SplitSelection split = SplitSelection::test;
  std::size_t max_tracks = 0;  // 0: every track of the split
};

/// Everything a command needs. Component seeds (augmentation, training,
/// probe) derive from `seed`; the synthetic corpus has its own seed since
/// it defines the data rather than a run.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path corpus_dir = "corpus";
  std::filesystem::path output_dir = "out";
  SynthSpec synth;
  MelConfig mel;
  AugmentationSpec augment;
  EncoderConfig encoder;
  TrainConfig train;
  ProbeConfig probe;
  EmbedOptions embed;
  MetricsConfig metrics;
  SweepConfig sweep;

  /// Copies with the derived component seeds filled in.
  AugmentationSpec augment_effective() const;
  TrainConfig train_effective(std::size_t workers) const;
  ProbeConfig probe_effective() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Hex content hash of the canonical JSON form.
std::string config_hash(const RunConfig& c);

/// Applies "dotted.path=value" to a JSON document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Entry point of the embedloc tool. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data error, 4 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace embedloc

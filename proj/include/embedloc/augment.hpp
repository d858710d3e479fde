#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "embedloc/melfront.hpp"
#include "embedloc/rng.hpp"

namespace embedloc {

// ---------------------------------------------------------------------------
// Parameters and their sampling distributions.

struct TimeStretchParams {
  double tau = 1.0;
};

struct PitchShiftParams {
  double mu = 1.0;
};

enum class EqMode { none, lowpass, highpass };

struct EqParams {
  EqMode mode = EqMode::none;
  double corner_hz = 0.0;
  int order = 3;
};

/// Crop extents are fractions of the source extent on each axis; offsets
/// place the crop within the remaining slack (0 = start, 1 = end).
struct RrcParams {
  double time_scale = 1.0;
  double freq_scale = 1.0;
  double time_offset = 0.0;
  double freq_offset = 0.0;
};

struct SamplingRanges {
  double tau_min = 0.75, tau_max = 1.5;
  double mu_min = 0.749, mu_max = 1.335;
  double lowpass_min_hz = 2200.0, lowpass_max_hz = 4000.0;
  double highpass_min_hz = 200.0, highpass_max_hz = 1200.0;
  double rrc_time_min = 0.6, rrc_time_max = 1.0;
  double rrc_freq_min = 0.6, rrc_freq_max = 1.0;
};

TimeStretchParams sample_tau(Rng& rng, const SamplingRanges& ranges = {});
PitchShiftParams sample_mu(Rng& rng, const SamplingRanges& ranges = {});
EqParams sample_eq(Rng& rng, const SamplingRanges& ranges = {});
RrcParams sample_rrc(Rng& rng, const SamplingRanges& ranges = {});

// ---------------------------------------------------------------------------
// Operations on log-mel spectrograms.

/// Valid range of tau accepted by time_stretch.
inline constexpr double kMinStretch = 0.25;
inline constexpr double kMaxStretch = 4.0;

/// Output frame m is the natural-cubic-spline value of each band row at
/// source position origin + tau * m. With no `output_frames`, the whole
/// source is stretched: floor((M - 1 - origin) / tau) + 1 frames.
/// Throws DataError when the source is too short for the requested output.
MelSpectrogram time_stretch(const MelSpectrogram& x, TimeStretchParams p,
                            std::optional<std::size_t> output_frames = {},
                            double origin = 0.0);

/// Band-domain form of the linear-frequency scaling by mu: the source band
/// position for band u is scale * log10(1 + mu * (10^(u/scale) - 1)).
double pitch_source_position(double band, double mu, double scale);

/// S_U = U / log10(1 + R/700), the scale constant for U bands spanning 0..R.
double htk_band_scale(int num_bands, double sample_rate_hz);

/// Scales linear frequency by mu (mu > 1 raises pitch). Output band u reads
/// the source column at pitch_source_position(u, 1/mu, filterbank scale).
/// Bands whose source lies above the top band are set to silence.
MelSpectrogram pitch_shift(const MelSpectrogram& x, PitchShiftParams p);

/// Per-band log-domain offset of a third-order Butterworth response
/// integrated over each row-normalized mel band. All zeros for mode none.
std::vector<double> eq_band_offsets(const MelConfig& config, const EqParams& p);

/// Magnitude of the analog Butterworth response at `hz`.
double butterworth_magnitude(EqMode mode, double corner_hz, double hz,
                             int order = 3);

/// X + eq_band_offsets. Throws ConfigError when the corner is outside the
/// range for the mode.
MelSpectrogram equalize(const MelSpectrogram& x, const EqParams& p,
                        const SamplingRanges& ranges = {});

/// Crops a time x band rectangle and rescales it onto a U x output_frames
/// grid by bilinear interpolation. Default output_frames = source frames.
MelSpectrogram random_resized_crop(const MelSpectrogram& x, const RrcParams& p,
                                   std::optional<std::size_t> output_frames = {});

// ---------------------------------------------------------------------------
// Chains.

enum class Stage { time_stretch, pitch_shift, equalize, resized_crop };

struct AugmentationSpec {
  std::vector<Stage> chain;  // pipeline order: TS, PS, EQ (RRC replaces TS/PS)
  std::uint64_t rng_seed = 0;
  double context_seconds = 4.5;
  double output_seconds = 3.0;
  SamplingRanges ranges;

  /// Throws ConfigError on ordering or exclusivity violations.
  void validate() const;
  bool has(Stage s) const;
  /// "none", "TS", "TSPS", "TSPSEQ", "RRC", ...
  std::string chain_id() const;
};

/// Parses a chain id such as "TSPSEQ", "ts,ps", or "none".
std::vector<Stage> parse_chain(std::string_view text);

/// Samples each enabled stage from its distribution, in chain order, and
/// applies them. Without TS/RRC the input is centre-cropped. The output
/// always has output_seconds worth of frames.
MelSpectrogram apply_chain(const MelSpectrogram& x, const AugmentationSpec& spec,
                           Rng& rng);

}  // namespace embedloc

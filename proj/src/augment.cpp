#include "embedloc/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "embedloc/error.hpp"
#include "embedloc/spline.hpp"

namespace embedloc {
namespace {

int pipeline_rank(Stage s) {
  switch (s) {
    case Stage::time_stretch:
    case Stage::resized_crop:
      return 0;
    case Stage::pitch_shift:
      return 1;
    case Stage::equalize:
      return 2;
  }
  return 3;
}

const char* stage_token(Stage s) {
  switch (s) {
    case Stage::time_stretch:
      return "TS";
    case Stage::pitch_shift:
      return "PS";
    case Stage::equalize:
      return "EQ";
    case Stage::resized_crop:
      return "RRC";
  }
  return "?";
}

double lerp_clamped(std::span<const double> y, double t) {
  const std::size_t n = y.size();
  if (n == 1 || !(t > 0.0)) return y[0];
  if (t >= static_cast<double>(n - 1)) return y[n - 1];
  const auto i = std::min(static_cast<std::size_t>(t), n - 2);
  const double a = t - static_cast<double>(i);
  return (1.0 - a) * y[i] + a * y[i + 1];
}

}  // namespace

TimeStretchParams sample_tau(Rng& rng, const SamplingRanges& r) {
  return {rng.log_uniform(r.tau_min, r.tau_max)};
}

PitchShiftParams sample_mu(Rng& rng, const SamplingRanges& r) {
  return {rng.log_uniform(r.mu_min, r.mu_max)};
}

EqParams sample_eq(Rng& rng, const SamplingRanges& r) {
  EqParams p;
  switch (rng.index(3)) {
    case 0:
      p.mode = EqMode::none;
      break;
    case 1:
      p.mode = EqMode::lowpass;
      p.corner_hz = rng.uniform(r.lowpass_min_hz, r.lowpass_max_hz);
      break;
    default:
      p.mode = EqMode::highpass;
      p.corner_hz = rng.uniform(r.highpass_min_hz, r.highpass_max_hz);
      break;
  }
  return p;
}

RrcParams sample_rrc(Rng& rng, const SamplingRanges& r) {
  RrcParams p;
  p.time_scale = rng.log_uniform(r.rrc_time_min, r.rrc_time_max);
  p.freq_scale = rng.uniform(r.rrc_freq_min, r.rrc_freq_max);
  p.time_offset = rng.uniform();
  p.freq_offset = rng.uniform();
  return p;
}

MelSpectrogram time_stretch(const MelSpectrogram& x, TimeStretchParams p,
                            std::optional<std::size_t> output_frames,
                            double origin) {
  if (!(p.tau > kMinStretch && p.tau < kMaxStretch)) {
    throw ConfigError("time stretch factor " + std::to_string(p.tau) +
                      " outside (0.25, 4)");
  }
  if (!(origin >= 0.0)) throw ConfigError("time stretch origin must be >= 0");
  const std::size_t src_frames = x.num_frames();
  if (src_frames == 0) throw DataError("time stretch of an empty spectrogram");
  const double last = static_cast<double>(src_frames - 1);

  std::size_t out_frames = 0;
  if (output_frames) {
    out_frames = *output_frames;
    const double reach =
        origin + p.tau * static_cast<double>(out_frames == 0 ? 0 : out_frames - 1);
    if (reach > last + 1e-9) {
      const auto needed = static_cast<std::size_t>(std::ceil(reach - 1e-9)) + 1;
      throw DataError("insufficient context for tau=" + std::to_string(p.tau) +
                      ": need " + std::to_string(needed) + " frames, have " +
                      std::to_string(src_frames));
    }
  } else {
    if (origin > last) throw DataError("time stretch origin beyond last frame");
    out_frames =
        static_cast<std::size_t>(std::floor((last - origin) / p.tau + 1e-9)) + 1;
  }

  std::vector<double> positions(out_frames);
  for (std::size_t m = 0; m < out_frames; ++m) {
    positions[m] = origin + p.tau * static_cast<double>(m);
  }
  const NaturalSpline spline(src_frames);
  MelSpectrogram out(x.config(), out_frames, x.source_id());
  for (std::size_t u = 0; u < x.num_bands(); ++u) {
    spline.resample(x.band(u), positions, out.band(u));
  }
  return out;
}

double pitch_source_position(double band, double mu, double scale) {
  return scale * std::log10(1.0 + mu * (std::pow(10.0, band / scale) - 1.0));
}

double htk_band_scale(int num_bands, double sample_rate_hz) {
  return num_bands / std::log10(1.0 + sample_rate_hz / 700.0);
}

MelSpectrogram pitch_shift(const MelSpectrogram& x, PitchShiftParams p) {
  if (!(p.mu > 0.0) || !std::isfinite(p.mu)) {
    throw ConfigError("pitch shift factor must be positive and finite");
  }
  const std::size_t bands = x.num_bands();
  const std::size_t frames = x.num_frames();
  const double scale = shared_filterbank(x.config())->band_scale();
  const double top = static_cast<double>(bands - 1);

  std::vector<double> source(bands);
  for (std::size_t u = 0; u < bands; ++u) {
    source[u] = pitch_source_position(static_cast<double>(u), 1.0 / p.mu, scale);
  }

  const NaturalSpline spline(bands);
  const double silence = x.floor_value();
  std::vector<double> column(bands), curvature(bands);
  MelSpectrogram out(x.config(), frames, x.source_id());
  for (std::size_t m = 0; m < frames; ++m) {
    for (std::size_t u = 0; u < bands; ++u) column[u] = x.at(u, m);
    spline.fit(column, curvature);
    for (std::size_t u = 0; u < bands; ++u) {
      out.at(u, m) = source[u] > top + 1e-9
                         ? silence
                         : NaturalSpline::eval(column, curvature, source[u]);
    }
  }
  return out;
}

double butterworth_magnitude(EqMode mode, double corner_hz, double hz,
                             int order) {
  if (mode == EqMode::none) return 1.0;
  const double r = hz / corner_hz;
  const double rn = std::pow(r, order);
  const double denom = std::sqrt(1.0 + rn * rn);
  return mode == EqMode::lowpass ? 1.0 / denom : rn / denom;
}

std::vector<double> eq_band_offsets(const MelConfig& config, const EqParams& p) {
  const auto fb = shared_filterbank(config);
  std::vector<double> offsets(fb->num_bands(), 0.0);
  if (p.mode == EqMode::none) return offsets;
  if (!(p.corner_hz > 0.0)) throw ConfigError("EQ corner must be positive");
  for (std::size_t u = 0; u < fb->num_bands(); ++u) {
    const auto row = fb->row(u);
    double total = 0.0, weighted = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double hz = fb->bin_hz(fb->first_bin(u) + i);
      total += row[i];
      weighted += row[i] * butterworth_magnitude(p.mode, p.corner_hz, hz, p.order);
    }
    offsets[u] = std::log10(std::max(weighted / total, config.log_floor));
  }
  return offsets;
}

MelSpectrogram equalize(const MelSpectrogram& x, const EqParams& p,
                        const SamplingRanges& ranges) {
  if (p.mode == EqMode::none) return x;
  if (p.order != 3) throw ConfigError("EQ order must be 3");
  const bool low = p.mode == EqMode::lowpass;
  const double lo = low ? ranges.lowpass_min_hz : ranges.highpass_min_hz;
  const double hi = low ? ranges.lowpass_max_hz : ranges.highpass_max_hz;
  if (!(p.corner_hz >= lo && p.corner_hz <= hi)) {
    throw ConfigError(std::string(low ? "lowpass" : "highpass") + " corner " +
                      std::to_string(p.corner_hz) + " Hz outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  const auto offsets = eq_band_offsets(x.config(), p);
  MelSpectrogram out = x;
  for (std::size_t u = 0; u < out.num_bands(); ++u) {
    for (double& v : out.band(u)) v += offsets[u];
  }
  return out;
}

MelSpectrogram random_resized_crop(const MelSpectrogram& x, const RrcParams& p,
                                   std::optional<std::size_t> output_frames) {
  const auto in_range = [](double v, double lo, double hi) {
    return v >= lo && v <= hi;
  };
  if (!in_range(p.time_scale, 0.0, 1.0) || !in_range(p.freq_scale, 0.0, 1.0)) {
    throw ConfigError("RRC scales must lie in (0, 1]");
  }
  if (!in_range(p.time_offset, 0.0, 1.0) || !in_range(p.freq_offset, 0.0, 1.0)) {
    throw ConfigError("RRC offsets must lie in [0, 1]");
  }
  const double src_frames = static_cast<double>(x.num_frames());
  const double bands = static_cast<double>(x.num_bands());
  const double time_extent = p.time_scale * src_frames;
  const double freq_extent = p.freq_scale * bands;
  if (time_extent < 1.0 || freq_extent < 1.0) {
    throw ConfigError("degenerate RRC crop: extent below one frame or band");
  }
  const std::size_t out_frames = output_frames.value_or(x.num_frames());
  if (out_frames == 0) throw ConfigError("RRC output must have frames");
  const double t0 = p.time_offset * (src_frames - time_extent);
  const double f0 = p.freq_offset * (bands - freq_extent);
  const double t_step = time_extent / static_cast<double>(out_frames);
  const double f_step = freq_extent / bands;

  // Time axis first (per band), then the band axis (per frame).
  MelSpectrogram stretched(x.config(), out_frames, x.source_id());
  for (std::size_t u = 0; u < x.num_bands(); ++u) {
    const auto src = x.band(u);
    auto dst = stretched.band(u);
    for (std::size_t m = 0; m < out_frames; ++m) {
      dst[m] = lerp_clamped(src, t0 + t_step * static_cast<double>(m));
    }
  }
  MelSpectrogram out(x.config(), out_frames, x.source_id());
  std::vector<double> column(x.num_bands());
  for (std::size_t m = 0; m < out_frames; ++m) {
    for (std::size_t u = 0; u < column.size(); ++u) column[u] = stretched.at(u, m);
    for (std::size_t u = 0; u < column.size(); ++u) {
      out.at(u, m) = lerp_clamped(column, f0 + f_step * static_cast<double>(u));
    }
  }
  return out;
}

void AugmentationSpec::validate() const {
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (pipeline_rank(chain[i - 1]) >= pipeline_rank(chain[i])) {
      throw ConfigError("augment.chain '" + chain_id() +
                        "' must follow TS -> PS -> EQ order without repeats");
    }
  }
  if (has(Stage::resized_crop) &&
      (has(Stage::time_stretch) || has(Stage::pitch_shift))) {
    throw ConfigError("augment.chain: RRC cannot be combined with TS or PS");
  }
  if (!(output_seconds > 0.0) || !(context_seconds >= output_seconds)) {
    throw ConfigError(
        "augment.context_seconds must be >= augment.output_seconds > 0");
  }
}

bool AugmentationSpec::has(Stage s) const {
  return std::find(chain.begin(), chain.end(), s) != chain.end();
}

std::string AugmentationSpec::chain_id() const {
  if (chain.empty()) return "none";
  std::string id;
  for (Stage s : chain) id += stage_token(s);
  return id;
}

std::vector<Stage> parse_chain(std::string_view text) {
  std::string upper;
  for (char c : text) {
    if (c == ',' || c == '+' || c == ' ' || c == '-') continue;
    upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  std::vector<Stage> stages;
  if (upper.empty() || upper == "NONE") return stages;
  std::size_t pos = 0;
  while (pos < upper.size()) {
    const auto rest = std::string_view(upper).substr(pos);
    if (rest.starts_with("RRC")) {
      stages.push_back(Stage::resized_crop);
      pos += 3;
    } else if (rest.starts_with("TS")) {
      stages.push_back(Stage::time_stretch);
      pos += 2;
    } else if (rest.starts_with("PS")) {
      stages.push_back(Stage::pitch_shift);
      pos += 2;
    } else if (rest.starts_with("EQ")) {
      stages.push_back(Stage::equalize);
      pos += 2;
    } else {
      throw ConfigError("augment.chain: unknown stage in '" + std::string(text) +
                        "'");
    }
  }
  std::stable_sort(stages.begin(), stages.end(), [](Stage a, Stage b) {
    return pipeline_rank(a) < pipeline_rank(b);
  });
  if (std::adjacent_find(stages.begin(), stages.end()) != stages.end()) {
    throw ConfigError("augment.chain: repeated stage in '" + std::string(text) +
                      "'");
  }
  return stages;
}

MelSpectrogram apply_chain(const MelSpectrogram& x, const AugmentationSpec& spec,
                           Rng& rng) {
  spec.validate();
  const std::size_t out_frames = x.config().frames_for_seconds(spec.output_seconds);
  if (x.num_frames() < out_frames) {
    throw DataError("augmentation input has " + std::to_string(x.num_frames()) +
                    " frames, need at least " + std::to_string(out_frames));
  }

  MelSpectrogram y;
  if (spec.has(Stage::time_stretch)) {
    const auto p = sample_tau(rng, spec.ranges);
    const double origin = 0.5 * static_cast<double>(x.num_frames() - 1) -
                          0.5 * p.tau * static_cast<double>(out_frames - 1);
    if (origin < 0.0) {
      throw DataError("insufficient context for tau=" + std::to_string(p.tau));
    }
    y = time_stretch(x, p, out_frames, origin);
  } else if (spec.has(Stage::resized_crop)) {
    y = random_resized_crop(x, sample_rrc(rng, spec.ranges), out_frames);
  } else {
    y = x.slice((x.num_frames() - out_frames) / 2, out_frames);
  }
  if (spec.has(Stage::pitch_shift)) y = pitch_shift(y, sample_mu(rng, spec.ranges));
  if (spec.has(Stage::equalize)) y = equalize(y, sample_eq(rng, spec.ranges), spec.ranges);
  return y;
}

}  // namespace embedloc

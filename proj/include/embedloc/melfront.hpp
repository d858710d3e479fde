#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace embedloc {

enum class WindowKind { hann };

/// Frontend parameters. Defaults: 16 kHz, 2048-point DFT, 25 ms window,
/// 10 ms hop, 96 bands.
struct MelConfig {
  int sample_rate_hz = 16000;
  int dft_size = 2048;
  int window_length = 400;
  int hop = 160;
  int num_bands = 96;
  WindowKind window_kind = WindowKind::hann;
  double log_floor = 1e-10;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  double frames_per_second() const {
    return static_cast<double>(sample_rate_hz) / hop;
  }
  /// Frame count covering `seconds` of audio at the hop rate (rounded).
  std::size_t frames_for_seconds(double seconds) const;

  bool operator==(const MelConfig&) const = default;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK-mel filterbank. Band centres are uniform on the mel axis
/// from 0 Hz (band 0) to Nyquist (band U-1); each triangle spans one band
/// spacing either side of its centre, so neighbours cross at 0.5. Rows have
/// peak weight 1 and are not normalized.
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelConfig& config);

  std::size_t num_bands() const { return centers_hz_.size(); }
  std::size_t num_bins() const { return num_bins_; }

  /// Dense weight S_u[k] for bin k in [0, K/2].
  double weight(std::size_t band, std::size_t bin) const;
  /// Non-zero span of band `u`: weights for bins [first_bin(u), first_bin(u)+row(u).size()).
  std::size_t first_bin(std::size_t band) const { return first_bin_[band]; }
  std::span<const double> row(std::size_t band) const { return rows_[band]; }

  const std::vector<double>& band_center_hz() const { return centers_hz_; }

  /// Mel spacing between adjacent band centres.
  double mel_spacing() const { return mel_spacing_; }
  /// Continuous band coordinate of a frequency: mel(hz) / mel_spacing.
  double band_position(double hz) const;
  /// Bands per decade of (1 + f/700); the scale constant of the
  /// pitch-shift mapping that is consistent with this filterbank.
  double band_scale() const { return 2595.0 / mel_spacing_; }

  double bin_hz(std::size_t bin) const;

 private:
  int sample_rate_hz_;
  int dft_size_;
  std::size_t num_bins_;
  double mel_spacing_;
  std::vector<double> centers_hz_;
  std::vector<std::size_t> first_bin_;
  std::vector<std::vector<double>> rows_;
};

/// Builds the filterbank; throws ConfigError naming the first band with no
/// positive weight (U too large for the DFT resolution).
MelFilterbank build_filterbank(const MelConfig& config);

/// Process-wide cache of immutable filterbanks keyed by (R, K, U).
std::shared_ptr<const MelFilterbank> shared_filterbank(const MelConfig& config);

/// Log-mel matrix X[u][m], stored band-major (row u holds all frames).
class MelSpectrogram {
 public:
  MelSpectrogram() = default;
  MelSpectrogram(MelConfig config, std::size_t num_frames,
                 std::string source_id = {});
  MelSpectrogram(MelConfig config, std::size_t num_frames,
                 std::vector<double> values, std::string source_id = {});

  const MelConfig& config() const { return config_; }
  std::size_t num_bands() const {
    return static_cast<std::size_t>(config_.num_bands);
  }
  std::size_t num_frames() const { return num_frames_; }
  const std::string& source_id() const { return source_id_; }
  void set_source_id(std::string id) { source_id_ = std::move(id); }

  double& at(std::size_t band, std::size_t frame) {
    return values_[band * num_frames_ + frame];
  }
  double at(std::size_t band, std::size_t frame) const {
    return values_[band * num_frames_ + frame];
  }
  std::span<double> band(std::size_t u) {
    return {values_.data() + u * num_frames_, num_frames_};
  }
  std::span<const double> band(std::size_t u) const {
    return {values_.data() + u * num_frames_, num_frames_};
  }
  const std::vector<double>& values() const { return values_; }

  /// Frames [start, start + count) as a new spectrogram.
  MelSpectrogram slice(std::size_t start, std::size_t count) const;

  /// log10(log_floor): the value of a silent bin.
  double floor_value() const;

 private:
  MelConfig config_;
  std::size_t num_frames_ = 0;
  std::vector<double> values_;
  std::string source_id_;
};

/// X[u,m] = log10(max(floor, sum_k S_u[k] |DFT_K(w * x_m)[k]|)) with frames
/// left-aligned at m*hop and M = floor((len - N) / hop) + 1.
/// Throws DataError when pcm is shorter than one window.
MelSpectrogram compute_mel(std::span<const double> pcm, const MelConfig& config,
                           std::string source_id = {});

}  // namespace embedloc

#include <filesystem>

namespace embedloc {

/// EMLT persistence as a [U, M] f32 tensor.
void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel);
/// Throws DataError when the stored band count differs from `config`.
MelSpectrogram read_mel(const std::filesystem::path& path,
                        const MelConfig& config, std::string source_id = {});

}  // namespace embedloc

#include "embedloc/melfront.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

#include "embedloc/error.hpp"
#include "embedloc/tensor_io.hpp"

namespace embedloc {
namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class RealFftPlans {
 public:
  static RealFftPlans& instance() {
    static RealFftPlans plans;
    return plans;
  }

  fftw_plan get(int size) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(size);
    if (it != plans_.end()) return it->second;
    std::vector<double> in(static_cast<std::size_t>(size));
    std::vector<fftw_complex> out(static_cast<std::size_t>(size / 2 + 1));
    fftw_plan plan = fftw_plan_dft_r2c_1d(size, in.data(), out.data(),
                                          FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(size, plan);
    return plan;
  }

  RealFftPlans(const RealFftPlans&) = delete;
  RealFftPlans& operator=(const RealFftPlans&) = delete;

 private:
  RealFftPlans() = default;
  ~RealFftPlans() {
    for (auto& [size, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<int, fftw_plan> plans_;
};

std::vector<double> hann_window(int length) {
  // Periodic Hann.
  std::vector<double> w(static_cast<std::size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[static_cast<std::size_t>(n)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

}  // namespace

void MelConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("mel.sample_rate_hz must be positive");
  if (dft_size <= 0) throw ConfigError("mel.dft_size must be positive");
  if (window_length <= 0) throw ConfigError("mel.window_length must be positive");
  if (window_length > dft_size) {
    throw ConfigError("mel.window_length must not exceed mel.dft_size");
  }
  if (hop < 1) throw ConfigError("mel.hop must be at least 1");
  if (num_bands < 2) throw ConfigError("mel.num_bands must be at least 2");
  if (!(log_floor > 0.0) || !std::isfinite(log_floor)) {
    throw ConfigError("mel.log_floor must be a positive finite number");
  }
}

std::size_t MelConfig::frames_for_seconds(double seconds) const {
  return static_cast<std::size_t>(std::lround(seconds * frames_per_second()));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(const MelConfig& config)
    : sample_rate_hz_(config.sample_rate_hz),
      dft_size_(config.dft_size),
      num_bins_(static_cast<std::size_t>(config.dft_size / 2 + 1)) {
  config.validate();
  const auto bands = static_cast<std::size_t>(config.num_bands);
  const double top_mel = hz_to_mel(0.5 * config.sample_rate_hz);
  mel_spacing_ = top_mel / static_cast<double>(bands - 1);

  centers_hz_.resize(bands);
  first_bin_.assign(bands, 0);
  rows_.resize(bands);
  for (std::size_t u = 0; u < bands; ++u) {
    const double center_mel = mel_spacing_ * static_cast<double>(u);
    centers_hz_[u] = mel_to_hz(center_mel);
    std::vector<double> row;
    std::size_t first = num_bins_;
    for (std::size_t k = 0; k < num_bins_; ++k) {
      const double w =
          1.0 - std::abs(hz_to_mel(bin_hz(k)) - center_mel) / mel_spacing_;
      if (w > 0.0) {
        if (first == num_bins_) first = k;
        // Fill any interior gap so that row indices stay contiguous.
        row.resize(k - first, 0.0);
        row.push_back(w);
      }
    }
    if (row.empty()) {
      throw ConfigError("mel filterbank band " + std::to_string(u) +
                        " has no positive weight; reduce mel.num_bands or "
                        "increase mel.dft_size");
    }
    first_bin_[u] = first;
    rows_[u] = std::move(row);
  }
}

double MelFilterbank::weight(std::size_t band, std::size_t bin) const {
  const auto first = first_bin_[band];
  if (bin < first || bin >= first + rows_[band].size()) return 0.0;
  return rows_[band][bin - first];
}

double MelFilterbank::band_position(double hz) const {
  return hz_to_mel(hz) / mel_spacing_;
}

double MelFilterbank::bin_hz(std::size_t bin) const {
  return static_cast<double>(bin) * sample_rate_hz_ / dft_size_;
}

MelFilterbank build_filterbank(const MelConfig& config) {
  return MelFilterbank(config);
}

std::shared_ptr<const MelFilterbank> shared_filterbank(const MelConfig& config) {
  static std::mutex mutex;
  static std::map<std::tuple<int, int, int>,
                  std::shared_ptr<const MelFilterbank>> cache;
  const auto key =
      std::make_tuple(config.sample_rate_hz, config.dft_size, config.num_bands);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, std::make_shared<const MelFilterbank>(config)).first;
  }
  return it->second;
}

MelSpectrogram::MelSpectrogram(MelConfig config, std::size_t num_frames,
                               std::string source_id)
    : config_(config),
      num_frames_(num_frames),
      values_(static_cast<std::size_t>(config.num_bands) * num_frames, 0.0),
      source_id_(std::move(source_id)) {}

MelSpectrogram::MelSpectrogram(MelConfig config, std::size_t num_frames,
                               std::vector<double> values,
                               std::string source_id)
    : config_(config),
      num_frames_(num_frames),
      values_(std::move(values)),
      source_id_(std::move(source_id)) {
  if (values_.size() != static_cast<std::size_t>(config_.num_bands) * num_frames_) {
    throw DataError("mel values do not match U x M");
  }
}

MelSpectrogram MelSpectrogram::slice(std::size_t start, std::size_t count) const {
  if (start + count > num_frames_) {
    throw DataError("slice [" + std::to_string(start) + ", " +
                    std::to_string(start + count) + ") exceeds " +
                    std::to_string(num_frames_) + " frames");
  }
  MelSpectrogram out(config_, count, source_id_);
  for (std::size_t u = 0; u < num_bands(); ++u) {
    const auto src = band(u).subspan(start, count);
    std::copy(src.begin(), src.end(), out.band(u).begin());
  }
  return out;
}

double MelSpectrogram::floor_value() const {
  return std::log10(config_.log_floor);
}

MelSpectrogram compute_mel(std::span<const double> pcm, const MelConfig& config,
                           std::string source_id) {
  config.validate();
  const auto window_length = static_cast<std::size_t>(config.window_length);
  const auto hop = static_cast<std::size_t>(config.hop);
  if (pcm.size() < window_length) {
    throw DataError("pcm has " + std::to_string(pcm.size()) +
                    " samples, fewer than one window (" +
                    std::to_string(window_length) + ")");
  }
  const std::size_t frames = (pcm.size() - window_length) / hop + 1;
  const auto fb = shared_filterbank(config);
  const auto window = hann_window(config.window_length);
  fftw_plan plan = RealFftPlans::instance().get(config.dft_size);

  std::vector<double> frame(static_cast<std::size_t>(config.dft_size), 0.0);
  std::vector<fftw_complex> spectrum(fb->num_bins());
  std::vector<double> magnitude(fb->num_bins());

  MelSpectrogram mel(config, frames, std::move(source_id));
  for (std::size_t m = 0; m < frames; ++m) {
    const double* x = pcm.data() + m * hop;
    for (std::size_t n = 0; n < window_length; ++n) frame[n] = window[n] * x[n];
    fftw_execute_dft_r2c(plan, frame.data(), spectrum.data());
    for (std::size_t k = 0; k < magnitude.size(); ++k) {
      magnitude[k] = std::hypot(spectrum[k][0], spectrum[k][1]);
    }
    for (std::size_t u = 0; u < fb->num_bands(); ++u) {
      const auto row = fb->row(u);
      const double* mag = magnitude.data() + fb->first_bin(u);
      double energy = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) energy += row[i] * mag[i];
      mel.at(u, m) = std::log10(std::max(config.log_floor, energy));
    }
  }
  return mel;
}

void write_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  write_tensor(path, make_tensor(mel.values(), mel.num_bands(), mel.num_frames()));
}

MelSpectrogram read_mel(const std::filesystem::path& path,
                        const MelConfig& config, std::string source_id) {
  const Tensor t = read_tensor(path);
  if (t.dims.size() != 2 ||
      t.dims[0] != static_cast<std::uint64_t>(config.num_bands)) {
    throw DataError("feature file " + path.string() +
                    " does not have shape [" + std::to_string(config.num_bands) +
                    ", M]");
  }
  std::vector<double> values(t.data.begin(), t.data.end());
  return MelSpectrogram(config, static_cast<std::size_t>(t.dims[1]),
                        std::move(values), std::move(source_id));
}

}  // namespace embedloc

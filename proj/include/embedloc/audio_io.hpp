#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace embedloc {

struct PcmAudio {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  int sample_rate_hz = 0;
};

/// Reads a mono 16-bit PCM WAV file.
PcmAudio read_wav(const std::filesystem::path& path);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path,
               std::span<const double> samples, int sample_rate_hz);

/// Reads headerless little-endian float32 samples. The rate comes from the
/// caller (declared in the manifest / run config).
PcmAudio read_raw_f32(const std::filesystem::path& path, int sample_rate_hz);

}  // namespace embedloc

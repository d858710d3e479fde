#include "embedloc/audio_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "embedloc/error.hpp"

namespace embedloc {
namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t u32_at(const std::vector<unsigned char>& b, std::size_t pos) {
  return static_cast<std::uint32_t>(b[pos]) |
         static_cast<std::uint32_t>(b[pos + 1]) << 8 |
         static_cast<std::uint32_t>(b[pos + 2]) << 16 |
         static_cast<std::uint32_t>(b[pos + 3]) << 24;
}

std::uint16_t u16_at(const std::vector<unsigned char>& b, std::size_t pos) {
  return static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff),
                                 static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xff),
                                 static_cast<char>((v >> 8) & 0xff)};
  out.write(b.data(), 2);
}

}  // namespace

PcmAudio read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto bad = [&](const std::string& why) {
    return DataError("invalid WAV (" + why + "): " + path.string());
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("missing RIFF/WAVE header");
  }

  PcmAudio audio;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = u32_at(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw bad("chunk overruns file");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw bad("short fmt chunk");
      const auto format = u16_at(bytes, body);
      const auto channels = u16_at(bytes, body + 2);
      const auto bits = u16_at(bytes, body + 14);
      if (format != 1) throw bad("not PCM");
      if (channels != 1) throw bad("not mono");
      if (bits != 16) throw bad("not 16-bit");
      audio.sample_rate_hz = static_cast<int>(u32_at(bytes, body + 4));
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw bad("data before fmt");
      const std::size_t n = size / 2;
      audio.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(u16_at(bytes, body + 2 * i));
        audio.samples[i] = raw / 32768.0;
      }
      return audio;
    }
    pos = body + size + (size & 1u);
  }
  throw bad("no data chunk");
}

void write_wav(const std::filesystem::path& path,
               std::span<const double> samples, int sample_rate_hz) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (double s : samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(
        std::clamp(std::lround(clipped * 32768.0), -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

PcmAudio read_raw_f32(const std::filesystem::path& path, int sample_rate_hz) {
  const auto bytes = slurp(path);
  if (bytes.size() % 4 != 0) {
    throw DataError("raw f32 file size not a multiple of 4: " + path.string());
  }
  PcmAudio audio;
  audio.sample_rate_hz = sample_rate_hz;
  audio.samples.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    audio.samples[i] = std::bit_cast<float>(u32_at(bytes, 4 * i));
  }
  return audio;
}

}  // namespace embedloc

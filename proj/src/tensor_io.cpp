#include "embedloc/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "embedloc/error.hpp"

namespace embedloc {
namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'L', 'T'};
constexpr std::uint16_t kMaxDims = 16;

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  const auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("truncated EMLT file: " + path.string());
  }
  using U = std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

}  // namespace

std::size_t Tensor::element_count() const {
  if (dims.empty()) return 0;
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  if (tensor.dims.size() > kMaxDims) {
    throw ConfigError("EMLT supports at most 16 dimensions");
  }
  if (tensor.element_count() != tensor.data.size()) {
    throw DataError("tensor payload does not match its dims: " + path.string());
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kEmltVersion);
  put_le<std::uint16_t>(out, kEmltDtypeF32);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_le<std::uint64_t>(out, d);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
  } else {
    for (float v : tensor.data) put_le<float>(out, v);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open EMLT file: " + path.string());

  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("bad EMLT magic: " + path.string());
  }
  const auto version = get_le<std::uint16_t>(in, path);
  if (version != kEmltVersion) {
    throw DataError("unsupported EMLT version " + std::to_string(version) +
                    ": " + path.string());
  }
  const auto dtype = get_le<std::uint16_t>(in, path);
  if (dtype != kEmltDtypeF32) {
    throw DataError("unsupported EMLT dtype " + std::to_string(dtype) + ": " +
                    path.string());
  }
  const auto ndim = get_le<std::uint16_t>(in, path);
  if (ndim > kMaxDims) throw DataError("EMLT ndim too large: " + path.string());

  Tensor tensor;
  tensor.dims.resize(ndim);
  for (auto& d : tensor.dims) d = get_le<std::uint64_t>(in, path);
  tensor.data.resize(tensor.element_count());
  if constexpr (std::endian::native == std::endian::little) {
    const auto bytes =
        static_cast<std::streamsize>(tensor.data.size() * sizeof(float));
    if (!in.read(reinterpret_cast<char*>(tensor.data.data()), bytes)) {
      throw DataError("truncated EMLT payload: " + path.string());
    }
  } else {
    for (auto& v : tensor.data) v = get_le<float>(in, path);
  }
  return tensor;
}

Tensor make_tensor(std::span<const double> values, std::uint64_t rows,
                   std::uint64_t cols) {
  if (values.size() != rows * cols) {
    throw DataError("make_tensor: size mismatch");
  }
  Tensor t;
  t.dims = {rows, cols};
  t.data.assign(values.begin(), values.end());
  return t;
}

}  // namespace embedloc

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace embedloc {

/// Dense row-major float32 tensor as stored in EMLT files.
///
/// Layout on disk (all little-endian):
///   "EMLT" | version u16 | dtype u16 | ndim u16 | dims u64[ndim] | payload
/// The only dtype is f32 (code 1).
struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::size_t element_count() const;
};

inline constexpr std::uint16_t kEmltVersion = 1;
inline constexpr std::uint16_t kEmltDtypeF32 = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

/// Converts a row-major double matrix to a 2-D tensor.
Tensor make_tensor(std::span<const double> values, std::uint64_t rows,
                   std::uint64_t cols);

}  // namespace embedloc

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mrirest/tensor.hpp"

namespace mrirest {

// On-disk element type of an MRT1 tensor.
enum class DType : std::uint8_t { real32 = 0, real64 = 1, complex64 = 2 };

struct MrtTensor {
  DType dtype = DType::real64;
  // Complex data carries a trailing extent of 2 (interleaved re/im) that is
  // not part of the on-disk extents.
  Tensor<double> tensor;
};

// MRT1 layout: "MRT1", u8 dtype, u8 ndim, ndim x u32 LE extents, LE values.
void write_mrt(std::ostream& os, const Tensor<double>& t, DType dtype);
MrtTensor read_mrt(std::istream& is);

void write_mrt_file(const std::filesystem::path& path, const Tensor<double>& t, DType dtype);
MrtTensor read_mrt_file(const std::filesystem::path& path);

}  // namespace mrirest

#include "mrirest/mrt_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mrirest {
namespace {

static_assert(std::endian::native == std::endian::little, "MRT1 I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'M', 'R', 'T', '1'};

template <typename V>
void put(std::ostream& os, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  os.write(buf, sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  char buf[sizeof(V)];
  if (!is.read(buf, sizeof(V))) throw IoError("truncated MRT1 stream");
  V v;
  std::memcpy(&v, buf, sizeof(V));
  return v;
}

}  // namespace

void write_mrt(std::ostream& os, const Tensor<double>& t, DType dtype) {
  Shape extents = t.shape();
  if (dtype == DType::complex64) {
    if (extents.empty() || extents.back() != 2) throw ShapeError("complex64 MRT1 tensors need a trailing extent of 2");
    extents.pop_back();
  }
  if (extents.size() > 255) throw ShapeError("MRT1 supports at most 255 dimensions");
  os.write(kMagic.data(), kMagic.size());
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(extents.size()));
  for (std::size_t e : extents) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  if (dtype == DType::real64) {
    for (double v : t.values()) put<double>(os, v);
  } else {
    for (double v : t.values()) put<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing MRT1 stream");
}

MrtTensor read_mrt(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw IoError("not an MRT1 stream");
  const auto code = get<std::uint8_t>(is);
  if (code > 2) throw IoError("unknown MRT1 dtype code " + std::to_string(code));
  const auto ndim = get<std::uint8_t>(is);
  Shape shape(ndim);
  for (auto& e : shape) e = get<std::uint32_t>(is);
  MrtTensor out;
  out.dtype = static_cast<DType>(code);
  if (out.dtype == DType::complex64) shape.push_back(2);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = out.dtype == DType::real64 ? get<double>(is) : static_cast<double>(get<float>(is));
  out.tensor = Tensor<double>(std::move(shape), std::move(values));
  return out;
}

void write_mrt_file(const std::filesystem::path& path, const Tensor<double>& t, DType dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_mrt(os, t, dtype);
}

MrtTensor read_mrt_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_mrt(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace mrirest

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyrafuse/tensor.hpp"

namespace pyrafuse {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <class U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError("tensor file: truncated data");
  return to_little(v);
}

inline Shape read_header(std::istream& is) {
  Shape s;
  s.n = get<std::uint32_t>(is);
  s.c = get<std::uint32_t>(is);
  s.h = get<std::uint32_t>(is);
  s.w = get<std::uint32_t>(is);
  return s;
}

}  // namespace detail

/// 16-byte header of four little-endian u32 dims (N, C, H, W), then the
/// scalars in little-endian row-major order at the width of T.
template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > UINT32_MAX) throw FormatError("tensor file: dimension exceeds 32 bits");
    detail::put(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.data()) detail::put(os, v);
  if (!os) throw FormatError("tensor file: write failed");
}

template <class T>
Tensor<T> read_tensor(std::istream& is) {
  const Shape s = detail::read_header(is);
  std::vector<T> v(s.numel());
  for (auto& x : v) x = detail::get<T>(is);
  return Tensor<T>(s, std::move(v));
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

/// Reads a single-tensor file, inferring 32- or 64-bit floats from its size.
inline Tensor<double> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  const auto bytes = std::filesystem::file_size(path);
  if (bytes < 16) throw FormatError(path.string() + ": shorter than the 16-byte header");
  const Shape s = detail::read_header(is);
  const std::uintmax_t payload = bytes - 16;
  if (payload == s.numel() * sizeof(double) && s.numel() > 0) {
    std::vector<double> v(s.numel());
    for (auto& x : v) x = detail::get<double>(is);
    return Tensor<double>(s, std::move(v));
  }
  if (payload == s.numel() * sizeof(float)) {
    std::vector<double> v(s.numel());
    for (auto& x : v) x = detail::get<float>(is);
    return Tensor<double>(s, std::move(v));
  }
  throw FormatError(path.string() + ": payload of " + std::to_string(payload) + " bytes does not fit shape " + s.str());
}

}  // namespace pyrafuse

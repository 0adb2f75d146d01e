#pragma once

// DCNT fixture files. Layout, all little-endian:
//
//   offset  size  field
//        0     4  magic "DCNT"
//        4     4  version (u32) = 1
//        8     1  dtype (u8): 0 = fp32, 1 = fp16
//        9     1  ndim (u8) = 4
//       10     2  padding, zero
//       12    32  dims N, H, W, C as u64
//       44     -  raw element data, N*H*W*C elements

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dcnv4/error.hpp"
#include "dcnv4/tensor.hpp"

namespace dcnv4 {

inline constexpr std::uint32_t kFixtureVersion = 1;
inline constexpr std::size_t kFixtureHeaderBytes = 44;

namespace detail {

template <class UInt>
void put_le(std::vector<std::uint8_t>& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <class UInt>
UInt get_le(const std::uint8_t* p) {
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) value |= static_cast<UInt>(p[i]) << (8 * i);
  return value;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_fixture(const TensorNHWC& t) {
  std::vector<std::uint8_t> out;
  out.reserve(kFixtureHeaderBytes + t.numel() * bytes_per_element(t.dtype()));
  for (char ch : {'D', 'C', 'N', 'T'}) out.push_back(static_cast<std::uint8_t>(ch));
  detail::put_le<std::uint32_t>(out, kFixtureVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(4);
  out.push_back(0);
  out.push_back(0);
  const Shape& s = t.shape();
  for (std::int64_t d : {s.n, s.h, s.w, s.c}) detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  if (t.dtype() == ElementType::fp32) {
    for (float v : t.f32()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  } else {
    for (std::uint16_t v : t.f16()) detail::put_le<std::uint16_t>(out, v);
  }
  return out;
}

inline TensorNHWC decode_fixture(const std::vector<std::uint8_t>& bytes) {
  const auto need = [&](std::size_t end, std::uint64_t at, const char* what) {
    if (bytes.size() < end) throw FormatError(std::string("truncated fixture: missing ") + what, at);
  };
  need(4, bytes.size(), "magic");
  if (std::memcmp(bytes.data(), "DCNT", 4) != 0) throw FormatError("bad magic, expected \"DCNT\"", 0);
  need(8, bytes.size(), "version");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kFixtureVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  need(12, bytes.size(), "dtype/ndim");
  if (bytes[8] > 1) throw FormatError("unknown dtype code " + std::to_string(bytes[8]), 8);
  const auto dtype = static_cast<ElementType>(bytes[8]);
  if (bytes[9] != 4) throw FormatError("ndim must be 4, got " + std::to_string(bytes[9]), 9);
  need(kFixtureHeaderBytes, bytes.size(), "dims");

  std::array<std::int64_t, 4> dims{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto d = detail::get_le<std::uint64_t>(bytes.data() + 12 + 8 * i);
    if (d == 0 || d > (std::uint64_t{1} << 40)) {
      throw FormatError("invalid dimension " + std::to_string(d), 12 + 8 * i);
    }
    dims[i] = static_cast<std::int64_t>(d);
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t payload = shape.numel() * bytes_per_element(dtype);
  if (bytes.size() < kFixtureHeaderBytes + payload) {
    throw FormatError("truncated payload: expected " + std::to_string(payload) + " data bytes",
                      bytes.size());
  }
  if (bytes.size() > kFixtureHeaderBytes + payload) {
    throw FormatError("trailing bytes after payload", kFixtureHeaderBytes + payload);
  }

  const std::uint8_t* data = bytes.data() + kFixtureHeaderBytes;
  if (dtype == ElementType::fp32) {
    std::vector<float> values(shape.numel());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(data + 4 * i));
    }
    return TensorNHWC::from_values(shape, std::move(values));
  }
  std::vector<std::uint16_t> bits(shape.numel());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = detail::get_le<std::uint16_t>(data + 2 * i);
  return TensorNHWC::from_half_bits(shape, std::move(bits));
}

inline void write_fixture(const TensorNHWC& t, const std::filesystem::path& path) {
  const auto bytes = encode_fixture(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline TensorNHWC read_fixture(const std::filesystem::path& path) {
  return decode_fixture(read_file_bytes(path));
}

}  // namespace dcnv4

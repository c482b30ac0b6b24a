#pragma once

// Framing helpers shared by the HDPB / HDPC / HDPW / HDPU containers:
//   4-byte magic | u32 LE version | u32 LE header length | UTF-8 JSON header | payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "hdprobe/error.hpp"

namespace hdprobe::io {

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

inline std::uint32_t read_u32_le(std::istream& in, std::string_view what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(std::string(what) + ": truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_frame_header(std::ostream& out, std::string_view magic, std::uint32_t version,
                               std::string_view json_header) {
  out.write(magic.data(), 4);
  write_u32_le(out, version);
  write_u32_le(out, static_cast<std::uint32_t>(json_header.size()));
  out.write(json_header.data(), static_cast<std::streamsize>(json_header.size()));
}

struct FrameHeader {
  std::uint32_t version = 0;
  std::string json;
};

// Reads and validates the magic; returns version and JSON header text.
inline FrameHeader read_frame_header(std::istream& in, std::string_view magic) {
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4)) throw FormatError(std::string(magic) + ": truncated file");
  if (std::string_view(got.data(), 4) != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
  FrameHeader h;
  h.version = read_u32_le(in, magic);
  const std::uint32_t len = read_u32_le(in, magic);
  h.json.resize(len);
  if (len > 0 && !in.read(h.json.data(), len)) throw FormatError(std::string(magic) + ": truncated header");
  return h;
}

// float32 little-endian payloads. The host is assumed little-endian (checked
// at compile time), so values are copied verbatim.
static_assert(std::endian::native == std::endian::little, "float32 LE I/O assumes a little-endian host");

inline void write_f32(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

inline void read_f32(std::istream& in, std::span<float> values, std::string_view what) {
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()))) {
    throw FormatError(std::string(what) + ": truncated payload");
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  return out;
}

// True if the stream has no bytes left.
inline bool at_eof(std::istream& in) { return in.peek() == std::char_traits<char>::eof(); }

}  // namespace hdprobe::io

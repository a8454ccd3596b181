#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pansel/common.hpp"

namespace pansel::netpbm {

// Binary PPM (P6, maxval 255) and PGM (P5, maxval 255 or 65535, big-endian
// samples for 16-bit). Decoders throw ParseError with the offending byte
// offset; file helpers throw std::runtime_error naming the path.

std::vector<std::uint8_t> encode_ppm(const Image& img);
std::vector<std::uint8_t> encode_pgm8(const Raster<std::uint8_t>& mask);
std::vector<std::uint8_t> encode_pgm16(const Raster<std::uint16_t>& mask);

Image decode_ppm(const std::vector<std::uint8_t>& bytes);
Raster<std::uint8_t> decode_pgm8(const std::vector<std::uint8_t>& bytes);
Raster<std::uint16_t> decode_pgm16(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

inline void write_ppm(const std::filesystem::path& p, const Image& img) { write_file(p, encode_ppm(img)); }
inline void write_pgm8(const std::filesystem::path& p, const Raster<std::uint8_t>& m) { write_file(p, encode_pgm8(m)); }
inline void write_pgm16(const std::filesystem::path& p, const Raster<std::uint16_t>& m) { write_file(p, encode_pgm16(m)); }
Image read_ppm(const std::filesystem::path& p);
Raster<std::uint8_t> read_pgm8(const std::filesystem::path& p);
Raster<std::uint16_t> read_pgm16(const std::filesystem::path& p);

}  // namespace pansel::netpbm

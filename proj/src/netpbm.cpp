#include "pansel/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace pansel::netpbm {

namespace {

struct Header {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  void expect_magic(char kind) {
    if (bytes_.size() < 2) throw ParseError("truncated netpbm header", bytes_.size());
    if (bytes_[0] != 'P' || bytes_[1] != std::uint8_t(kind))
      throw ParseError(std::string("bad magic, expected P") + kind, 0);
    pos_ = 2;
  }

  int next_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw ParseError(std::string(what) + " out of range", start);
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= bytes_.size()) throw ParseError(std::string("truncated header reading ") + what, pos_);
      throw ParseError(std::string("expected integer for ") + what, pos_);
    }
    return int(value);
  }

  std::size_t finish() {
    // Exactly one whitespace byte separates maxval from the raster.
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw ParseError("missing whitespace after maxval", pos_);
    return pos_ + 1;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

Header parse_header(const std::vector<std::uint8_t>& bytes, char kind) {
  HeaderReader r(bytes);
  r.expect_magic(kind);
  Header h;
  h.width = r.next_int("width");
  h.height = r.next_int("height");
  const std::size_t maxval_at = r.pos();
  h.maxval = r.next_int("maxval");
  if (h.width <= 0 || h.height <= 0) throw ParseError("non-positive dimensions", maxval_at);
  if (h.maxval != 255 && h.maxval != 65535)
    throw ParseError("unsupported maxval " + std::to_string(h.maxval) + " (need 255 or 65535)", maxval_at);
  h.data_offset = r.finish();
  return h;
}

void check_payload(const std::vector<std::uint8_t>& bytes, const Header& h, std::size_t need) {
  if (bytes.size() < h.data_offset + need)
    throw ParseError("truncated raster: need " + std::to_string(need) + " bytes", bytes.size());
}

std::vector<std::uint8_t> header_bytes(const char* magic, int w, int h, int maxval) {
  const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
                        std::to_string(maxval) + "\n";
  return {s.begin(), s.end()};
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  auto out = header_bytes("P6", img.width, img.height, 255);
  out.reserve(out.size() + img.data.size());
  for (float v : img.data) {
    const float c = std::clamp(v, 0.f, 1.f);
    out.push_back(std::uint8_t(std::lround(c * 255.f)));
  }
  return out;
}

std::vector<std::uint8_t> encode_pgm8(const Raster<std::uint8_t>& mask) {
  auto out = header_bytes("P5", mask.width, mask.height, 255);
  out.insert(out.end(), mask.data.begin(), mask.data.end());
  return out;
}

std::vector<std::uint8_t> encode_pgm16(const Raster<std::uint16_t>& mask) {
  auto out = header_bytes("P5", mask.width, mask.height, 65535);
  out.reserve(out.size() + 2 * mask.data.size());
  for (std::uint16_t v : mask.data) {
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v & 0xff));
  }
  return out;
}

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes, '6');
  if (h.maxval != 255) throw ParseError("PPM images must use maxval 255", h.data_offset);
  const std::size_t n = std::size_t(h.width) * h.height * 3;
  check_payload(bytes, h, n);
  Image img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = float(bytes[h.data_offset + i]) / 255.f;
  return img;
}

Raster<std::uint8_t> decode_pgm8(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes, '5');
  if (h.maxval != 255) throw ParseError("expected 8-bit PGM (maxval 255)", h.data_offset);
  const std::size_t n = std::size_t(h.width) * h.height;
  check_payload(bytes, h, n);
  Raster<std::uint8_t> m(h.width, h.height);
  std::copy_n(bytes.begin() + std::ptrdiff_t(h.data_offset), n, m.data.begin());
  return m;
}

Raster<std::uint16_t> decode_pgm16(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes, '5');
  if (h.maxval != 65535) throw ParseError("expected 16-bit PGM (maxval 65535)", h.data_offset);
  const std::size_t n = std::size_t(h.width) * h.height;
  check_payload(bytes, h, 2 * n);
  Raster<std::uint16_t> m(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = h.data_offset + 2 * i;
    m.data[i] = std::uint16_t((bytes[o] << 8) | bytes[o + 1]);
  }
  return m;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  note_read(path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

namespace {
template <typename Fn>
auto decode_named(const std::filesystem::path& p, Fn fn) {
  try {
    return fn(read_file(p));
  } catch (const ParseError& e) {
    throw ParseError(p.string() + ": " + e.detail(), e.offset());
  }
}
}  // namespace

Image read_ppm(const std::filesystem::path& p) { return decode_named(p, decode_ppm); }
Raster<std::uint8_t> read_pgm8(const std::filesystem::path& p) { return decode_named(p, decode_pgm8); }
Raster<std::uint16_t> read_pgm16(const std::filesystem::path& p) { return decode_named(p, decode_pgm16); }

}  // namespace pansel::netpbm

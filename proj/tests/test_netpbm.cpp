#include "doctest.h"
#include "pansel/netpbm.hpp"
#include "pansel/rng.hpp"

using namespace pansel;
using namespace pansel::netpbm;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("random rasters round-trip losslessly") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = rng.uniform_int(1, 40), h = rng.uniform_int(1, 40);
    Image img(w, h);
    for (auto& v : img.data) v = float(rng.uniform_int(0, 255)) / 255.0f;
    Raster<std::uint8_t> m8(w, h);
    for (auto& v : m8.data) v = std::uint8_t(rng.uniform_int(0, 255));
    Raster<std::uint16_t> m16(w, h);
    for (auto& v : m16.data) v = std::uint16_t(rng.uniform_int(0, 65535));
    REQUIRE(decode_ppm(encode_ppm(img)) == img);
    REQUIRE(decode_pgm8(encode_pgm8(m8)) == m8);
    REQUIRE(decode_pgm16(encode_pgm16(m16)) == m16);
  }
}

TEST_CASE("16-bit samples are big-endian") {
  Raster<std::uint16_t> m(1, 1);
  m.data[0] = 0x1234;
  const auto b = encode_pgm16(m);
  REQUIRE(b.size() >= 2);
  CHECK(b[b.size() - 2] == 0x12);
  CHECK(b[b.size() - 1] == 0x34);
}

TEST_CASE("header comments and whitespace are accepted") {
  const auto m = decode_pgm8(bytes_of("P5\n# comment\n2 1\n255\nAB"));
  CHECK(m.width == 2);
  CHECK(m.data[0] == 'A');
  CHECK(m.data[1] == 'B');
}

TEST_CASE("malformed files raise parse errors") {
  CHECK_THROWS_AS(decode_pgm8(bytes_of("P5\n2 2\n255\nAB")), ParseError);  // truncated payload
  CHECK_THROWS_AS(decode_pgm8(bytes_of("P5\n2 2\n")), ParseError);
  CHECK_THROWS_AS(decode_pgm8(bytes_of("P6\n1 1\n255\nabc")), ParseError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("")), ParseError);
  try {
    decode_pgm16(bytes_of("P5\n1 1\n1000\nab"));
    FAIL("maxval 1000 accepted");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("maxval") != std::string::npos);
  }
  try {
    decode_pgm8(bytes_of("P5\n4 4\n255\nxy"));
    FAIL("truncated file accepted");
  } catch (const ParseError& e) {
    CHECK(e.offset() > 0);
  }
}

TEST_CASE("8-bit reader rejects 16-bit files and vice versa") {
  Raster<std::uint16_t> m(2, 2);
  CHECK_THROWS_AS(decode_pgm8(encode_pgm16(m)), ParseError);
  Raster<std::uint8_t> m8(2, 2);
  CHECK_THROWS_AS(decode_pgm16(encode_pgm8(m8)), ParseError);
}

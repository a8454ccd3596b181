#include "doctest.h"
#include "pansel/augment.hpp"
#include "pansel/scenegen.hpp"

using namespace pansel;

namespace {

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& v : img.data) v = float(rng.uniform());
  return img;
}

InstanceMask random_mask(Rng& rng, int w, int h) {
  InstanceMask m(w, h);
  for (auto& v : m.data) v = std::uint16_t(rng.uniform_int(0, 9));
  return m;
}

// Reference transforms written directly from their definitions.
InstanceMask mirror(const InstanceMask& m) {
  InstanceMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(x, y) = m.at(m.width - 1 - x, y);
  return out;
}

// One counter-clockwise quarter turn: out(x', y') = in(W - 1 - y', x').
InstanceMask turn_ccw(const InstanceMask& m) {
  InstanceMask out(m.height, m.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = m.at(m.width - 1 - y, x);
  return out;
}

}  // namespace

TEST_CASE("identity record changes nothing") {
  Rng rng(1);
  const Image img = random_image(rng, 9, 7);
  const InstanceMask m = random_mask(rng, 9, 7);
  const auto id = AugmentationRecord::identity(9, 7);
  CHECK(apply(img, id) == img);
  CHECK(apply_labels(m, id) == m);
}

TEST_CASE("flip is an involution and matches the mirror") {
  Rng rng(2);
  const Image img = random_image(rng, 8, 5);
  const InstanceMask m = random_mask(rng, 8, 5);
  auto rec = AugmentationRecord::identity(8, 5);
  rec.flip = true;
  CHECK(apply(apply(img, rec), rec) == img);
  CHECK(apply_labels(m, rec) == mirror(m));
  CHECK(apply_labels(apply_labels(m, rec), rec) == m);
}

TEST_CASE("large brightness saturates to white") {
  Rng rng(3);
  const Image img = random_image(rng, 6, 6);
  Photometric ph;
  ph.brightness = 2.0;
  const Image out = apply_photometric(img, ph);
  for (float v : out.data) CHECK(v == 1.0f);
}

TEST_CASE("nearest-neighbour upscale of a single pixel") {
  InstanceMask m(1, 1);
  m.data[0] = 7;
  auto rec = AugmentationRecord::identity(1, 1);
  rec.scale = 2.0;
  const InstanceMask out = apply_labels(m, rec);
  REQUIRE(out.width == 2);
  REQUIRE(out.height == 2);
  for (auto v : out.data) CHECK(v == 7);
}

TEST_CASE("quarter turns match the reference rotation") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const InstanceMask m = random_mask(rng, rng.uniform_int(2, 9), rng.uniform_int(2, 9));
    for (int k = 0; k < 4; ++k) {
      auto rec = AugmentationRecord::identity(m.width, m.height);
      rec.rotation_quarter_turns = k;
      rec.flip = trial % 2 == 1;
      InstanceMask expect = rec.flip ? mirror(m) : m;
      for (int t = 0; t < k; ++t) expect = turn_ccw(expect);
      REQUIRE(apply_labels(m, rec) == expect);
    }
  }
}

TEST_CASE("labels and images move together") {
  // Equivariance: the label of every output pixel is the label of the input
  // pixel whose colour it carries.
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 12, h = 10;
    Image img(w, h);
    InstanceMask code(w, h);
    for (int i = 0; i < w * h; ++i) {
      code.data[i] = std::uint16_t(i);
      img.data[3 * i] = float(i) / float(w * h);
    }
    const auto rec = random_record(rng, w, h, JitterConfig{.photometric = false});
    AugmentationRecord turned = rec;
    turned.rotation_quarter_turns = trial % 4;
    const Image ai = apply(img, turned);
    const InstanceMask am = apply_labels(code, turned);
    REQUIRE(ai.width == am.width);
    for (int i = 0; i < am.width * am.height; ++i) REQUIRE(ai.data[3 * i] == float(am.data[i]) / float(w * h));
  }
}

TEST_CASE("random records keep the canvas size") {
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto rec = random_record(rng, 64, 48, JitterConfig{});
    CHECK(rec.out_width() == 64);
    CHECK(rec.out_height() == 48);
    CHECK(rec.crop.x >= 0);
    CHECK(rec.crop.x + rec.crop.w <= 64);
    CHECK(rec.crop.y + rec.crop.h <= 48);
    CHECK(rec.photometric.blur_sigma <= 1.5);
  }
}

TEST_CASE("invert_spatial undoes flips and covers the crop footprint exactly") {
  Rng rng(7);
  Field f(2, 6, 8);
  for (auto& v : f.data) v = rng.uniform();
  auto rec = AugmentationRecord::identity(8, 6);
  const auto same = invert_spatial(f, rec, 8, 6);
  CHECK(same.field.data == f.data);
  for (auto c : same.covered.data) CHECK(c == 1);

  rec.flip = true;
  const auto back = invert_spatial(apply_field(f, rec), rec, 8, 6);
  CHECK(back.field.data == f.data);

  for (int trial = 0; trial < 20; ++trial) {
    const auto r = random_record(rng, 8, 6, JitterConfig{});
    const Field aug(2, r.out_height(), r.out_width());
    const auto proj = invert_spatial(aug, r, 8, 6);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x) {
        const bool inside = x >= r.crop.x && x < r.crop.x + r.crop.w && y >= r.crop.y && y < r.crop.y + r.crop.h;
        REQUIRE(bool(proj.covered.at(x, y)) == inside);
      }
  }
}

TEST_CASE("overlapping crops average where both cover") {
  // 4x4 canvas; crop A = top-left 3x3 holding 1, crop B = bottom-right 3x3 holding 3.
  AugmentationRecord a = AugmentationRecord::identity(4, 4), b = a;
  a.crop = {0, 0, 3, 3};
  b.crop = {1, 1, 3, 3};
  Field fa(1, 3, 3), fb(1, 3, 3);
  std::fill(fa.data.begin(), fa.data.end(), 1.0);
  std::fill(fb.data.begin(), fb.data.end(), 3.0);
  CanvasAverager avg(1, 4, 4);
  avg.add(invert_spatial(fa, a, 4, 4));
  avg.add(invert_spatial(fb, b, 4, 4));
  const Field m = avg.mean();
  const double expect[4][4] = {{1, 1, 1, 0}, {1, 2, 2, 3}, {1, 2, 2, 3}, {0, 3, 3, 3}};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(m.at(0, y, x) == expect[y][x]);
  CHECK(avg.counts().at(0, 0) == 1);
  CHECK(avg.counts().at(1, 1) == 2);
  CHECK(avg.counts().at(3, 0) == 0);
}

TEST_CASE("invalid records are rejected") {
  auto rec = AugmentationRecord::identity(4, 4);
  rec.crop = {2, 2, 4, 4};
  InstanceMask m(4, 4);
  CHECK_THROWS_AS(apply_labels(m, rec), ContractViolation);
  rec = AugmentationRecord::identity(4, 4);
  rec.rotation_quarter_turns = 4;
  CHECK_THROWS_AS(apply_labels(m, rec), ContractViolation);
}

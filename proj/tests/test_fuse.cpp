#include <set>

#include "doctest.h"
#include "pansel/fuse.hpp"
#include "pansel/rng.hpp"
#include "pansel/scenegen.hpp"

using namespace pansel;

namespace {

InstanceMask square(int w, int h, int x0, int y0, int side, std::uint16_t id) {
  InstanceMask m(w, h);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) m.at(x, y) = id;
  return m;
}

}  // namespace

TEST_CASE("bincount takes the majority class") {
  InstanceMask inst(10, 1, 1);
  SemanticMask sem(10, 1, schema::kCar);
  for (int x = 6; x < 10; ++x) sem.at(x, 0) = schema::kPerson;
  auto r = bincount_relabel(inst, sem);
  CHECK(r.class_of.size() == 1);
  CHECK(r.class_of.at(1) == schema::kCar);
  CHECK(r.mask == inst);
}

TEST_CASE("bincount instance inside one class region") {
  SemanticMask sem(8, 8, schema::kRoad);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) sem.at(x, y) = schema::kBike;
  auto r = bincount_relabel(square(8, 8, 2, 2, 4, 7), sem);
  REQUIRE(r.class_of.size() == 1);
  CHECK(r.class_of.at(1) == schema::kBike);
  CHECK(r.mask == square(8, 8, 2, 2, 4, 1));
}

TEST_CASE("bincount merges touching same-class fragments") {
  // A split car: left half id 2, right half id 5, diagonal contact only at one corner for the third fragment.
  InstanceMask inst(8, 4);
  SemanticMask sem(8, 4, schema::kCar);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) inst.at(x, y) = 2;
  for (int y = 0; y < 2; ++y)
    for (int x = 3; x < 5; ++x) inst.at(x, y) = 5;
  inst.at(5, 2) = 9;  // touches id 5 diagonally
  inst.at(7, 3) = 11;  // isolated
  auto r = bincount_relabel(inst, sem);
  CHECK(r.class_of.size() == 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 5; ++x) CHECK(r.mask.at(x, y) == 1);
  CHECK(r.mask.at(5, 2) == 1);
  CHECK(r.mask.at(7, 3) == 2);
}

TEST_CASE("bincount does not merge different classes") {
  InstanceMask inst(4, 1);
  inst.data = {1, 1, 2, 2};
  SemanticMask sem(4, 1);
  sem.data = {schema::kCar, schema::kCar, schema::kPerson, schema::kPerson};
  auto r = bincount_relabel(inst, sem);
  CHECK(r.class_of.size() == 2);
  CHECK(r.class_of.at(1) == schema::kCar);
  CHECK(r.class_of.at(2) == schema::kPerson);
}

TEST_CASE("bincount stuff majority falls back or drops") {
  InstanceMask inst(6, 1);
  inst.data = {1, 1, 1, 2, 2, 2};
  SemanticMask sem(6, 1);
  sem.data = {schema::kRoad, schema::kRoad, schema::kPerson, schema::kSky, schema::kSky, schema::kBuilding};
  auto r = bincount_relabel(inst, sem);
  REQUIRE(r.class_of.size() == 1);
  CHECK(r.class_of.at(1) == schema::kPerson);
  CHECK(r.mask.data == std::vector<std::uint16_t>{1, 1, 1, 0, 0, 0});
}

TEST_CASE("bincount conserves pixel counts") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    InstanceMask inst(12, 12);
    SemanticMask sem(12, 12);
    for (auto& v : inst.data) v = std::uint16_t(rng.uniform_int(0, 4));
    for (auto& v : sem.data) v = std::uint8_t(rng.uniform_int(3, 5));
    auto r = bincount_relabel(inst, sem);
    std::size_t before = 0, after = 0;
    for (auto v : inst.data) before += v != 0;
    for (auto v : r.mask.data) after += v != 0;
    CHECK(before == after);
    std::set<int> ids(r.mask.data.begin(), r.mask.data.end());
    ids.erase(0);
    CHECK(ids.size() == r.class_of.size());
  }
}

TEST_CASE("morphology keeps a solid square") {
  auto m = square(16, 16, 3, 3, 10, 4);
  CHECK(morphological_cleanup(m) == m);
}

TEST_CASE("morphology removes an isolated pixel") {
  InstanceMask m = square(16, 16, 3, 3, 5, 1);
  m.at(12, 12) = 2;
  auto out = morphological_cleanup(m);
  CHECK(out == square(16, 16, 3, 3, 5, 1));
}

TEST_CASE("morphology fills a one-pixel hole") {
  // 5x5 grid: dilation covers the hole, erosion of the full block keeps it
  // (outside neighbours are ignored), so the block comes back solid.
  InstanceMask m = square(5, 5, 0, 0, 5, 3);
  m.at(2, 2) = 0;
  CHECK(morphological_cleanup(m, 0, 1) == square(5, 5, 0, 0, 5, 3));
}

TEST_CASE("morphology radius zero is identity") {
  Rng rng(1);
  InstanceMask m(10, 10);
  for (auto& v : m.data) v = std::uint16_t(rng.uniform_int(0, 3));
  CHECK(morphological_cleanup(m, 0, 0) == m);
}

TEST_CASE("morphology never creates ids") {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    InstanceMask m(20, 20);
    for (int k = 1; k <= 4; ++k) {
      const int x0 = rng.uniform_int(0, 14), y0 = rng.uniform_int(0, 14), s = rng.uniform_int(1, 6);
      for (int y = y0; y < y0 + s; ++y)
        for (int x = x0; x < x0 + s; ++x) m.at(x, y) = std::uint16_t(k);
    }
    std::set<int> before(m.data.begin(), m.data.end());
    auto out = morphological_cleanup(m);
    for (auto v : out.data) CHECK(before.count(v) == 1);
  }
}

TEST_CASE("morphology rejects negative radii") {
  CHECK_THROWS_AS(morphological_cleanup(InstanceMask(3, 3), -1, 1), ConfigError);
}

TEST_CASE("fuse with no instances is the semantic map") {
  SemanticMask sem(4, 2);
  sem.data = {0, 1, 2, 3, 4, 5, schema::kVoid, 1};
  auto pan = fuse_panoptic(sem, InstanceMask(4, 2), {});
  CHECK(pan.classes == sem);
  for (auto v : pan.instances.data) CHECK(v == 0);
}

TEST_CASE("fuse car over road") {
  SemanticMask sem(6, 6, schema::kRoad);
  auto inst = square(6, 6, 1, 1, 3, 2);
  auto pan = fuse_panoptic(sem, inst, {{2, schema::kCar}});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      const bool in = inst.at(x, y) != 0;
      CHECK(pan.classes.at(x, y) == (in ? schema::kCar : schema::kRoad));
      CHECK(pan.instances.at(x, y) == (in ? 2 : 0));
    }
}

TEST_CASE("fuse of generated labels equals the panoptic raster") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    SceneSpec spec;
    spec.seed = s;
    const Scene sc = generate_scene(spec);
    std::map<int, int> class_of;
    for (std::size_t p = 0; p < sc.instance.size(); ++p)
      if (sc.instance.data[p] != 0) class_of[sc.instance.data[p]] = sc.semantic.data[p];
    const auto pan = fuse_panoptic(sc.semantic, sc.instance, class_of);
    CHECK(encode_panoptic(pan) == panoptic_raster(sc.semantic, sc.instance));
  }
}

TEST_CASE("fuse is idempotent and encode/decode round-trips") {
  SceneSpec spec;
  spec.seed = 3;
  const Scene sc = generate_scene(spec);
  const auto rel = bincount_relabel(sc.instance, sc.semantic);
  const auto pan = fuse_panoptic(sc.semantic, rel.mask, rel.class_of);
  const auto again = fuse_panoptic(pan.classes, pan.instances, rel.class_of);
  CHECK(again == pan);
  CHECK(decode_panoptic(encode_panoptic(pan)) == pan);
}

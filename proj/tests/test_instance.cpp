#include <cmath>
#include <map>

#include "doctest.h"
#include "pansel/instance.hpp"

using namespace pansel;

namespace {

// 1-D embedding field over a 1 x n strip.
Field strip(const std::vector<double>& values) {
  Field f(1, 1, int(values.size()));
  f.data = values;
  return f;
}

InstanceMask ids(const std::vector<int>& v) {
  InstanceMask m(int(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = std::uint16_t(v[i]);
  return m;
}

MarginParams margins(double dv = 0.5, double dd = 1.5) {
  MarginParams m;
  m.delta_v = dv;
  m.delta_d = dd;
  return m;
}

Field random_field(Rng& rng, int d, int h, int w, double scale) {
  Field f(d, h, w);
  for (auto& v : f.data) v = rng.uniform(-scale, scale);
  return f;
}

InstanceMask random_ids(Rng& rng, int h, int w, int k) {
  InstanceMask m(w, h);
  for (auto& v : m.data) v = std::uint16_t(rng.uniform_int(0, k));
  return m;
}

}  // namespace

TEST_CASE("pull loss") {
  CHECK(pull_loss(strip({0, 2}), ids({1, 1}), margins()).value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pull_loss(strip({3, 3, 3}), ids({1, 1, 1}), margins()).value == 0.0);
  CHECK(pull_loss(strip({0.9, 1.1}), ids({1, 1}), margins()).value == 0.0);
  CHECK(pull_loss(strip({0, 2}), ids({0, 0}), margins()).value == 0.0);
}

TEST_CASE("push loss") {
  // Two single-pixel objects with means 1 apart: (3 - 1)^2 for both ordered pairs over C(C-1) = 2.
  CHECK(push_loss(strip({0, 1}), ids({1, 2}), margins()).value == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(push_loss(strip({0, 3}), ids({1, 2}), margins()).value == 0.0);
  CHECK(push_loss(strip({0, 1}), ids({1, 1}), margins()).value == 0.0);
}

TEST_CASE("unlabelled push loss") {
  CHECK(unlabelled_push_loss(strip({0, 0}), ids({1, 0}), margins()).value == doctest::Approx(2.25).epsilon(1e-12));
  CHECK(unlabelled_push_loss(strip({0, 0, 0}), ids({1, 0, 0}), margins()).value ==
        doctest::Approx(2.25).epsilon(1e-12));
  CHECK(unlabelled_push_loss(strip({0, 1.5, -2}), ids({1, 0, 0}), margins()).value == 0.0);
  CHECK(unlabelled_push_loss(strip({0, 0}), ids({1, 1}), margins()).value == 0.0);
}

TEST_CASE("ignored pixels take no part") {
  const Field f = strip({0, 2, 0.2});
  const auto with = pull_loss(f, ids({1, 1, kIgnoreInstance}), margins());
  CHECK(with.value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(with.grad.data[2] == 0.0);
}

TEST_CASE("soft mask") {
  const MarginParams m = margins();
  CHECK(soft_mask_sigma(m) == doctest::Approx(0.5 / std::sqrt(2 * std::log(2.0))).epsilon(1e-15));
  const auto s = soft_mask(strip({0, 0.5, 1.0, 0.7}), {0.0}, m);
  CHECK(s.data[0] == 1.0);
  CHECK(s.data[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.data[2] == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(s.data[3] < s.data[1]);
  CHECK(s.data[3] > s.data[2]);
}

TEST_CASE("dice distance") {
  CHECK(dice_distance({1, 1}, {1, 0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(dice_distance({1, 0, 1}, {1, 0, 1}) == 0.0);
  CHECK(dice_distance({1, 0}, {0, 1}) == 1.0);
  CHECK(dice_distance({0, 0}, {0, 0}) == 0.0);
  // dD/dp against central differences.
  const std::vector<double> p{0.3, 0.9, 0.1}, q{1, 0, 1};
  std::vector<double> dp;
  dice_distance(p, q, &dp);
  for (int i = 0; i < 3; ++i) {
    auto a = p, b = p;
    a[i] += 1e-6;
    b[i] -= 1e-6;
    CHECK(dp[i] == doctest::Approx((dice_distance(a, q) - dice_distance(b, q)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("dice object loss") {
  // Object at pixels 0, 1 with embeddings equal to the anchor: soft mask 1 on
  // the object, far pixels near 0.
  const Field f = strip({0, 0, 10, 10});
  const InstanceMask gt = ids({1, 1, 0, 0});
  const std::vector<ObjectAnchors> anchors{{1, {{0, 1, 0, 1, 0}}}};
  CHECK(dice_object_loss(f, gt, anchors, margins()).value == doctest::Approx(0.0).epsilon(1e-12));
  // The anchor sits inside but half of the object sits at distance delta_v.
  const Field g = strip({0, 0.5, 10, 10});
  const double s = 0.5;
  const double expect = 1 - 2 * (1 + s) / ((1 + s * s) + 2);
  const std::vector<ObjectAnchors> a0{{1, {{0, 0, 0, 0, 0}}}};
  CHECK(dice_object_loss(g, gt, a0, margins()).value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("object anchors") {
  InstanceMask gt(40, 20, 0);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 15; ++x) gt.at(x, y) = 1;  // 300 px -> 2 anchors
  for (int y = 0; y < 2; ++y)
    for (int x = 20; x < 22; ++x) gt.at(x, y) = 2;  // 4 px -> 1 anchor
  Rng rng(1);
  const auto a = sample_object_anchors(gt, rng);
  REQUIRE(a.size() == 2);
  CHECK(a[0].object_id == 1);
  CHECK(a[0].anchors.size() == 2);
  CHECK(a[1].anchors.size() == 1);
  for (const auto& oa : a)
    for (const auto& anchor : oa.anchors) {
      CHECK(anchor.size() == 5);
      for (int p : anchor) CHECK(gt.data[p] == oa.object_id);
    }
  InstanceMask big(64, 64, 1);
  CHECK(sample_object_anchors(big, rng)[0].anchors.size() == 8);
}

TEST_CASE("consistency loss") {
  Rng rng(2);
  const Field f = random_field(rng, 3, 4, 4, 1.0);
  const std::vector<int> anchors{0, 5, 10};
  const auto same = consistency_loss(f, f, anchors, margins());
  CHECK(same.value == doctest::Approx(0.0).epsilon(1e-12));
  for (double g : same.grad.data) CHECK(std::abs(g) < 1e-12);

  // Teacher = student + an offset far beyond delta_v: teacher masks vanish, so D -> 1 per anchor.
  Field shifted = f;
  for (auto& v : shifted.data) v += 50.0;
  CHECK(consistency_loss(f, shifted, anchors, margins()).value == doctest::Approx(1.0).epsilon(1e-9));

  // Only the student receives a gradient: the result lives on the student field.
  const Field g = random_field(rng, 3, 4, 4, 1.0);
  const auto r = consistency_loss(f, g, anchors, margins());
  CHECK(r.grad.same_shape(f));
}

TEST_CASE("covering anchors cover the region") {
  Rng rng(3);
  Field f(2, 6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      f.at(0, y, x) = x * 0.4;
      f.at(1, y, x) = y * 0.4;
    }
  std::vector<int> region(36);
  for (int i = 0; i < 36; ++i) region[i] = i;
  const MarginParams m = margins();
  const auto anchors = covering_anchors(f, region, m, 64);
  CHECK(anchors.front() == 0);
  for (int p : region) {
    double best = 0;
    for (int a : anchors) {
      std::vector<double> e{f.at(0, a), f.at(1, a)};
      best = std::max(best, soft_mask(f, e, m).data[p]);
    }
    CHECK(best >= 0.5);
  }
}

TEST_CASE("weighted total") {
  InstanceLossTerms t{0.25, 4.0, 1.0 / 3.0, 2.25, 0.5};
  CHECK(t.total(LossWeights{}) == doctest::Approx(6.883333333333333).epsilon(1e-12));
  LossWeights no_cons;
  no_cons.delta_cons = 0.0;
  CHECK(t.total(no_cons) == doctest::Approx(6.833333333333333).epsilon(1e-12));
}

TEST_CASE("total loss equals the weighted terms and skips consistency without a teacher") {
  Rng rng(4);
  const Field f = random_field(rng, 3, 6, 6, 1.0);
  const InstanceMask gt = random_ids(rng, 6, 6, 3);
  const auto anchors = sample_object_anchors(gt, rng);
  const MarginParams m = margins();
  const LossWeights w{1.0, 0.5, 2.0, 0.25, 0.1};
  const Field teacher = random_field(rng, 3, 6, 6, 1.0);
  const auto r = instance_total_loss(f, gt, anchors, &teacher, {0, 7, 20}, m, w);
  CHECK(r.terms.pull == doctest::Approx(pull_loss(f, gt, m).value).epsilon(1e-12));
  CHECK(r.terms.push == doctest::Approx(push_loss(f, gt, m).value).epsilon(1e-12));
  CHECK(r.terms.object == doctest::Approx(dice_object_loss(f, gt, anchors, m).value).epsilon(1e-12));
  CHECK(r.terms.unlabelled_push == doctest::Approx(unlabelled_push_loss(f, gt, m).value).epsilon(1e-12));
  CHECK(r.terms.consistency == doctest::Approx(consistency_loss(f, teacher, {0, 7, 20}, m).value).epsilon(1e-12));
  CHECK(r.total == doctest::Approx(r.terms.total(w)).epsilon(1e-12));
  const auto no_teacher = instance_total_loss(f, gt, anchors, nullptr, {0, 7, 20}, m, w);
  CHECK(no_teacher.terms.consistency == 0.0);
}

TEST_CASE("hinges go quiet on well-separated embeddings") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    // Objects 1..3 sit at centres 4 apart with spread < delta_v; background at 2 from every centre.
    InstanceMask gt = random_ids(rng, 5, 5, 3);
    Field f(2, 5, 5);
    for (std::size_t p = 0; p < gt.size(); ++p) {
      const int id = gt.data[p];
      const double cx = id == 0 ? 20.0 : 4.0 * id;
      f.at(0, p) = cx + rng.uniform(-0.1, 0.1);
      f.at(1, p) = rng.uniform(-0.1, 0.1);
    }
    const MarginParams m = margins();
    CHECK(pull_loss(f, gt, m).value == 0.0);
    CHECK(push_loss(f, gt, m).value == 0.0);
    CHECK(unlabelled_push_loss(f, gt, m).value == 0.0);
  }
}

TEST_CASE("losses are invariant to id permutation and embedding translation") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Field f = random_field(rng, 3, 5, 5, 1.5);
    const InstanceMask gt = random_ids(rng, 5, 5, 3);
    InstanceMask perm = gt;
    const int map[4] = {0, 3, 1, 2};
    for (auto& v : perm.data) v = std::uint16_t(map[v]);
    Field moved = f;
    for (int d = 0; d < 3; ++d)
      for (std::size_t p = 0; p < f.plane(); ++p) moved.at(d, p) += 7.0 * (d + 1);
    const MarginParams m = margins();
    for (auto fn : {&pull_loss, &push_loss, &unlabelled_push_loss}) {
      const double base = fn(f, gt, m).value;
      CHECK(fn(f, perm, m).value == doctest::Approx(base).epsilon(1e-12));
      CHECK(fn(moved, gt, m).value == doctest::Approx(base).epsilon(1e-9));
    }
  }
}

TEST_CASE("epsilon schedule and margin validation") {
  CHECK(epsilon_schedule(0, 300) == doctest::Approx(0.2));
  CHECK(epsilon_schedule(300, 300) == doctest::Approx(0.2 * (2 * std::exp(-3.0) - 1)));
  CHECK(epsilon_schedule(100000, 300) >= -0.2);
  CHECK(epsilon_schedule(200, 300) < epsilon_schedule(100, 300));
  MarginParams bad = margins(1.5, 0.5);
  CHECK_THROWS(bad.validate());
  MarginParams neg = margins(0.1, 1.5);
  neg.epsilon = -0.2;
  CHECK_THROWS(neg.validate());
  CHECK_NOTHROW(margins().validate());
}

TEST_CASE("pseudo-labels from planted embeddings") {
  SemanticMask sem(8, 8, schema::kRoad);
  Field emb(2, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      sem.at(x, y) = schema::kCar;
      const bool right = x >= 4;
      emb.at(0, y, x) = right ? 5.0 : 0.0;
      emb.at(1, y, x) = 0.01 * ((x * 7 + y * 3) % 5);
    }
  PseudoLabelConfig cfg;
  cfg.seed = 11;
  const auto pl = gen_instance_pseudo_labels(emb, sem, cfg);
  REQUIRE(pl.count() == 2);
  CHECK(pl.classes == std::vector<int>{schema::kCar, schema::kCar});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(pl.mask.at(x, y) == pl.mask.at(x >= 4 ? 7 : 0, 0));
  CHECK(pl.mask.at(0, 0) != pl.mask.at(7, 0));
  for (double s : pl.stability) CHECK(s >= 0.9);

  // Means 1.0 apart (< delta_d) merge into one instance.
  Field close = emb;
  for (int y = 0; y < 8; ++y)
    for (int x = 4; x < 8; ++x) close.at(0, y, x) = 1.0;
  CHECK(gen_instance_pseudo_labels(close, sem, cfg).count() == 1);

  SemanticMask stuff(8, 8, schema::kSky);
  CHECK(gen_instance_pseudo_labels(emb, stuff, cfg).count() == 0);
}

TEST_CASE("pseudo-labels stay inside their semantic class and respect the size floor") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    SemanticMask sem(12, 12);
    for (auto& v : sem.data) v = std::uint8_t(rng.uniform_int(0, 5));
    const Field emb = random_field(rng, 2, 12, 12, 0.3);
    PseudoLabelConfig cfg;
    cfg.seed = std::uint64_t(trial);
    const auto pl = gen_instance_pseudo_labels(emb, sem, cfg);
    std::map<int, int> area;
    for (std::size_t p = 0; p < sem.size(); ++p) {
      const int id = pl.mask.data[p];
      if (id == 0) continue;
      REQUIRE(sem.data[p] == pl.classes[id - 1]);
      ++area[id];
    }
    for (const auto& [id, a] : area) CHECK(a >= cfg.min_size);
  }
}

TEST_CASE("class subsets restrict pseudo-labels") {
  SemanticMask sem(8, 4, schema::kCar);
  for (int y = 0; y < 4; ++y)
    for (int x = 4; x < 8; ++x) sem.at(x, y) = schema::kPerson;
  const Field emb(2, 4, 8);
  PseudoLabelConfig cfg;
  cfg.classes = {schema::kPerson};
  const auto pl = gen_instance_pseudo_labels(emb, sem, cfg);
  REQUIRE(pl.count() == 1);
  CHECK(pl.classes[0] == schema::kPerson);
  CHECK(pl.mask.at(0, 0) == 0);
}

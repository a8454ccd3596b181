#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "pansel/cluster.hpp"
#include "pansel/parallel.hpp"
#include "pansel/rng.hpp"
#include "oracles.hpp"

using namespace pansel;
using oracle::same_partition;
using oracle::two_blobs;

namespace {

PointSet points_1d(const std::vector<double>& v) {
  PointSet p(1);
  for (double x : v) p.push(&x);
  return p;
}

void check_valid(const ClusterResult& r, std::size_t n) {
  REQUIRE(r.labels.size() == n);
  std::set<int> seen;
  for (int l : r.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l <= r.num_clusters());
    if (l) seen.insert(l);
  }
  REQUIRE(int(seen.size()) == r.num_clusters());
}

// Weighted-average linkage from its closed form: mean pairwise distance
// between the original points of two clusters is the UPGMA value.
double brute_linkage(const PointSet& pts, const std::vector<int>& a, const std::vector<int>& b) {
  double s = 0;
  for (int i : a)
    for (int j : b) s += std::sqrt(squared_distance(pts[i], pts[j], pts.dim));
  return s / double(a.size() * b.size());
}

}  // namespace

TEST_CASE("identical points form one cluster without moving") {
  const PointSet p = points_1d({2, 2, 2, 2});
  const auto r = mean_shift(p, MeanShiftOptions{});
  CHECK(r.num_clusters() == 1);
  CHECK(r.iterations == 0);
  CHECK(r.centers[0][0] == 2.0);
}

TEST_CASE("infinite tolerance keeps every distinct point apart") {
  MeanShiftOptions opt;
  opt.tol = std::numeric_limits<double>::infinity();
  opt.bandwidth = 0.5;
  const auto r = mean_shift(points_1d({0, 1, 2, 2, 5}), opt);
  CHECK(r.num_clusters() == 4);
  CHECK(r.labels == std::vector<int>{1, 2, 3, 3, 4});
}

TEST_CASE("planted blobs are recovered exactly") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const double sigma = 0.2;
    std::vector<int> truth;
    const double sep = seed % 2 ? rng.uniform(4.01, 6.0) * sigma : 10 * 2 * sigma;
    const PointSet pts = two_blobs(rng, 1 + int(seed % 4), 30, sigma, sep, truth);
    MeanShiftOptions opt;
    opt.bandwidth = 2 * sigma;
    const auto ms = mean_shift(pts, opt);
    check_valid(ms, pts.size());
    REQUIRE(ms.num_clusters() == 2);
    REQUIRE(same_partition(ms.labels, truth));
    const auto plus = mean_shift_plus(pts, opt, 2 * sigma, 1);
    REQUIRE(plus.num_clusters() == 2);
    REQUIRE(same_partition(plus.labels, truth));
  }
}

TEST_CASE("mean_shift_plus equals serial mean-shift followed by merge and filter") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed + 1000);
    PointSet pts(2);
    const int n = rng.uniform_int(5, 80);
    for (int i = 0; i < n; ++i) {
      const double p[2] = {rng.uniform(0, 4), rng.uniform(0, 4)};
      pts.push(p);
    }
    MeanShiftOptions opt;
    opt.bandwidth = rng.uniform(0.3, 1.2);
    if (seed % 3 == 0)
      for (int i = 0; i < n; i += 3) opt.seeds.push_back(i);
    const double merge = rng.uniform(0.2, 1.5);
    const int min_size = rng.uniform_int(1, 6);
    const auto serial = merge_and_filter(mean_shift(pts, opt), pts, merge, min_size);
    for (int threads : {1, 2, 3}) {
      opt.threads = threads;
      const auto plus = mean_shift_plus(pts, opt, merge, min_size);
      check_valid(plus, pts.size());
      REQUIRE(plus.labels == serial.labels);
      REQUIRE(plus.centers == serial.centers);
    }
  }
}

TEST_CASE("merge and filter") {
  // Two modes 0.75 apart merge at merge distance 1.5 (= delta_d), then the singleton is filtered.
  const PointSet p = points_1d({0, 0, 0.75, 0.75, 9});
  ClusterResult in;
  in.labels = {1, 1, 2, 2, 3};
  in.centers = {{0}, {0.75}, {9}};
  const auto r = merge_and_filter(in, p, 1.5, 2);
  CHECK(r.labels == std::vector<int>{1, 1, 1, 1, 0});
  CHECK(r.num_clusters() == 1);
  CHECK(r.centers[0][0] == doctest::Approx(0.375));
}

// Epanechnikov density, the shadow of the flat kernel: sum of (1 - |x - p|^2 / h^2) over points within h.
double shadow_density(const PointSet& pts, const double* x, double h) {
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double d2 = 0;
    for (int k = 0; k < pts.dim; ++k) d2 += (x[k] - pts[i][k]) * (x[k] - pts[i][k]);
    if (d2 <= h * h) s += 1 - d2 / (h * h);
  }
  return s;
}

TEST_CASE("shadow density never drops along a flat-kernel trajectory") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PointSet pts(2);
    for (int i = 0; i < 60; ++i) {
      const double p[2] = {rng.normal(0, 1), rng.normal(0, 1)};
      pts.push(p);
    }
    const auto path = mean_shift_trajectory(pts, pts[trial], 0.8, 100, 1e-6);
    for (std::size_t k = 1; k < path.size(); ++k)
      REQUIRE(shadow_density(pts, path[k].data(), 0.8) >= shadow_density(pts, path[k - 1].data(), 0.8) - 1e-12);
  }
}

TEST_CASE("agglomerative hand trace and singletons") {
  const PointSet p = points_1d({0, 1, 10});
  const auto r = agglomerative(p, AgglomerativeStop{2.0, std::nullopt});
  CHECK(r.labels == std::vector<int>{1, 1, 2});
  CHECK(r.iterations == 1);
  const auto s = agglomerative(p, AgglomerativeStop{std::nullopt, 3});
  CHECK(s.labels == std::vector<int>{1, 2, 3});
  CHECK_THROWS_AS(agglomerative(p, AgglomerativeStop{}), ContractViolation);
}

TEST_CASE("agglomerative merges follow the average-linkage closed form") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.uniform_int(3, 32);
    PointSet pts(2);
    for (int i = 0; i < n; ++i) {
      const double p[2] = {rng.uniform(0, 10), rng.uniform(0, 10)};
      pts.push(p);
    }
    // Brute force: repeatedly merge the pair with the smallest mean pairwise distance.
    const int k = rng.uniform_int(1, n);
    std::vector<std::vector<int>> clusters(n);
    for (int i = 0; i < n; ++i) clusters[i] = {i};
    while (int(clusters.size()) > k) {
      std::size_t bi = 0, bj = 1;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < clusters.size(); ++i)
        for (std::size_t j = i + 1; j < clusters.size(); ++j) {
          const double d = brute_linkage(pts, clusters[i], clusters[j]);
          if (d < best - 1e-12) {
            best = d;
            bi = i;
            bj = j;
          }
        }
      clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
      clusters.erase(clusters.begin() + long(bj));
    }
    const auto r = agglomerative(pts, AgglomerativeStop{std::nullopt, k});
    check_valid(r, pts.size());
    REQUIRE(r.num_clusters() == k);
    std::vector<int> truth(n);
    for (std::size_t c = 0; c < clusters.size(); ++c)
      for (int i : clusters[c]) truth[i] = int(c);
    REQUIRE(same_partition(r.labels, truth));
  }
}

TEST_CASE("thread count resolution") {
  CHECK(resolve_threads(3) == 3);
  setenv("PANSEL_THREADS", "5", 1);
  CHECK(resolve_threads(0) == 5);
  setenv("PANSEL_THREADS", "junk", 1);
  CHECK(resolve_threads(0) == 1);
  unsetenv("PANSEL_THREADS");
  CHECK(resolve_threads(0) == 1);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

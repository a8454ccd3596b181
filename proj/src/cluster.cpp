#include "pansel/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

#include "pansel/common.hpp"
#include "pansel/parallel.hpp"

namespace pansel {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PANSEL_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

double squared_distance(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

int flat_density(const PointSet& pts, const double* x, double bandwidth) {
  const double bw2 = bandwidth * bandwidth;
  int n = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) n += squared_distance(pts[i], x, pts.dim) <= bw2;
  return n;
}

namespace {

struct Trajectory {
  std::vector<double> mode;
  int moves = 0;
};

Trajectory shift_to_mode(const PointSet& pts, const double* start, double bandwidth, int max_iter, double tol,
                         std::vector<std::vector<double>>* path) {
  const int d = pts.dim;
  const double bw2 = bandwidth * bandwidth;
  Trajectory t{std::vector<double>(start, start + d), 0};
  if (path) path->push_back(t.mode);
  std::vector<double> mean(d);
  for (int it = 0; it < max_iter; ++it) {
    std::fill(mean.begin(), mean.end(), 0.0);
    int n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double* p = pts[i];
      if (squared_distance(p, t.mode.data(), d) > bw2) continue;
      for (int k = 0; k < d; ++k) mean[k] += p[k];
      ++n;
    }
    if (n == 0) break;
    double shift2 = 0.0;
    for (int k = 0; k < d; ++k) {
      mean[k] /= n;
      const double m = mean[k] - t.mode[k];
      shift2 += m * m;
    }
    if (std::sqrt(shift2) < tol) break;
    t.mode = mean;
    ++t.moves;
    if (path) path->push_back(t.mode);
  }
  return t;
}

// Orders clusters by their lowest member index and drops empty ones.
ClusterResult canonicalize(const std::vector<int>& raw_labels, int raw_k,
                           const std::vector<std::vector<double>>& raw_centers, int iterations) {
  std::vector<int> first(raw_k, std::numeric_limits<int>::max());
  for (int i = 0; i < int(raw_labels.size()); ++i)
    if (raw_labels[i] > 0) first[raw_labels[i] - 1] = std::min(first[raw_labels[i] - 1], i);
  std::vector<int> order;
  for (int k = 0; k < raw_k; ++k)
    if (first[k] != std::numeric_limits<int>::max()) order.push_back(k);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return first[a] < first[b]; });
  std::vector<int> remap(raw_k, 0);
  ClusterResult r;
  r.iterations = iterations;
  for (std::size_t j = 0; j < order.size(); ++j) {
    remap[order[j]] = int(j) + 1;
    r.centers.push_back(raw_centers[order[j]]);
  }
  r.labels.resize(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size(); ++i) r.labels[i] = raw_labels[i] > 0 ? remap[raw_labels[i] - 1] : 0;
  return r;
}

ClusterResult mean_shift_impl(const PointSet& pts, const MeanShiftOptions& opt, int threads) {
  require(opt.bandwidth > 0.0, "mean_shift: bandwidth must be positive");
  ClusterResult empty;
  if (pts.size() == 0) return empty;
  std::vector<int> seeds = opt.seeds;
  if (seeds.empty()) {
    seeds.resize(pts.size());
    std::iota(seeds.begin(), seeds.end(), 0);
  }
  for (int s : seeds) require(s >= 0 && std::size_t(s) < pts.size(), "mean_shift: seed index out of range");

  std::vector<Trajectory> traj(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t i) {
    traj[i] = shift_to_mode(pts, pts[seeds[i]], opt.bandwidth, opt.max_iter, opt.tol, nullptr);
  });

  // Serial mode coalescing in seed order.
  const double merge2 = 0.25 * opt.bandwidth * opt.bandwidth;
  std::vector<std::vector<double>> modes;
  int iterations = 0;
  for (const auto& t : traj) {
    iterations = std::max(iterations, t.moves);
    bool joined = false;
    for (const auto& m : modes)
      if (squared_distance(m.data(), t.mode.data(), pts.dim) <= merge2) {
        joined = true;
        break;
      }
    if (!joined) modes.push_back(t.mode);
  }

  const double bw2 = opt.bandwidth * opt.bandwidth;
  std::vector<int> labels(pts.size(), 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < modes.size(); ++k) {
      const double d2 = squared_distance(pts[i], modes[k].data(), pts.dim);
      if (d2 < best) {
        best = d2;
        labels[i] = int(k) + 1;
      }
    }
    if (best > bw2) labels[i] = 0;
  }
  return canonicalize(labels, int(modes.size()), modes, iterations);
}

}  // namespace

std::vector<std::vector<double>> mean_shift_trajectory(const PointSet& pts, const double* start, double bandwidth,
                                                       int max_iter, double tol) {
  std::vector<std::vector<double>> path;
  shift_to_mode(pts, start, bandwidth, max_iter, tol, &path);
  return path;
}

ClusterResult mean_shift(const PointSet& pts, const MeanShiftOptions& opt) { return mean_shift_impl(pts, opt, 1); }

ClusterResult merge_and_filter(const ClusterResult& in, const PointSet& pts, double merge_distance, int min_size) {
  const int k = in.num_clusters();
  const int d = pts.dim;
  std::vector<std::vector<double>> means(k, std::vector<double>(d, 0.0));
  std::vector<int> sizes(k, 0);
  for (std::size_t i = 0; i < in.labels.size(); ++i) {
    const int l = in.labels[i];
    if (l == 0) continue;
    ++sizes[l - 1];
    for (int j = 0; j < d; ++j) means[l - 1][j] += pts[i][j];
  }
  for (int a = 0; a < k; ++a)
    if (sizes[a] > 0)
      for (auto& v : means[a]) v /= sizes[a];

  // Union-find over clusters with close means; the root is the lowest index.
  std::vector<int> parent(k);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const double md2 = merge_distance * merge_distance;
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b) {
      if (sizes[a] == 0 || sizes[b] == 0) continue;
      if (squared_distance(means[a].data(), means[b].data(), d) < md2) {
        const int ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
      }
    }

  std::vector<int> raw(in.labels.size(), 0);
  std::vector<int> group_size(k, 0);
  for (std::size_t i = 0; i < in.labels.size(); ++i)
    if (in.labels[i] > 0) {
      raw[i] = find(in.labels[i] - 1) + 1;
      ++group_size[raw[i] - 1];
    }
  std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == 0) continue;
    if (group_size[raw[i] - 1] < min_size) {
      raw[i] = 0;
      continue;
    }
    for (int j = 0; j < d; ++j) centers[raw[i] - 1][j] += pts[i][j];
  }
  for (int a = 0; a < k; ++a)
    if (group_size[a] > 0)
      for (auto& v : centers[a]) v /= group_size[a];
  return canonicalize(raw, k, centers, in.iterations);
}

ClusterResult mean_shift_plus(const PointSet& pts, const MeanShiftOptions& opt, double merge_distance, int min_size) {
  return merge_and_filter(mean_shift_impl(pts, opt, resolve_threads(opt.threads)), pts, merge_distance, min_size);
}

ClusterResult agglomerative(const PointSet& pts, const AgglomerativeStop& stop) {
  require(stop.stop_distance.has_value() != stop.target_k.has_value(),
          "agglomerative: exactly one stopping criterion is required");
  const int n = int(pts.size());
  ClusterResult r;
  if (n == 0) return r;
  if (stop.target_k) require(*stop.target_k >= 1, "agglomerative: target_k must be >= 1");

  std::vector<double> dist(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dist[std::size_t(i) * n + j] = dist[std::size_t(j) * n + i] = std::sqrt(squared_distance(pts[i], pts[j], pts.dim));
  std::vector<int> size(n, 1), owner(n);
  std::iota(owner.begin(), owner.end(), 0);
  std::vector<bool> active(n, true);
  int clusters = n;
  int merges = 0;

  while (clusters > 1) {
    if (stop.target_k && clusters <= *stop.target_k) break;
    int bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (int j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        const double v = dist[std::size_t(i) * n + j];
        if (v < best) {  // strict: earlier (i, j) wins ties
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    if (stop.stop_distance && best > *stop.stop_distance) break;
    for (int x = 0; x < n; ++x) {
      if (!active[x] || x == bi || x == bj) continue;
      const double v = (size[bi] * dist[std::size_t(bi) * n + x] + size[bj] * dist[std::size_t(bj) * n + x]) /
                       double(size[bi] + size[bj]);
      dist[std::size_t(bi) * n + x] = dist[std::size_t(x) * n + bi] = v;
    }
    size[bi] += size[bj];
    active[bj] = false;
    for (auto& o : owner)
      if (o == bj) o = bi;
    --clusters;
    ++merges;
  }

  std::vector<int> raw(n);
  std::vector<std::vector<double>> centers(n, std::vector<double>(pts.dim, 0.0));
  for (int i = 0; i < n; ++i) {
    raw[i] = owner[i] + 1;
    for (int k = 0; k < pts.dim; ++k) centers[owner[i]][k] += pts[i][k] / size[owner[i]];
  }
  return canonicalize(raw, n, centers, merges);
}

}  // namespace pansel

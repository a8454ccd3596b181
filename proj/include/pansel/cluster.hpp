#pragma once

#include <optional>
#include <vector>

namespace pansel {

/// N points of dimension `dim`, stored row-major.
struct PointSet {
  int dim = 0;
  std::vector<double> coords;

  PointSet() = default;
  explicit PointSet(int d) : dim(d) {}
  std::size_t size() const { return dim == 0 ? 0 : coords.size() / std::size_t(dim); }
  const double* operator[](std::size_t i) const { return coords.data() + i * std::size_t(dim); }
  void push(const double* p) { coords.insert(coords.end(), p, p + dim); }
};

double squared_distance(const double* a, const double* b, int dim);

struct ClusterResult {
  std::vector<int> labels;                   // 0 = unassigned, otherwise 1..K
  std::vector<std::vector<double>> centers;  // centers[k - 1] belongs to label k
  int iterations = 0;

  int num_clusters() const { return int(centers.size()); }
};

struct MeanShiftOptions {
  double bandwidth = 0.5;
  int max_iter = 100;
  double tol = 1e-4;
  /// Start points (indices into the point set); empty means every point.
  std::vector<int> seeds;
  int threads = 1;
};

/// Successive iterates x, x + m(x), ... of one flat-kernel trajectory
/// (first entry is the start point).
std::vector<std::vector<double>> mean_shift_trajectory(const PointSet& pts, const double* start, double bandwidth,
                                                       int max_iter, double tol);

/// Number of points within `bandwidth` of x (flat-kernel density, unnormalised).
int flat_density(const PointSet& pts, const double* x, double bandwidth);

/// Flat-kernel mean-shift. Converged modes closer than bandwidth/2 share a
/// cluster; each point takes the nearest mode within bandwidth (else 0).
/// Labels are ordered by the lowest point index in each cluster.
ClusterResult mean_shift(const PointSet& pts, const MeanShiftOptions& opt);

/// Merges clusters whose mean points are closer than `merge_distance`, then
/// unassigns clusters smaller than `min_size`. Centers become cluster means.
ClusterResult merge_and_filter(const ClusterResult& in, const PointSet& pts, double merge_distance, int min_size);

/// Mean-shift with seed trajectories run on `opt.threads` workers, followed
/// by merge_and_filter. Output does not depend on the thread count.
ClusterResult mean_shift_plus(const PointSet& pts, const MeanShiftOptions& opt, double merge_distance, int min_size);

struct AgglomerativeStop {
  std::optional<double> stop_distance;  // merge while closest linkage <= this
  std::optional<int> target_k;          // merge until this many clusters remain
};

/// Weighted-average linkage, d(A u B, X) = (|A| d(A,X) + |B| d(B,X)) / (|A| + |B|)
/// over Euclidean distances. Ties go to the lexicographically smallest
/// (id, id) pair; a merged cluster keeps the smaller id.
ClusterResult agglomerative(const PointSet& pts, const AgglomerativeStop& stop);

}  // namespace pansel

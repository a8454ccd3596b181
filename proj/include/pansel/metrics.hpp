#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pansel/common.hpp"
#include "pansel/fuse.hpp"

namespace pansel {

/// One CSV row: metric, class, value, TP, FP, FN. class == -1 is the mean.
struct MetricRow {
  std::string metric;
  int cls = -1;
  double value = 0.0;
  long tp = 0, fp = 0, fn = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(MetricRow r) { rows.push_back(std::move(r)); }
  void append(const MetricReport& other);
  /// First row for (metric, cls); throws if absent.
  const MetricRow& get(const std::string& metric, int cls = -1) const;
  bool has(const std::string& metric, int cls = -1) const;
  void write_csv(std::ostream& os) const;
};

/// Pixel confusion counts; gt void pixels are skipped.
class IouAccumulator {
 public:
  explicit IouAccumulator(int num_classes);
  void add(const SemanticMask& pred, const SemanticMask& gt);
  /// Per-class IoU = TP / (TP + FP + FN); classes absent from both sides are
  /// left out of the mean. Rows "iou" per class and "miou" for the mean.
  MetricReport report() const;
  double mean() const;
  /// Mean over the given classes only (those present).
  double mean_over(const std::vector<int>& classes) const;

 private:
  int classes_;
  std::vector<long> tp_, fp_, fn_;
};

MetricReport miou(const SemanticMask& pred, const SemanticMask& gt, int num_classes);

/// A matched pair (prediction index, ground-truth index, IoU).
struct Match {
  int pred = 0;
  int gt = 0;
  double iou = 0.0;
};

/// Greedy one-to-one matching: repeatedly takes the unmatched pair with the
/// highest IoU (ties: lowest pred, then gt index) while IoU > threshold.
std::vector<Match> greedy_match(const std::vector<std::vector<double>>& iou, double threshold);

/// Instance precision at IoU 0.5, accumulated per class over images:
/// AP_c = TP_c / (TP_c + FP_c). Classes with neither predictions nor ground
/// truth are left out of the mean. A non-standard "recall" row is also
/// reported for reference.
class ApAccumulator {
 public:
  explicit ApAccumulator(std::vector<int> thing_classes);
  /// Ground-truth instance classes come from the majority gt semantic label.
  void add(const InstanceMask& pred, const std::map<int, int>& pred_class, const InstanceMask& gt,
           const SemanticMask& gt_sem);
  MetricReport report() const;
  double mean() const;

 private:
  std::vector<int> classes_;
  std::map<int, long> tp_, fp_, fn_;
};

/// PQ matching result for one image.
struct Segment {
  int cls = 0;
  int instance = 0;
  long area = 0;
};

struct PanopticMatching {
  std::vector<Segment> pred, gt;
  std::vector<std::vector<double>> iou;  // [pred][gt], 0 across classes
  std::vector<Match> matches;
};

/// Segments are (class, instance) id pairs; gt-void pixels are removed from
/// prediction areas before computing unions. Matches need IoU > 0.5.
PanopticMatching match_segments(const PanopticMask& pred, const PanopticMask& gt);

/// Accumulates SQ/RQ/PQ for every class and PQ-dagger for stuff classes.
class PanopticAccumulator {
 public:
  explicit PanopticAccumulator(LabelSchema schema);
  void add(const PanopticMask& pred, const PanopticMask& gt);
  /// Rows sq/rq/pq per class and mean; pq_dagger for stuff classes; pqplus mean.
  MetricReport report() const;

 private:
  struct ClassStats {
    long tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
    double stuff_iou_sum = 0.0;  // IoU > 0 matches
    long stuff_gt = 0;           // ground-truth stuff segments
    bool seen = false;
  };
  LabelSchema schema_;
  std::map<int, ClassStats> stats_;
};

MetricReport pq(const PanopticMask& pred, const PanopticMask& gt, const LabelSchema& schema);
MetricReport pq_plus(const PanopticMask& pred, const PanopticMask& gt, const LabelSchema& schema);

}  // namespace pansel

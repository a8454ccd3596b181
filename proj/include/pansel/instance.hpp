#pragma once

#include <cstdint>
#include <vector>

#include "pansel/cluster.hpp"
#include "pansel/common.hpp"
#include "pansel/rng.hpp"

namespace pansel {

/// Instance id meaning "not supervised here" (classes outside a workflow split).
inline constexpr std::uint16_t kIgnoreInstance = 65535;

/// Pull/push hinge radii plus the scheduled offset epsilon.
struct MarginParams {
  double delta_v = 0.5;
  double delta_d = 1.5;
  double epsilon = 0.0;

  double effective_v() const { return delta_v + epsilon; }
  double effective_d() const { return delta_d + epsilon; }
  void validate() const;
};

/// epsilon(t) = 0.2 (2 exp(-t / tau) - 1), tau = iters / 3: +0.2 at t = 0
/// decaying toward -0.2.
double epsilon_schedule(int t, int iters);

struct LossWeights {
  double alpha = 1.0;       // pull
  double beta = 1.0;        // push
  double lambda_obj = 1.0;  // object Dice
  double gamma = 1.0;       // unlabelled push
  double delta_cons = 0.1;  // consistency
};

struct InstanceLossTerms {
  double pull = 0.0;
  double push = 0.0;
  double object = 0.0;
  double unlabelled_push = 0.0;
  double consistency = 0.0;

  double total(const LossWeights& w) const {
    return w.alpha * pull + w.beta * push + w.lambda_obj * object + w.gamma * unlabelled_push +
           w.delta_cons * consistency;
  }
};

/// Pixels of every labelled object (ids other than 0 and kIgnoreInstance),
/// in ascending id order, with their mean embeddings.
struct ObjectSet {
  std::vector<int> ids;
  std::vector<std::vector<int>> pixels;
  std::vector<std::vector<double>> means;
  std::vector<int> unlabelled;  // pixels with id 0

  static ObjectSet collect(const Field& emb, const InstanceMask& gt);
};

/// (1/C) sum_k (1/N_k) sum_i [||mu_k - e_i|| - delta_v]_+^2
LossResult pull_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m);
/// 1/(C(C-1)) sum over ordered pairs k != l of [2 delta_d - ||mu_k - mu_l||]_+^2
LossResult push_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m);
/// (1/C) sum_k (1/N_U) sum_{i in U} [delta_d - ||mu_k - e_i||]_+^2, U = pixels with id 0.
LossResult unlabelled_push_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m);

/// Gaussian kernel width with S = 0.5 at distance delta_v.
double soft_mask_sigma(const MarginParams& m);
/// S(i) = exp(-||e_i - anchor||^2 / (2 sigma^2)).
Raster<double> soft_mask(const Field& emb, const std::vector<double>& anchor, const MarginParams& m);

/// D = 1 - 2 sum(pq) / (sum p^2 + sum q^2); 0 when both are empty.
/// `dp` (optional) receives dD/dp.
double dice_distance(const std::vector<double>& p, const std::vector<double>& q, std::vector<double>* dp = nullptr);

/// Anchors of one object: each anchor embedding is the mean of the listed pixels.
struct ObjectAnchors {
  int object_id = 0;
  std::vector<std::vector<int>> anchors;
};

/// Per object: K = ceil(area / 256) clamped to [1, 8] anchors, each built
/// from 5 pixels drawn uniformly (with replacement) inside the object.
std::vector<ObjectAnchors> sample_object_anchors(const InstanceMask& gt, Rng& rng);

/// (1/C) sum_k mean over anchors a of D(S_{k,a}, I_k); gradients flow through
/// both the mask pixels and the anchor embeddings.
LossResult dice_object_loss(const Field& emb, const InstanceMask& gt, const std::vector<ObjectAnchors>& anchors,
                            const MarginParams& m);

/// Greedy anchors over `region` (visited in the given order): a pixel becomes
/// an anchor when no earlier anchor's student mask reaches 0.5 there.
std::vector<int> covering_anchors(const Field& student, const std::vector<int>& region, const MarginParams& m,
                                  int max_anchors = 16);

/// (1/K) sum_k D(S_k^f, S_k^g) with the anchor vector taken from the student
/// field f at each anchor pixel. The teacher side g is a constant.
LossResult consistency_loss(const Field& student, const Field& teacher, const std::vector<int>& anchor_pixels,
                            const MarginParams& m);

struct InstanceLoss {
  InstanceLossTerms terms;
  double total = 0.0;
  Field grad;
};

/// Weighted sum of all five terms. The consistency term is skipped when
/// `teacher` is null, `cons_anchors` is empty or delta_cons is 0.
InstanceLoss instance_total_loss(const Field& emb, const InstanceMask& gt, const std::vector<ObjectAnchors>& anchors,
                                 const Field* teacher, const std::vector<int>& cons_anchors, const MarginParams& m,
                                 const LossWeights& w);

struct InstancePseudoLabels {
  InstanceMask mask;
  std::vector<int> classes;                // classes[id - 1]
  std::vector<std::vector<double>> means;  // means[id - 1]
  std::vector<double> stability;           // best IoU against the second clustering run

  int count() const { return int(classes.size()); }
};

struct PseudoLabelConfig {
  int min_size = 9;
  double bandwidth = 0.5;
  double delta_d = 1.5;
  int max_seeds = 64;
  double stability_iou = 0.9;
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<int> classes;  // thing classes to label; empty means all thing classes
};

/// Clusters embeddings inside each thing-class region of `sem` and stitches
/// the per-class instances into one id space (ascending class id).
InstancePseudoLabels gen_instance_pseudo_labels(const Field& emb, const SemanticMask& sem,
                                                const PseudoLabelConfig& cfg);

}  // namespace pansel

#pragma once

#include <functional>
#include <map>
#include <vector>

#include "pansel/augment.hpp"
#include "pansel/common.hpp"
#include "pansel/nn/unet.hpp"
#include "pansel/rng.hpp"

namespace pansel {

/// Exponentially averaged per-class predicted mass.
struct ClassPrior {
  std::vector<double> chi;
  double momentum = 0.99;

  static ClassPrior uniform(int num_classes, double momentum = 0.99);
};

/// Semantic pseudo-labels: void (255) where confidence is under the class threshold.
struct PseudoLabelMask {
  SemanticMask labels;
  Raster<float> confidence;
  std::vector<double> thresholds;  // NaN for classes with no argmax pixels
};

/// Adaptive per-class threshold:
///   thresh_c = min(max(quantile_q(conf_c), floor), cap * (chi_c / max chi)^rare_exponent)
/// Rare classes (small chi) get a lower cap and hence a lower threshold.
struct ThresholdRule {
  double quantile = 0.5;
  double floor = 0.5;
  double cap = 0.9;
  double rare_exponent = 0.5;
};

struct FusionConfig {
  std::vector<double> crop_scales{0.7, 1.0};
  bool flips = true;
  int samples = 4;
};

/// Mean of -log softmax(logits)[gt] over non-void pixels; gradient w.r.t. logits.
LossResult cross_entropy_loss(const Field& logits, const SemanticMask& gt);

/// Crop/flip records used by the fusion: the full canvas first, then its
/// mirror (when flips are on), then random crops at the configured scales.
std::vector<AugmentationRecord> fusion_records(int width, int height, const FusionConfig& fc, Rng& rng);

/// Per-pixel mean of the teacher's softmax maps re-projected from each record.
template <typename T>
ProbField fuse_teacher_predictions(const nn::UNet<T>& net, const nn::ParamStore<T>& teacher, const Image& img,
                                   const FusionConfig& fc, Rng& rng);

/// Same averaging with an arbitrary per-view predictor; used by the fusion
/// itself and by tests with hand-built maps.
ProbField fuse_views(const Image& img, const std::vector<AugmentationRecord>& records,
                     const std::function<ProbField(const Image&)>& predict);

/// chi_c <- momentum * chi_c + (1 - momentum) * mean_pixels(probs_c)
void update_class_prior(ClassPrior& prior, const ProbField& teacher_probs);

/// q-quantile using the "higher" rule: sorted[ceil(q * (n - 1))].
double higher_quantile(std::vector<double> values, double q);

PseudoLabelMask gen_pseudo_labels(const ProbField& fused, const ClassPrior& prior, const ThresholdRule& rule = {});

/// Mean over non-void pixels of -m_{c*} (1 - chi_{c*})^lambda log(mbar_{c*}),
/// mbar = softmax(student_logits), m = teacher probabilities, c* = pseudo-label.
/// Gradient w.r.t. the student logits.
LossResult focal_loss(const Field& student_logits, const SemanticMask& pseudo, const ProbField& teacher_probs,
                      const ClassPrior& prior, double lambda = 3.0);

/// Overwrites pixels of every listed instance with that instance's class.
/// Instances missing from `class_of` are skipped; `skipped` (optional) counts them.
PseudoLabelMask improve_with_instance_masks(const PseudoLabelMask& pseudo, const InstanceMask& inst,
                                            const std::map<int, int>& class_of, int* skipped = nullptr);

/// Per-pixel argmax.
SemanticMask argmax_labels(const ProbField& probs);

}  // namespace pansel

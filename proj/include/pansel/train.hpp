#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "pansel/augment.hpp"
#include "pansel/instance.hpp"
#include "pansel/nn/params.hpp"
#include "pansel/nn/unet.hpp"
#include "pansel/scenegen.hpp"
#include "pansel/semantic.hpp"

namespace pansel {

struct SemanticTrainConfig {
  int iters = 0;
  int batch = 4;          // source images per baseline step
  int source_batch = 2;   // self-train: labelled source images per step
  int target_batch = 2;   // self-train: unlabelled target images per step
  nn::SgdConfig sgd;
  JitterConfig jitter;
  FusionConfig fusion;
  ThresholdRule threshold;
  double prior_momentum = 0.99;
  double focal_lambda = 3.0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::ostream* log = nullptr;  // per-iteration CSV

  /// Instance masks superimposed on the pseudo-labels of target image i.
  const std::vector<InstanceMask>* guide_instances = nullptr;
  const std::vector<std::map<int, int>>* guide_classes = nullptr;
  /// Replaces the fused teacher output of target image i.
  const std::vector<ProbField>* oracle_teacher = nullptr;
};

void train_semantic_baseline(const nn::UNet<float>& net, nn::ParamStore<float>& params,
                             const std::vector<Scene>& source, const SemanticTrainConfig& cfg);

/// Joint source cross-entropy and target focal training against the fused,
/// thresholded teacher predictions. The teacher follows the student by EMA.
void selftrain_semantic(const nn::UNet<float>& net, nn::ParamStore<float>& student,
                        nn::TeacherStore<float>& teacher, const std::vector<Scene>& source,
                        const std::vector<Image>& target, const SemanticTrainConfig& cfg);

/// Softmax maps with all mass on the ground-truth class.
ProbField one_hot_probs(const SemanticMask& gt, int num_classes);

enum class Workflow { all, icm, base, ccm };
const char* to_string(Workflow w);
Workflow parse_workflow(const std::string& s);

/// One independently trained instance model and the thing classes it owns.
struct WorkflowSplit {
  std::string name;
  std::vector<int> classes;
  bool own_baseline = false;  // trains its own baseline instead of sharing one
};

/// ALL: one run over every thing class. ICM: one run per class. BASE: category
/// runs (vehicle = car + bike, human = person) from a shared baseline. CCM:
/// the same categories, each with its own baseline.
std::vector<WorkflowSplit> workflow_splits(Workflow w, const std::vector<int>& class_set = {});

/// Ground-truth instances of classes outside `classes` become kIgnoreInstance.
InstanceMask restrict_instances(const InstanceMask& inst, const SemanticMask& sem, const std::vector<int>& classes);

struct InstanceTrainConfig {
  int iters = 0;
  int batch = 4;
  int mix_percent = 0;        // share of each self-train batch drawn from labelled source
  std::vector<int> classes;   // thing classes this run owns
  MarginParams margins;
  LossWeights weights;
  bool epsilon_schedule = true;
  nn::SgdConfig sgd;
  JitterConfig jitter;
  PseudoLabelConfig pseudo;
  std::uint64_t seed = 0;
  int threads = 1;
  std::ostream* log = nullptr;
};

struct InstanceSelfTrainStats {
  long true_positives = 0;   // pseudo instances matching held-out ground truth
  long false_positives = 0;
  long empty_pseudo = 0;     // target images whose pseudo-labels were empty
};

void train_instance_baseline(const nn::UNet<float>& net, nn::ParamStore<float>& params,
                             const std::vector<Scene>& source, const InstanceTrainConfig& cfg);

/// `target_sem` guides clustering; `target_gt` (optional) is used only for the
/// TP/FP log columns and never reaches the loss.
InstanceSelfTrainStats selftrain_instance(const nn::UNet<float>& net, nn::ParamStore<float>& student,
                                          nn::TeacherStore<float>& teacher, const std::vector<Scene>& source,
                                          const std::vector<Image>& target,
                                          const std::vector<SemanticMask>& target_sem,
                                          const std::vector<Scene>* target_gt, const InstanceTrainConfig& cfg);

/// Instance pseudo-label mask as used for training: pseudo ids inside their
/// instances, kIgnoreInstance on every other thing or void pixel, 0 elsewhere.
InstanceMask training_mask(const InstancePseudoLabels& pl, const SemanticMask& sem);

/// Counts pseudo instances that match a ground-truth instance of the same
/// class at IoU > 0.5.
std::pair<long, long> count_pseudo_matches(const InstancePseudoLabels& pl, const Scene& gt);

}  // namespace pansel

#pragma once

#include <map>
#include <vector>

#include "pansel/fuse.hpp"
#include "pansel/instance.hpp"
#include "pansel/nn/unet.hpp"

namespace pansel {

/// An instance model and the thing classes whose embeddings it provides.
struct InstanceModel {
  std::vector<int> classes;
  const nn::ParamStore<float>* params = nullptr;
};

struct InferenceConfig {
  PseudoLabelConfig clustering;  // classes field is ignored; models decide
  bool morphology = true;
  int open_radius = 1;
  int close_radius = 1;
};

struct InferenceResult {
  SemanticMask semantic;
  InstanceMask instance;
  std::map<int, int> class_of;
  PanopticMask panoptic;
};

/// Argmax semantic prediction.
SemanticMask predict_semantic(const nn::UNet<float>& net, const nn::ParamStore<float>& params, const Image& img);

/// Clusters each model's embeddings inside the predicted regions of its classes.
InstancePseudoLabels predict_instances(const nn::UNet<float>& net, const std::vector<InstanceModel>& models,
                                       const Image& img, const SemanticMask& sem, const PseudoLabelConfig& cfg);

/// Relabel, optional morphology and panoptic fusion of given predictions.
InferenceResult assemble_panoptic(const SemanticMask& sem, const InstanceMask& inst, const InferenceConfig& cfg);

InferenceResult infer_image(const nn::UNet<float>& sem_net, const nn::ParamStore<float>& sem_params,
                            const nn::UNet<float>& inst_net, const std::vector<InstanceModel>& models,
                            const Image& img, const InferenceConfig& cfg);

}  // namespace pansel

#include "pansel/infer.hpp"

#include <algorithm>

#include "pansel/semantic.hpp"

namespace pansel {

SemanticMask predict_semantic(const nn::UNet<float>& net, const nn::ParamStore<float>& params, const Image& img) {
  return argmax_labels(net.forward(params, img, nn::Head::semantic));
}

InstancePseudoLabels predict_instances(const nn::UNet<float>& net, const std::vector<InstanceModel>& models,
                                       const Image& img, const SemanticMask& sem, const PseudoLabelConfig& cfg) {
  InstancePseudoLabels out;
  out.mask = InstanceMask(img.width, img.height);
  // Class order decides ids; walk classes ascending whichever model owns them.
  std::vector<std::pair<int, const InstanceModel*>> owners;
  for (const auto& m : models)
    for (int c : m.classes) owners.emplace_back(c, &m);
  std::sort(owners.begin(), owners.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::map<const InstanceModel*, Field> emb;
  for (const auto& [c, m] : owners) {
    auto it = emb.find(m);
    if (it == emb.end()) it = emb.emplace(m, net.forward(*m->params, img, nn::Head::embedding)).first;
    PseudoLabelConfig pc = cfg;
    pc.classes = {c};
    pc.seed = mix_seed(cfg.seed, std::uint64_t(c));
    const InstancePseudoLabels part = gen_instance_pseudo_labels(it->second, sem, pc);
    const int offset = out.count();
    for (std::size_t p = 0; p < part.mask.size(); ++p)
      if (part.mask.data[p] != 0) out.mask.data[p] = std::uint16_t(part.mask.data[p] + offset);
    out.classes.insert(out.classes.end(), part.classes.begin(), part.classes.end());
    out.means.insert(out.means.end(), part.means.begin(), part.means.end());
    out.stability.insert(out.stability.end(), part.stability.begin(), part.stability.end());
  }
  return out;
}

InferenceResult assemble_panoptic(const SemanticMask& sem, const InstanceMask& inst, const InferenceConfig& cfg) {
  InferenceResult r;
  r.semantic = sem;
  RelabeledInstances rel = bincount_relabel(inst, sem);
  if (cfg.morphology) {
    const InstanceMask cleaned = morphological_cleanup(rel.mask, cfg.open_radius, cfg.close_radius);
    std::map<int, int> kept;
    for (auto v : cleaned.data)
      if (v != 0) kept[v] = rel.class_of.at(v);
    rel.mask = cleaned;
    rel.class_of = kept;
  }
  r.instance = rel.mask;
  r.class_of = rel.class_of;
  r.panoptic = fuse_panoptic(sem, r.instance, r.class_of);
  return r;
}

InferenceResult infer_image(const nn::UNet<float>& sem_net, const nn::ParamStore<float>& sem_params,
                            const nn::UNet<float>& inst_net, const std::vector<InstanceModel>& models,
                            const Image& img, const InferenceConfig& cfg) {
  const SemanticMask sem = predict_semantic(sem_net, sem_params, img);
  const InstancePseudoLabels inst = predict_instances(inst_net, models, img, sem, cfg.clustering);
  return assemble_panoptic(sem, inst.mask, cfg);
}

}  // namespace pansel

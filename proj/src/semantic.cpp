#include "pansel/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pansel/nn/ops.hpp"

namespace pansel {

ClassPrior ClassPrior::uniform(int num_classes, double momentum) {
  return {std::vector<double>(num_classes, 1.0 / num_classes), momentum};
}

namespace {

void check_labels(const Field& f, const SemanticMask& m, const char* who) {
  if (f.width != m.width || f.height != m.height)
    throw ContractViolation(std::string(who) + ": field and mask sizes differ");
  for (auto v : m.data)
    if (v != schema::kVoid && int(v) >= f.channels)
      throw ContractViolation(std::string(who) + ": label " + std::to_string(int(v)) + " outside [0, C)");
}

// log softmax at one pixel for class c, plus the softmax vector.
double log_softmax_at(const Field& logits, std::size_t p, int c, std::vector<double>& probs) {
  double m = logits.at(0, p);
  for (int k = 1; k < logits.channels; ++k) m = std::max(m, logits.at(k, p));
  double z = 0.0;
  for (int k = 0; k < logits.channels; ++k) z += probs[k] = std::exp(logits.at(k, p) - m);
  for (int k = 0; k < logits.channels; ++k) probs[k] /= z;
  return logits.at(c, p) - m - std::log(z);
}

}  // namespace

LossResult cross_entropy_loss(const Field& logits, const SemanticMask& gt) {
  check_labels(logits, gt, "cross_entropy_loss");
  LossResult r{0.0, Field(logits.channels, logits.height, logits.width)};
  std::size_t n = 0;
  for (auto v : gt.data) n += v != schema::kVoid;
  if (n == 0) return r;
  std::vector<double> probs(logits.channels);
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const int t = gt.data[p];
    if (t == schema::kVoid) continue;
    r.value -= log_softmax_at(logits, p, t, probs);
    for (int k = 0; k < logits.channels; ++k) r.grad.at(k, p) = (probs[k] - (k == t)) / double(n);
  }
  r.value /= double(n);
  return r;
}

std::vector<AugmentationRecord> fusion_records(int width, int height, const FusionConfig& fc, Rng& rng) {
  require(fc.samples >= 1, "FusionConfig: samples must be >= 1");
  require(!fc.crop_scales.empty(), "FusionConfig: need at least one crop scale");
  std::vector<AugmentationRecord> out;
  out.push_back(AugmentationRecord::identity(width, height));
  if (fc.flips && fc.samples >= 2) {
    auto r = AugmentationRecord::identity(width, height);
    r.flip = true;
    out.push_back(r);
  }
  while (int(out.size()) < fc.samples) {
    const double s = fc.crop_scales[rng.uniform_int(0, int(fc.crop_scales.size()) - 1)];
    const int cw = std::clamp(int(std::lround(s * width)), 1, width);
    const int ch = std::clamp(int(std::lround(s * height)), 1, height);
    AugmentationRecord r;
    r.crop = {rng.uniform_int(0, width - cw), rng.uniform_int(0, height - ch), cw, ch};
    r.scale = double(width) / cw;
    r.flip = fc.flips && rng.bernoulli(0.5);
    out.push_back(r);
  }
  return out;
}

ProbField fuse_views(const Image& img, const std::vector<AugmentationRecord>& records,
                     const std::function<ProbField(const Image&)>& predict) {
  require(!records.empty(), "fuse_views: no views");
  CanvasAverager avg(0, img.width, img.height);
  bool first = true;
  for (const auto& rec : records) {
    const ProbField probs = predict(apply(img, rec));
    if (first) {
      avg = CanvasAverager(probs.channels, img.width, img.height);
      first = false;
    }
    avg.add(invert_spatial(probs, rec, img.width, img.height));
  }
  for (int c : avg.counts().data)
    if (c == 0) throw ContractViolation("fuse_views: views do not cover the canvas");
  return avg.mean();
}

template <typename T>
ProbField fuse_teacher_predictions(const nn::UNet<T>& net, const nn::ParamStore<T>& teacher, const Image& img,
                                   const FusionConfig& fc, Rng& rng) {
  const auto records = fusion_records(img.width, img.height, fc, rng);
  return fuse_views(img, records, [&](const Image& view) { return net.predict_probs(teacher, view); });
}

template ProbField fuse_teacher_predictions<float>(const nn::UNet<float>&, const nn::ParamStore<float>&,
                                                   const Image&, const FusionConfig&, Rng&);
template ProbField fuse_teacher_predictions<double>(const nn::UNet<double>&, const nn::ParamStore<double>&,
                                                    const Image&, const FusionConfig&, Rng&);

void update_class_prior(ClassPrior& prior, const ProbField& teacher_probs) {
  require(int(prior.chi.size()) == teacher_probs.channels, "update_class_prior: class count mismatch");
  const std::size_t plane = teacher_probs.plane();
  for (int c = 0; c < teacher_probs.channels; ++c) {
    double mass = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mass += teacher_probs.at(c, p);
    mass /= double(plane);
    const double v = prior.momentum * prior.chi[c] + (1.0 - prior.momentum) * mass;
    prior.chi[c] = std::clamp(v, 0.0, 1.0);
  }
}

double higher_quantile(std::vector<double> values, double q) {
  require(!values.empty(), "higher_quantile: empty input");
  std::sort(values.begin(), values.end());
  const auto idx = std::size_t(std::ceil(q * double(values.size() - 1) - 1e-12));
  return values[std::min(idx, values.size() - 1)];
}

PseudoLabelMask gen_pseudo_labels(const ProbField& fused, const ClassPrior& prior, const ThresholdRule& rule) {
  require(int(prior.chi.size()) == fused.channels, "gen_pseudo_labels: class count mismatch");
  const std::size_t plane = fused.plane();
  PseudoLabelMask out{SemanticMask(fused.width, fused.height), Raster<float>(fused.width, fused.height),
                      std::vector<double>(fused.channels, std::numeric_limits<double>::quiet_NaN())};
  std::vector<std::vector<double>> per_class(fused.channels);
  std::vector<double> conf(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int c = 1; c < fused.channels; ++c)
      if (fused.at(c, p) > fused.at(best, p)) best = c;
    out.labels.data[p] = std::uint8_t(best);
    conf[p] = fused.at(best, p);
    out.confidence.data[p] = float(conf[p]);
    per_class[best].push_back(conf[p]);
  }
  const double chi_max = *std::max_element(prior.chi.begin(), prior.chi.end());
  for (int c = 0; c < fused.channels; ++c) {
    if (per_class[c].empty()) continue;
    const double rel = chi_max > 0.0 ? prior.chi[c] / chi_max : 1.0;
    const double cap = rule.cap * std::pow(std::clamp(rel, 0.0, 1.0), rule.rare_exponent);
    out.thresholds[c] = std::min(std::max(higher_quantile(per_class[c], rule.quantile), rule.floor), cap);
  }
  for (std::size_t p = 0; p < plane; ++p)
    if (conf[p] < out.thresholds[out.labels.data[p]]) out.labels.data[p] = schema::kVoid;
  return out;
}

LossResult focal_loss(const Field& student_logits, const SemanticMask& pseudo, const ProbField& teacher_probs,
                      const ClassPrior& prior, double lambda) {
  check_labels(student_logits, pseudo, "focal_loss");
  require(student_logits.same_shape(teacher_probs), "focal_loss: teacher/student shape mismatch");
  require(int(prior.chi.size()) == student_logits.channels, "focal_loss: prior size mismatch");
  LossResult r{0.0, Field(student_logits.channels, student_logits.height, student_logits.width)};
  std::size_t n = 0;
  for (auto v : pseudo.data) n += v != schema::kVoid;
  if (n == 0) return r;
  std::vector<double> probs(student_logits.channels);
  for (std::size_t p = 0; p < pseudo.size(); ++p) {
    const int c = pseudo.data[p];
    if (c == schema::kVoid) continue;
    const double w = teacher_probs.at(c, p) * std::pow(1.0 - prior.chi[c], lambda);
    r.value -= w * log_softmax_at(student_logits, p, c, probs);
    for (int k = 0; k < student_logits.channels; ++k) r.grad.at(k, p) = w * (probs[k] - (k == c)) / double(n);
  }
  r.value /= double(n);
  return r;
}

PseudoLabelMask improve_with_instance_masks(const PseudoLabelMask& pseudo, const InstanceMask& inst,
                                            const std::map<int, int>& class_of, int* skipped) {
  require(pseudo.labels.same_shape(inst), "improve_with_instance_masks: shape mismatch");
  PseudoLabelMask out = pseudo;
  std::map<int, bool> missing;
  for (std::size_t p = 0; p < inst.size(); ++p) {
    const int id = inst.data[p];
    if (id == 0) continue;
    const auto it = class_of.find(id);
    if (it == class_of.end()) {
      missing[id] = true;
      continue;
    }
    out.labels.data[p] = std::uint8_t(it->second);
  }
  if (skipped) *skipped = int(missing.size());
  return out;
}

SemanticMask argmax_labels(const ProbField& probs) {
  SemanticMask out(probs.width, probs.height);
  for (std::size_t p = 0; p < probs.plane(); ++p) {
    int best = 0;
    for (int c = 1; c < probs.channels; ++c)
      if (probs.at(c, p) > probs.at(best, p)) best = c;
    out.data[p] = std::uint8_t(best);
  }
  return out;
}

}  // namespace pansel

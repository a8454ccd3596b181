#include <algorithm>
#include <cmath>
#include <ostream>

#include "pansel/metrics.hpp"
#include "pansel/parallel.hpp"
#include "pansel/train.hpp"

namespace pansel {

namespace {

using nn::Gradients;
using nn::Head;
using nn::ParamStore;
using nn::UNet;

struct ImageGrad {
  Gradients<float> grads;
  InstanceLossTerms terms;
  double loss = 0.0;
};

// Teacher embeddings of `view` computed on a quarter-turned copy and turned back.
Field rotated_teacher_embedding(const UNet<float>& net, const ParamStore<float>& teacher, const Image& view,
                                int turns) {
  AugmentationRecord rot = AugmentationRecord::identity(view.width, view.height);
  rot.rotation_quarter_turns = turns;
  const Field emb = net.forward(teacher, apply(view, rot), Head::embedding);
  return invert_spatial(emb, rot, view.width, view.height).field;
}

ImageGrad instance_grad(const UNet<float>& net, const ParamStore<float>& params, const ParamStore<float>* teacher,
                        const Image& img, const InstanceMask& labels, const MarginParams& m, const LossWeights& w,
                        const JitterConfig& jitter, Rng& rng) {
  const AugmentationRecord rec = random_record(rng, img.width, img.height, jitter);
  const Image view = apply(img, rec);
  const InstanceMask gt = apply_labels(labels, rec);
  const auto anchors = sample_object_anchors(gt, rng);

  typename UNet<float>::Trace trace;
  const Field emb = net.forward(params, view, Head::embedding, &trace);

  Field teacher_emb;
  std::vector<int> cons_anchors;
  if (teacher && w.delta_cons != 0.0) {
    AugmentationRecord spatial = rec;
    spatial.photometric = Photometric{};
    teacher_emb = rotated_teacher_embedding(net, *teacher, apply(img, spatial), rng.uniform_int(1, 3));
    std::vector<int> region;
    for (int p = 0; p < int(gt.size()); ++p)
      if (gt.data[p] != 0 && gt.data[p] != kIgnoreInstance) region.push_back(p);
    std::shuffle(region.begin(), region.end(), rng.engine());
    cons_anchors = covering_anchors(emb, region, m);
  }
  const InstanceLoss loss =
      instance_total_loss(emb, gt, anchors, teacher ? &teacher_emb : nullptr, cons_anchors, m, w);
  ImageGrad out{Gradients<float>::zeros_like(params), loss.terms, loss.total};
  net.backward(params, trace, Head::embedding, loss.grad, out.grads);
  return out;
}

void write_header(std::ostream* log, bool selftrain) {
  if (!log) return;
  *log << "iter,loss,pull,push,object,unlabelled_push,consistency,epsilon";
  if (selftrain) *log << ",pseudo_tp,pseudo_fp,empty_pseudo";
  *log << '\n';
}

void write_terms(std::ostream* log, int it, double loss, const InstanceLossTerms& t, double eps) {
  *log << it << ',' << loss << ',' << t.pull << ',' << t.push << ',' << t.object << ',' << t.unlabelled_push << ','
       << t.consistency << ',' << eps;
}

InstanceLossTerms mean_terms(const std::vector<ImageGrad>& parts) {
  InstanceLossTerms t;
  if (parts.empty()) return t;
  for (const auto& p : parts) {
    t.pull += p.terms.pull;
    t.push += p.terms.push;
    t.object += p.terms.object;
    t.unlabelled_push += p.terms.unlabelled_push;
    t.consistency += p.terms.consistency;
  }
  const double n = double(parts.size());
  t.pull /= n;
  t.push /= n;
  t.object /= n;
  t.unlabelled_push /= n;
  t.consistency /= n;
  return t;
}

std::vector<int> owned_classes(const std::vector<int>& classes) {
  if (!classes.empty()) return classes;
  std::vector<int> all;
  for (int c = 0; c < schema::kNumClasses; ++c)
    if (schema::is_thing(c)) all.push_back(c);
  return all;
}

}  // namespace

const char* to_string(Workflow w) {
  switch (w) {
    case Workflow::all: return "all";
    case Workflow::icm: return "icm";
    case Workflow::base: return "base";
    case Workflow::ccm: return "ccm";
  }
  return "?";
}

Workflow parse_workflow(const std::string& s) {
  if (s == "all") return Workflow::all;
  if (s == "icm") return Workflow::icm;
  if (s == "base") return Workflow::base;
  if (s == "ccm") return Workflow::ccm;
  throw ConfigError("unknown workflow '" + s + "' (expected all|icm|base|ccm)");
}

std::vector<WorkflowSplit> workflow_splits(Workflow w, const std::vector<int>& class_set) {
  auto keep = [&](std::vector<int> v) {
    if (class_set.empty()) return v;
    std::vector<int> out;
    for (int c : v)
      if (std::find(class_set.begin(), class_set.end(), c) != class_set.end()) out.push_back(c);
    return out;
  };
  std::vector<WorkflowSplit> out;
  const std::vector<int> things = keep({schema::kCar, schema::kPerson, schema::kBike});
  switch (w) {
    case Workflow::all:
      out.push_back({"all", things, false});
      break;
    case Workflow::icm:
      for (int c : things) out.push_back({schema::class_name(c), {c}, false});
      break;
    case Workflow::base:
    case Workflow::ccm: {
      const bool own = w == Workflow::ccm;
      auto vehicle = keep({schema::kCar, schema::kBike});
      auto human = keep({schema::kPerson});
      if (!vehicle.empty()) out.push_back({"vehicle", vehicle, own});
      if (!human.empty()) out.push_back({"human", human, own});
      break;
    }
  }
  if (out.empty() || out.front().classes.empty()) throw ConfigError("workflow selects no thing classes");
  return out;
}

InstanceMask restrict_instances(const InstanceMask& inst, const SemanticMask& sem, const std::vector<int>& classes) {
  require(inst.same_shape(sem), "restrict_instances: shape mismatch");
  const auto owned = owned_classes(classes);
  InstanceMask out = inst;
  for (std::size_t p = 0; p < inst.size(); ++p) {
    const int c = sem.data[p];
    if (schema::is_thing(c) && std::find(owned.begin(), owned.end(), c) == owned.end())
      out.data[p] = kIgnoreInstance;
  }
  return out;
}

InstanceMask training_mask(const InstancePseudoLabels& pl, const SemanticMask& sem) {
  require(pl.mask.same_shape(sem), "training_mask: shape mismatch");
  InstanceMask out(sem.width, sem.height);
  for (std::size_t p = 0; p < sem.size(); ++p) {
    if (pl.mask.data[p] != 0)
      out.data[p] = pl.mask.data[p];
    else if (schema::is_thing(sem.data[p]) || sem.data[p] == schema::kVoid)
      out.data[p] = kIgnoreInstance;
  }
  return out;
}

std::pair<long, long> count_pseudo_matches(const InstancePseudoLabels& pl, const Scene& gt) {
  ApAccumulator acc({schema::kCar, schema::kPerson, schema::kBike});
  std::map<int, int> cls;
  for (int i = 0; i < pl.count(); ++i) cls[i + 1] = pl.classes[i];
  acc.add(pl.mask, cls, gt.instance, gt.semantic);
  const auto& row = acc.report().get("map50");
  return {row.tp, row.fp};
}

void train_instance_baseline(const UNet<float>& net, ParamStore<float>& params, const std::vector<Scene>& source,
                             const InstanceTrainConfig& cfg) {
  if (cfg.iters <= 0) return;
  require(!source.empty(), "train_instance_baseline: empty source set");
  cfg.margins.validate();
  const int threads = resolve_threads(cfg.threads);
  nn::Sgd<float> sgd(cfg.sgd);
  LossWeights w = cfg.weights;
  w.delta_cons = 0.0;
  std::vector<InstanceMask> labels;
  for (const auto& s : source) labels.push_back(restrict_instances(s.instance, s.semantic, cfg.classes));
  write_header(cfg.log, false);
  for (int it = 1; it <= cfg.iters; ++it) {
    MarginParams m = cfg.margins;
    if (cfg.epsilon_schedule) m.epsilon = epsilon_schedule(it - 1, cfg.iters);
    const std::uint64_t iter_seed = mix_seed(cfg.seed, std::uint64_t(it));
    Rng pick(iter_seed);
    std::vector<int> idx(cfg.batch);
    for (auto& i : idx) i = pick.uniform_int(0, int(source.size()) - 1);
    std::vector<ImageGrad> parts(idx.size());
    parallel_for(idx.size(), threads, [&](std::size_t b) {
      Rng rng(mix_seed(iter_seed, b + 1));
      parts[b] = instance_grad(net, params, nullptr, source[idx[b]].image, labels[idx[b]], m, w, cfg.jitter, rng);
    });
    auto total = Gradients<float>::zeros_like(params);
    double loss = 0.0;
    for (const auto& p : parts) {
      total.add(p.grads, 1.0f / float(parts.size()));
      loss += p.loss / double(parts.size());
    }
    if (!std::isfinite(loss)) throw NumericalError("instance baseline loss diverged at iteration " + std::to_string(it));
    sgd.config().lr = nn::scheduled_lr(cfg.sgd, it, cfg.iters);
    sgd.step(params, total);
    if (cfg.log) {
      write_terms(cfg.log, it, loss, mean_terms(parts), m.epsilon);
      *cfg.log << std::endl;
    }
  }
}

InstanceSelfTrainStats selftrain_instance(const UNet<float>& net, ParamStore<float>& student,
                                          nn::TeacherStore<float>& teacher, const std::vector<Scene>& source,
                                          const std::vector<Image>& target,
                                          const std::vector<SemanticMask>& target_sem,
                                          const std::vector<Scene>* target_gt, const InstanceTrainConfig& cfg) {
  InstanceSelfTrainStats stats;
  if (cfg.iters <= 0) return stats;
  require(target.size() == target_sem.size(), "selftrain_instance: target/semantic size mismatch");
  require(!target_gt || target_gt->size() == target.size(), "selftrain_instance: target ground truth size mismatch");
  require(cfg.mix_percent >= 0 && cfg.mix_percent <= 100, "selftrain_instance: mix percent out of range");
  require(student.same_layout(teacher.params), "selftrain_instance: teacher layout differs from student");
  cfg.margins.validate();
  const int threads = resolve_threads(cfg.threads);
  const auto classes = owned_classes(cfg.classes);
  nn::Sgd<float> sgd(cfg.sgd);
  std::vector<InstanceMask> source_labels;
  for (const auto& s : source) source_labels.push_back(restrict_instances(s.instance, s.semantic, classes));
  const int n_source = source.empty() ? 0 : int(std::lround(cfg.batch * cfg.mix_percent / 100.0));
  const int n_target = target.empty() ? 0 : cfg.batch - n_source;
  require(n_source + n_target > 0, "selftrain_instance: empty batch");

  // Pseudo-labels depend only on the teacher; refresh them per EMA tick.
  std::vector<InstanceMask> pseudo(target.size());
  std::vector<std::pair<long, long>> pseudo_tpfp(target.size());
  std::vector<int> pseudo_count(target.size(), 0);
  std::vector<long> pseudo_tick(target.size(), -1);
  long tick = 0;
  write_header(cfg.log, true);

  for (int it = 1; it <= cfg.iters; ++it) {
    MarginParams m = cfg.margins;
    if (cfg.epsilon_schedule) m.epsilon = epsilon_schedule(it - 1, cfg.iters);
    const std::uint64_t iter_seed = mix_seed(cfg.seed, std::uint64_t(it));
    Rng pick(iter_seed);
    std::vector<int> sidx(n_source), tidx(n_target);
    for (auto& i : sidx) i = pick.uniform_int(0, int(source.size()) - 1);
    for (auto& i : tidx) i = pick.uniform_int(0, int(target.size()) - 1);

    std::vector<std::size_t> fresh;
    for (int t : tidx)
      if (pseudo_tick[t] != tick && std::find(fresh.begin(), fresh.end(), std::size_t(t)) == fresh.end())
        fresh.push_back(std::size_t(t));
    for (std::size_t t : fresh) {
      PseudoLabelConfig pc = cfg.pseudo;
      pc.classes = classes;
      pc.bandwidth = m.effective_v();
      pc.delta_d = m.effective_d();
      pc.seed = mix_seed(mix_seed(cfg.seed, 0xc1u + std::uint64_t(tick)), t);
      pc.threads = threads;
      const Field emb = net.forward(teacher.params, target[t], Head::embedding);
      const InstancePseudoLabels pl = gen_instance_pseudo_labels(emb, target_sem[t], pc);
      pseudo[t] = training_mask(pl, target_sem[t]);
      pseudo_count[t] = pl.count();
      pseudo_tpfp[t] = target_gt ? count_pseudo_matches(pl, (*target_gt)[t]) : std::pair<long, long>{0, 0};
      pseudo_tick[t] = tick;
    }

    std::vector<int> live_targets;
    long tp = 0, fp = 0;
    for (int t : tidx) {
      tp += pseudo_tpfp[t].first;
      fp += pseudo_tpfp[t].second;
      if (pseudo_count[t] == 0)
        ++stats.empty_pseudo;
      else
        live_targets.push_back(t);
    }
    stats.true_positives += tp;
    stats.false_positives += fp;

    const std::size_t ns = sidx.size(), nt = live_targets.size();
    std::vector<ImageGrad> parts(ns + nt);
    parallel_for(ns + nt, threads, [&](std::size_t b) {
      Rng rng(mix_seed(iter_seed, b + 1));
      if (b < ns)
        parts[b] = instance_grad(net, student, &teacher.params, source[sidx[b]].image, source_labels[sidx[b]], m,
                                 cfg.weights, cfg.jitter, rng);
      else
        parts[b] = instance_grad(net, student, &teacher.params, target[live_targets[b - ns]],
                                 pseudo[live_targets[b - ns]], m, cfg.weights, cfg.jitter, rng);
    });
    double loss = 0.0;
    if (!parts.empty()) {
      auto total = Gradients<float>::zeros_like(student);
      for (const auto& p : parts) {
        total.add(p.grads, 1.0f / float(parts.size()));
        loss += p.loss / double(parts.size());
      }
      if (!std::isfinite(loss))
        throw NumericalError("instance self-train loss diverged at iteration " + std::to_string(it));
      sgd.config().lr = nn::scheduled_lr(cfg.sgd, it, cfg.iters);
    sgd.step(student, total);
    }
    if (nn::ema_update(teacher, student, it)) ++tick;
    if (cfg.log) {
      write_terms(cfg.log, it, loss, mean_terms(parts), m.epsilon);
      *cfg.log << ',' << tp << ',' << fp << ',' << stats.empty_pseudo << std::endl;
    }
  }
  return stats;
}

}  // namespace pansel

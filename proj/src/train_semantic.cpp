#include <cmath>
#include <map>
#include <ostream>

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
  double loss = 0.0;
};

// Gradient of one supervised source image under a random augmentation.
ImageGrad source_ce_grad(const UNet<float>& net, const ParamStore<float>& params, const Scene& s,
                         const JitterConfig& jitter, Rng& rng) {
  const AugmentationRecord rec = random_record(rng, s.image.width, s.image.height, jitter);
  const Image view = apply(s.image, rec);
  const SemanticMask labels = apply_labels(s.semantic, rec);
  typename UNet<float>::Trace trace;
  const Field logits = net.forward(params, view, Head::semantic, &trace);
  const LossResult ce = cross_entropy_loss(logits, labels);
  ImageGrad out{Gradients<float>::zeros_like(params), ce.value};
  net.backward(params, trace, Head::semantic, ce.grad, out.grads);
  return out;
}

void check_finite(double v, const char* what, int iter) {
  if (!std::isfinite(v))
    throw NumericalError(std::string(what) + " diverged at iteration " + std::to_string(iter));
}

}  // namespace

ProbField one_hot_probs(const SemanticMask& gt, int num_classes) {
  ProbField f(num_classes, gt.height, gt.width);
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const int c = gt.data[p];
    if (c < num_classes) {
      f.at(c, int(p)) = 1.0;
    } else {
      for (int k = 0; k < num_classes; ++k) f.at(k, int(p)) = 1.0 / num_classes;
    }
  }
  return f;
}

void train_semantic_baseline(const UNet<float>& net, ParamStore<float>& params, const std::vector<Scene>& source,
                             const SemanticTrainConfig& cfg) {
  if (cfg.iters > 0) require(!source.empty(), "train_semantic_baseline: empty source set");
  nn::Sgd<float> sgd(cfg.sgd);
  const int threads = resolve_threads(cfg.threads);
  if (cfg.log) *cfg.log << "iter,loss_ce\n";
  for (int it = 1; it <= cfg.iters; ++it) {
    const std::uint64_t iter_seed = mix_seed(cfg.seed, std::uint64_t(it));
    Rng pick(iter_seed);
    std::vector<int> idx(cfg.batch);
    for (auto& i : idx) i = pick.uniform_int(0, int(source.size()) - 1);
    std::vector<ImageGrad> parts(cfg.batch);
    parallel_for(std::size_t(cfg.batch), threads, [&](std::size_t b) {
      Rng rng(mix_seed(iter_seed, b + 1));
      parts[b] = source_ce_grad(net, params, source[idx[b]], cfg.jitter, rng);
    });
    auto total = Gradients<float>::zeros_like(params);
    double loss = 0.0;
    for (const auto& p : parts) {
      total.add(p.grads, 1.0f / float(cfg.batch));
      loss += p.loss / cfg.batch;
    }
    check_finite(loss, "semantic baseline loss", it);
    sgd.config().lr = nn::scheduled_lr(cfg.sgd, it, cfg.iters);
    sgd.step(params, total);
    if (cfg.log) *cfg.log << it << ',' << loss << std::endl;
  }
}

void selftrain_semantic(const UNet<float>& net, ParamStore<float>& student, nn::TeacherStore<float>& teacher,
                        const std::vector<Scene>& source, const std::vector<Image>& target,
                        const SemanticTrainConfig& cfg) {
  if (cfg.iters <= 0) return;
  require(!target.empty(), "selftrain_semantic: empty target set");
  require(student.same_layout(teacher.params), "selftrain_semantic: teacher layout differs from student");
  if (cfg.oracle_teacher) require(cfg.oracle_teacher->size() == target.size(), "oracle teacher size mismatch");
  const int C = net.config().semantic_classes;
  const int threads = resolve_threads(cfg.threads);
  nn::Sgd<float> sgd(cfg.sgd);
  ClassPrior prior = ClassPrior::uniform(C, cfg.prior_momentum);

  if (cfg.log) {
    *cfg.log << "iter,loss_ce,loss_focal";
    for (int c = 0; c < C; ++c) *cfg.log << ",chi_" << schema::class_name(c);
    for (int c = 0; c < C; ++c) *cfg.log << ",thresh_" << schema::class_name(c);
    *cfg.log << '\n';
  }

  // Fused teacher maps only change when the teacher does; cache them per tick.
  std::vector<ProbField> fused_cache(target.size());
  std::vector<long> fused_tick(target.size(), -1);
  long tick = 0;

  for (int it = 1; it <= cfg.iters; ++it) {
    const std::uint64_t iter_seed = mix_seed(cfg.seed, std::uint64_t(it));
    Rng pick(iter_seed);
    std::vector<int> sidx(source.empty() ? 0 : cfg.source_batch), tidx(cfg.target_batch);
    for (auto& i : sidx) i = pick.uniform_int(0, int(source.size()) - 1);
    for (auto& i : tidx) i = pick.uniform_int(0, int(target.size()) - 1);

    // Teacher side, serial over the batch: fusion, prior, pseudo-labels.
    std::vector<std::size_t> fresh;
    for (int t : tidx)
      if (!cfg.oracle_teacher && fused_tick[t] != tick) {
        fused_tick[t] = tick;
        fresh.push_back(std::size_t(t));
      }
    parallel_for(fresh.size(), threads, [&](std::size_t k) {
      const std::size_t t = fresh[k];
      Rng rng(mix_seed(mix_seed(cfg.seed, 0x5eedULL + std::uint64_t(tick)), t));
      fused_cache[t] = fuse_teacher_predictions(net, teacher.params, target[t], cfg.fusion, rng);
    });
    std::vector<PseudoLabelMask> pseudo(tidx.size());
    std::vector<const ProbField*> fused(tidx.size());
    for (std::size_t b = 0; b < tidx.size(); ++b) {
      fused[b] = cfg.oracle_teacher ? &(*cfg.oracle_teacher)[tidx[b]] : &fused_cache[tidx[b]];
      update_class_prior(prior, *fused[b]);
    }
    for (std::size_t b = 0; b < tidx.size(); ++b) {
      pseudo[b] = gen_pseudo_labels(*fused[b], prior, cfg.threshold);
      if (cfg.guide_instances) {
        const int t = tidx[b];
        pseudo[b] = improve_with_instance_masks(pseudo[b], (*cfg.guide_instances)[t], (*cfg.guide_classes)[t]);
      }
    }

    // Student side, parallel over images, reduced in a fixed order.
    const std::size_t ns = sidx.size(), nt = tidx.size();
    std::vector<ImageGrad> parts(ns + nt);
    parallel_for(ns + nt, threads, [&](std::size_t b) {
      Rng rng(mix_seed(iter_seed, b + 1));
      if (b < ns) {
        parts[b] = source_ce_grad(net, student, source[sidx[b]], cfg.jitter, rng);
        return;
      }
      const std::size_t k = b - ns;
      const Image& img = target[tidx[k]];
      const AugmentationRecord rec = random_record(rng, img.width, img.height, cfg.jitter);
      const Image view = apply(img, rec);
      const SemanticMask labels = apply_labels(pseudo[k].labels, rec);
      const ProbField tprobs = apply_field(*fused[k], rec);
      typename UNet<float>::Trace trace;
      const Field logits = net.forward(student, view, Head::semantic, &trace);
      const LossResult fl = focal_loss(logits, labels, tprobs, prior, cfg.focal_lambda);
      parts[b] = {Gradients<float>::zeros_like(student), fl.value};
      net.backward(student, trace, Head::semantic, fl.grad, parts[b].grads);
    });
    auto total = Gradients<float>::zeros_like(student);
    double lce = 0.0, lfocal = 0.0;
    for (std::size_t b = 0; b < ns; ++b) {
      total.add(parts[b].grads, 1.0f / float(ns));
      lce += parts[b].loss / double(ns);
    }
    for (std::size_t b = ns; b < ns + nt; ++b) {
      total.add(parts[b].grads, 1.0f / float(nt));
      lfocal += parts[b].loss / double(nt);
    }
    check_finite(lce + lfocal, "semantic self-train loss", it);
    sgd.config().lr = nn::scheduled_lr(cfg.sgd, it, cfg.iters);
    sgd.step(student, total);
    if (nn::ema_update(teacher, student, it)) ++tick;

    if (cfg.log) {
      *cfg.log << it << ',' << lce << ',' << lfocal;
      for (double v : prior.chi) *cfg.log << ',' << v;
      for (int c = 0; c < C; ++c) {
        double th = std::nan("");
        for (const auto& p : pseudo)
          if (std::isfinite(p.thresholds[c])) th = std::isfinite(th) ? std::max(th, p.thresholds[c]) : p.thresholds[c];
        *cfg.log << ',' << th;
      }
      *cfg.log << std::endl;
    }
  }
}

}  // namespace pansel

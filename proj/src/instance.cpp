#include "pansel/instance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "pansel/parallel.hpp"

namespace pansel {

void MarginParams::validate() const {
  if (!(delta_v < delta_d)) throw ConfigError("margins: delta_v must be smaller than delta_d");
  if (!(effective_v() > 0.0) || !(effective_d() > 0.0))
    throw ConfigError("margins: effective margins must stay positive");
}

double epsilon_schedule(int t, int iters) {
  if (iters <= 0) return 0.2;
  const double tau = iters / 3.0;
  return 0.2 * (2.0 * std::exp(-double(t) / tau) - 1.0);
}

namespace {

double norm_diff(const Field& emb, int pixel, const std::vector<double>& v, std::vector<double>& r) {
  const int d = emb.channels;
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    r[c] = emb.at(c, pixel) - v[c];
    s += r[c] * r[c];
  }
  return std::sqrt(s);
}

Field zero_like(const Field& f) { return Field(f.channels, f.height, f.width); }

// Spreads a gradient on an object mean back onto the object's pixels.
void add_mean_grad(Field& grad, const std::vector<int>& pixels, const std::vector<double>& dmu) {
  const double inv = 1.0 / double(pixels.size());
  for (int p : pixels)
    for (int c = 0; c < grad.channels; ++c) grad.at(c, p) += dmu[c] * inv;
}

}  // namespace

ObjectSet ObjectSet::collect(const Field& emb, const InstanceMask& gt) {
  require(emb.height == gt.height && emb.width == gt.width, "instance loss: embedding/mask shape mismatch");
  std::map<int, std::vector<int>> groups;
  ObjectSet s;
  for (int p = 0; p < int(gt.size()); ++p) {
    const int id = gt.data[p];
    if (id == kIgnoreInstance) continue;
    if (id == 0)
      s.unlabelled.push_back(p);
    else
      groups[id].push_back(p);
  }
  for (auto& [id, px] : groups) {
    std::vector<double> mu(emb.channels, 0.0);
    for (int p : px)
      for (int c = 0; c < emb.channels; ++c) mu[c] += emb.at(c, p);
    for (auto& v : mu) v /= double(px.size());
    s.ids.push_back(id);
    s.pixels.push_back(std::move(px));
    s.means.push_back(std::move(mu));
  }
  return s;
}

LossResult pull_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m) {
  const ObjectSet obj = ObjectSet::collect(emb, gt);
  LossResult out{0.0, zero_like(emb)};
  const int C = int(obj.ids.size());
  if (C == 0) return out;
  const int D = emb.channels;
  const double dv = m.effective_v();
  std::vector<double> r(D);
  for (int k = 0; k < C; ++k) {
    const auto& px = obj.pixels[k];
    const double n = double(px.size());
    const double scale = 1.0 / (C * n);
    std::vector<double> dmu(D, 0.0);
    double term = 0.0;
    for (int p : px) {
      const double dist = norm_diff(emb, p, obj.means[k], r);
      const double h = std::max(dist - dv, 0.0);
      term += h * h;
      if (h <= 0.0 || dist <= 0.0) continue;
      for (int c = 0; c < D; ++c) {
        const double g = scale * 2.0 * h * r[c] / dist;
        out.grad.at(c, p) += g;
        dmu[c] -= g;
      }
    }
    out.value += term / (C * n);
    for (int p : px)
      for (int c = 0; c < D; ++c) out.grad.at(c, p) += dmu[c] / n;
  }
  return out;
}

LossResult push_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m) {
  const ObjectSet obj = ObjectSet::collect(emb, gt);
  LossResult out{0.0, zero_like(emb)};
  const int C = int(obj.ids.size());
  if (C < 2) return out;
  const int D = emb.channels;
  const double margin = 2.0 * m.effective_d();
  const double norm = 1.0 / (double(C) * (C - 1));
  std::vector<std::vector<double>> dmu(C, std::vector<double>(D, 0.0));
  for (int k = 0; k < C; ++k)
    for (int l = 0; l < C; ++l) {
      if (k == l) continue;
      double s = 0.0;
      for (int c = 0; c < D; ++c) {
        const double d = obj.means[k][c] - obj.means[l][c];
        s += d * d;
      }
      const double dist = std::sqrt(s);
      const double h = std::max(margin - dist, 0.0);
      out.value += norm * h * h;
      if (h <= 0.0 || dist <= 0.0) continue;
      for (int c = 0; c < D; ++c) {
        const double g = norm * 2.0 * h * (obj.means[k][c] - obj.means[l][c]) / dist;
        dmu[k][c] -= g;
        dmu[l][c] += g;
      }
    }
  for (int k = 0; k < C; ++k) add_mean_grad(out.grad, obj.pixels[k], dmu[k]);
  return out;
}

LossResult unlabelled_push_loss(const Field& emb, const InstanceMask& gt, const MarginParams& m) {
  const ObjectSet obj = ObjectSet::collect(emb, gt);
  LossResult out{0.0, zero_like(emb)};
  const int C = int(obj.ids.size());
  if (C == 0 || obj.unlabelled.empty()) return out;
  const int D = emb.channels;
  const double dd = m.effective_d();
  const double scale = 1.0 / (double(C) * obj.unlabelled.size());
  std::vector<double> r(D);
  for (int k = 0; k < C; ++k) {
    std::vector<double> dmu(D, 0.0);
    for (int p : obj.unlabelled) {
      const double dist = norm_diff(emb, p, obj.means[k], r);
      const double h = std::max(dd - dist, 0.0);
      out.value += scale * h * h;
      if (h <= 0.0 || dist <= 0.0) continue;
      for (int c = 0; c < D; ++c) {
        const double g = -scale * 2.0 * h * r[c] / dist;
        out.grad.at(c, p) += g;
        dmu[c] -= g;
      }
    }
    add_mean_grad(out.grad, obj.pixels[k], dmu);
  }
  return out;
}

double soft_mask_sigma(const MarginParams& m) { return m.effective_v() / std::sqrt(2.0 * std::numbers::ln2); }

Raster<double> soft_mask(const Field& emb, const std::vector<double>& anchor, const MarginParams& m) {
  require(int(anchor.size()) == emb.channels, "soft_mask: anchor dimension mismatch");
  const double sigma = soft_mask_sigma(m);
  const double k = 1.0 / (2.0 * sigma * sigma);
  Raster<double> s(emb.width, emb.height);
  std::vector<double> r(emb.channels);
  for (int p = 0; p < int(s.size()); ++p) {
    const double d = norm_diff(emb, p, anchor, r);
    s.data[p] = std::exp(-d * d * k);
  }
  return s;
}

double dice_distance(const std::vector<double>& p, const std::vector<double>& q, std::vector<double>* dp) {
  require(p.size() == q.size(), "dice: size mismatch");
  double pq = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    pq += p[i] * q[i];
    pp += p[i] * p[i];
    qq += q[i] * q[i];
  }
  const double a = pp + qq;
  if (dp) dp->assign(p.size(), 0.0);
  if (a <= 0.0) return 0.0;
  if (dp)
    for (std::size_t i = 0; i < p.size(); ++i) (*dp)[i] = -2.0 * q[i] / a + 4.0 * pq * p[i] / (a * a);
  return 1.0 - 2.0 * pq / a;
}

std::vector<ObjectAnchors> sample_object_anchors(const InstanceMask& gt, Rng& rng) {
  std::map<int, std::vector<int>> groups;
  for (int p = 0; p < int(gt.size()); ++p)
    if (gt.data[p] != 0 && gt.data[p] != kIgnoreInstance) groups[gt.data[p]].push_back(p);
  std::vector<ObjectAnchors> out;
  for (const auto& [id, px] : groups) {
    ObjectAnchors oa;
    oa.object_id = id;
    const int k = std::clamp(int((px.size() + 255) / 256), 1, 8);
    for (int a = 0; a < k; ++a) {
      std::vector<int> pick(5);
      for (auto& v : pick) v = px[rng.uniform_int(0, int(px.size()) - 1)];
      oa.anchors.push_back(std::move(pick));
    }
    out.push_back(std::move(oa));
  }
  return out;
}

namespace {

// Adds scale * dD/d(emb) for D(S(anchor), target), S grown from `anchor`
// (the mean of `anchor_pixels` when `through_anchor` is set). Returns D.
double soft_dice_with_grad(const Field& emb, const std::vector<double>& anchor, const std::vector<int>& anchor_pixels,
                           const std::vector<double>& target, const MarginParams& m, double scale, Field& grad) {
  const int D = emb.channels;
  const int n = emb.height * emb.width;
  const double sigma = soft_mask_sigma(m);
  const double inv_s2 = 1.0 / (sigma * sigma);
  std::vector<double> s(n), r(D);
  for (int p = 0; p < n; ++p) {
    const double d = norm_diff(emb, p, anchor, r);
    s[p] = std::exp(-0.5 * d * d * inv_s2);
  }
  std::vector<double> ds;
  const double value = dice_distance(s, target, &ds);
  std::vector<double> danchor(D, 0.0);
  for (int p = 0; p < n; ++p) {
    if (ds[p] == 0.0 || s[p] == 0.0) continue;
    const double f = scale * ds[p] * s[p] * inv_s2;
    for (int c = 0; c < D; ++c) {
      const double g = f * (emb.at(c, p) - anchor[c]);
      grad.at(c, p) -= g;
      danchor[c] += g;
    }
  }
  if (!anchor_pixels.empty()) {
    const double inv = 1.0 / double(anchor_pixels.size());
    for (int p : anchor_pixels)
      for (int c = 0; c < D; ++c) grad.at(c, p) += danchor[c] * inv;
  }
  return value;
}

std::vector<double> mean_embedding(const Field& emb, const std::vector<int>& pixels) {
  std::vector<double> a(emb.channels, 0.0);
  for (int p : pixels)
    for (int c = 0; c < emb.channels; ++c) a[c] += emb.at(c, p);
  for (auto& v : a) v /= double(pixels.size());
  return a;
}

}  // namespace

LossResult dice_object_loss(const Field& emb, const InstanceMask& gt, const std::vector<ObjectAnchors>& anchors,
                            const MarginParams& m) {
  require(emb.height == gt.height && emb.width == gt.width, "dice_object_loss: shape mismatch");
  LossResult out{0.0, zero_like(emb)};
  std::vector<const ObjectAnchors*> used;
  for (const auto& oa : anchors) {
    if (oa.anchors.empty()) continue;
    bool present = false;
    for (auto v : gt.data)
      if (v == oa.object_id) {
        present = true;
        break;
      }
    if (present) used.push_back(&oa);
  }
  const int C = int(used.size());
  if (C == 0) return out;
  std::vector<double> target(gt.size());
  for (const ObjectAnchors* oa : used) {
    for (std::size_t p = 0; p < gt.size(); ++p) target[p] = gt.data[p] == oa->object_id ? 1.0 : 0.0;
    const double scale = 1.0 / (double(C) * oa->anchors.size());
    for (const auto& ap : oa->anchors) {
      require(!ap.empty(), "dice_object_loss: empty anchor");
      out.value += scale * soft_dice_with_grad(emb, mean_embedding(emb, ap), ap, target, m, scale, out.grad);
    }
  }
  return out;
}

std::vector<int> covering_anchors(const Field& student, const std::vector<int>& region, const MarginParams& m,
                                  int max_anchors) {
  const double sigma = soft_mask_sigma(m);
  const double k = 1.0 / (2.0 * sigma * sigma);
  std::vector<int> anchors;
  std::vector<double> r(student.channels);
  for (int p : region) {
    if (int(anchors.size()) >= max_anchors) break;
    bool covered = false;
    for (int a : anchors) {
      double s = 0.0;
      for (int c = 0; c < student.channels; ++c) {
        const double d = student.at(c, p) - student.at(c, a);
        s += d * d;
      }
      if (std::exp(-s * k) >= 0.5) {
        covered = true;
        break;
      }
    }
    if (!covered) anchors.push_back(p);
  }
  return anchors;
}

LossResult consistency_loss(const Field& student, const Field& teacher, const std::vector<int>& anchor_pixels,
                            const MarginParams& m) {
  require(student.same_shape(teacher), "consistency_loss: student/teacher shape mismatch");
  LossResult out{0.0, zero_like(student)};
  if (anchor_pixels.empty()) return out;
  const int D = student.channels;
  const double scale = 1.0 / double(anchor_pixels.size());
  const double sigma = soft_mask_sigma(m);
  const double inv_s2 = 1.0 / (sigma * sigma);
  const int n = student.height * student.width;
  std::vector<double> sf(n), sg(n), r(D);
  std::vector<double> dsf, dsg;
  for (int a : anchor_pixels) {
    std::vector<double> anchor(D);
    for (int c = 0; c < D; ++c) anchor[c] = student.at(c, a);
    for (int p = 0; p < n; ++p) {
      const double df = norm_diff(student, p, anchor, r);
      sf[p] = std::exp(-0.5 * df * df * inv_s2);
      const double dg = norm_diff(teacher, p, anchor, r);
      sg[p] = std::exp(-0.5 * dg * dg * inv_s2);
    }
    out.value += scale * dice_distance(sf, sg, &dsf);
    dice_distance(sg, sf, &dsg);
    // The anchor vector comes from the student, so both masks depend on it.
    std::vector<double> danchor(D, 0.0);
    for (int p = 0; p < n; ++p) {
      const double ff = scale * dsf[p] * sf[p] * inv_s2;
      const double fg = scale * dsg[p] * sg[p] * inv_s2;
      for (int c = 0; c < D; ++c) {
        const double gf = ff * (student.at(c, p) - anchor[c]);
        out.grad.at(c, p) -= gf;
        danchor[c] += gf + fg * (teacher.at(c, p) - anchor[c]);
      }
    }
    for (int c = 0; c < D; ++c) out.grad.at(c, a) += danchor[c];
  }
  return out;
}

InstanceLoss instance_total_loss(const Field& emb, const InstanceMask& gt, const std::vector<ObjectAnchors>& anchors,
                                 const Field* teacher, const std::vector<int>& cons_anchors, const MarginParams& m,
                                 const LossWeights& w) {
  InstanceLoss out;
  out.grad = zero_like(emb);
  auto accumulate = [&](const LossResult& r, double weight, double& slot) {
    slot = r.value;
    if (weight == 0.0) return;
    for (std::size_t i = 0; i < out.grad.data.size(); ++i) out.grad.data[i] += weight * r.grad.data[i];
  };
  if (w.alpha != 0.0) accumulate(pull_loss(emb, gt, m), w.alpha, out.terms.pull);
  if (w.beta != 0.0) accumulate(push_loss(emb, gt, m), w.beta, out.terms.push);
  if (w.lambda_obj != 0.0) accumulate(dice_object_loss(emb, gt, anchors, m), w.lambda_obj, out.terms.object);
  if (w.gamma != 0.0) accumulate(unlabelled_push_loss(emb, gt, m), w.gamma, out.terms.unlabelled_push);
  if (teacher && !cons_anchors.empty() && w.delta_cons != 0.0)
    accumulate(consistency_loss(emb, *teacher, cons_anchors, m), w.delta_cons, out.terms.consistency);
  out.total = out.terms.total(w);
  return out;
}

namespace {

struct ClassClusters {
  int cls = 0;
  std::vector<std::vector<int>> members;  // pixel lists
  std::vector<std::vector<double>> means;
};

ClassClusters cluster_class(const Field& emb, const std::vector<int>& pixels, const PseudoLabelConfig& cfg,
                            std::uint64_t seed) {
  ClassClusters out;
  PointSet pts(emb.channels);
  std::vector<double> v(emb.channels);
  for (int p : pixels) {
    for (int c = 0; c < emb.channels; ++c) v[c] = emb.at(c, p);
    pts.push(v.data());
  }
  MeanShiftOptions opt;
  opt.bandwidth = cfg.bandwidth;
  opt.threads = 1;
  Rng rng(seed);
  const int n = int(pixels.size());
  if (n > cfg.max_seeds) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng.engine());
    opt.seeds.assign(all.begin(), all.begin() + cfg.max_seeds);
    std::sort(opt.seeds.begin(), opt.seeds.end());
  }
  ClusterResult cr = mean_shift_plus(pts, opt, cfg.delta_d, cfg.min_size);
  const int k = cr.num_clusters();
  // Class pixels left without a mode join the nearest cluster mean within delta_d.
  const double dd2 = cfg.delta_d * cfg.delta_d;
  for (int i = 0; i < n; ++i) {
    if (cr.labels[i] != 0) continue;
    double best = dd2;
    for (int c = 0; c < k; ++c) {
      const double d2 = squared_distance(pts[i], cr.centers[c].data(), pts.dim);
      if (d2 <= best) {
        best = d2;
        cr.labels[i] = c + 1;
      }
    }
  }
  out.members.assign(k, {});
  for (int i = 0; i < n; ++i)
    if (cr.labels[i] > 0) out.members[cr.labels[i] - 1].push_back(pixels[i]);
  out.means = cr.centers;
  return out;
}

double sorted_iou(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

}  // namespace

InstancePseudoLabels gen_instance_pseudo_labels(const Field& emb, const SemanticMask& sem,
                                                const PseudoLabelConfig& cfg) {
  require(emb.height == sem.height && emb.width == sem.width, "gen_instance_pseudo_labels: shape mismatch");
  if (cfg.min_size < 1) throw ConfigError("pseudo-labels: min_size must be positive");
  std::vector<int> classes = cfg.classes;
  if (classes.empty())
    for (int c = 0; c < schema::kNumClasses; ++c)
      if (schema::is_thing(c)) classes.push_back(c);
  std::sort(classes.begin(), classes.end());

  struct Kept {
    ClassClusters clusters;
    std::vector<double> stability;
  };
  std::vector<Kept> per_class(classes.size());
  parallel_for(classes.size(), cfg.threads, [&](std::size_t ci) {
    const int cls = classes[ci];
    std::vector<int> pixels;
    for (int p = 0; p < int(sem.size()); ++p)
      if (sem.data[p] == cls) pixels.push_back(p);
    Kept& kept = per_class[ci];
    kept.clusters.cls = cls;
    if (int(pixels.size()) <= cfg.min_size) return;
    ClassClusters a = cluster_class(emb, pixels, cfg, mix_seed(cfg.seed, 2 * cls));
    ClassClusters b = cluster_class(emb, pixels, cfg, mix_seed(cfg.seed, 2 * cls + 1));
    for (std::size_t i = 0; i < a.members.size(); ++i) {
      double best = 0.0;
      for (const auto& mb : b.members) best = std::max(best, sorted_iou(a.members[i], mb));
      if (best >= cfg.stability_iou && int(a.members[i].size()) >= cfg.min_size) {
        kept.clusters.members.push_back(std::move(a.members[i]));
        kept.clusters.means.push_back(std::move(a.means[i]));
        kept.stability.push_back(best);
      }
    }
  });

  InstancePseudoLabels out;
  out.mask = InstanceMask(sem.width, sem.height);
  for (auto& kept : per_class)
    for (std::size_t i = 0; i < kept.clusters.members.size(); ++i) {
      const int id = out.count() + 1;
      if (id >= kIgnoreInstance) throw NumericalError("pseudo-labels: too many instances");
      for (int p : kept.clusters.members[i]) out.mask.data[p] = std::uint16_t(id);
      out.classes.push_back(kept.clusters.cls);
      out.means.push_back(kept.clusters.means[i]);
      out.stability.push_back(kept.stability[i]);
    }
  return out;
}

}  // namespace pansel

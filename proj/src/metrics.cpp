#include "pansel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace pansel {

void MetricReport::append(const MetricReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

bool MetricReport::has(const std::string& metric, int cls) const {
  return std::any_of(rows.begin(), rows.end(), [&](const MetricRow& r) { return r.metric == metric && r.cls == cls; });
}

const MetricRow& MetricReport::get(const std::string& metric, int cls) const {
  for (const auto& r : rows)
    if (r.metric == metric && r.cls == cls) return r;
  throw std::out_of_range("metric report has no row " + metric + "/" + std::to_string(cls));
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "metric,class,value,TP,FP,FN\n";
  for (const auto& r : rows) {
    os << r.metric << ',' << (r.cls < 0 ? std::string("mean") : schema::class_name(r.cls)) << ','
       << std::setprecision(10) << r.value << ',' << r.tp << ',' << r.fp << ',' << r.fn << '\n';
  }
}

IouAccumulator::IouAccumulator(int num_classes)
    : classes_(num_classes), tp_(num_classes, 0), fp_(num_classes, 0), fn_(num_classes, 0) {}

void IouAccumulator::add(const SemanticMask& pred, const SemanticMask& gt) {
  require(pred.same_shape(gt), "miou: shape mismatch");
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const int g = gt.data[p];
    if (g == schema::kVoid) continue;
    require(g < classes_, "miou: ground-truth class out of range");
    const int q = pred.data[p];
    if (q == g) {
      ++tp_[g];
    } else {
      ++fn_[g];
      if (q < classes_) ++fp_[q];
    }
  }
}

MetricReport IouAccumulator::report() const {
  MetricReport r;
  long tp = 0, fp = 0, fn = 0;
  for (int c = 0; c < classes_; ++c) {
    const long denom = tp_[c] + fp_[c] + fn_[c];
    if (denom == 0) continue;
    r.add({"iou", c, double(tp_[c]) / double(denom), tp_[c], fp_[c], fn_[c]});
    tp += tp_[c];
    fp += fp_[c];
    fn += fn_[c];
  }
  r.add({"miou", -1, mean(), tp, fp, fn});
  return r;
}

double IouAccumulator::mean_over(const std::vector<int>& classes) const {
  double sum = 0.0;
  int n = 0;
  for (int c : classes) {
    const long denom = tp_[c] + fp_[c] + fn_[c];
    if (denom == 0) continue;
    sum += double(tp_[c]) / double(denom);
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

double IouAccumulator::mean() const {
  std::vector<int> all(classes_);
  for (int c = 0; c < classes_; ++c) all[c] = c;
  return mean_over(all);
}

MetricReport miou(const SemanticMask& pred, const SemanticMask& gt, int num_classes) {
  IouAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.report();
}

std::vector<Match> greedy_match(const std::vector<std::vector<double>>& iou, double threshold) {
  std::vector<Match> out;
  const int np = int(iou.size());
  const int ng = np == 0 ? 0 : int(iou[0].size());
  std::vector<bool> pu(np, false), gu(ng, false);
  while (true) {
    Match best{-1, -1, threshold};
    for (int i = 0; i < np; ++i) {
      if (pu[i]) continue;
      for (int j = 0; j < ng; ++j)
        if (!gu[j] && iou[i][j] > best.iou) best = {i, j, iou[i][j]};
    }
    if (best.pred < 0) break;
    pu[best.pred] = gu[best.gt] = true;
    out.push_back(best);
  }
  return out;
}

ApAccumulator::ApAccumulator(std::vector<int> thing_classes) : classes_(std::move(thing_classes)) {
  for (int c : classes_) tp_[c] = fp_[c] = fn_[c] = 0;
}

namespace {

struct IdRegion {
  int id;
  int cls;
  std::vector<int> pixels;
};

std::vector<IdRegion> regions(const InstanceMask& m) {
  std::map<int, std::vector<int>> g;
  for (int p = 0; p < int(m.size()); ++p)
    if (m.data[p] != 0) g[m.data[p]].push_back(p);
  std::vector<IdRegion> out;
  for (auto& [id, px] : g) out.push_back({id, -1, std::move(px)});
  return out;
}

double pixel_iou(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter, ++i, ++j;
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

void ApAccumulator::add(const InstanceMask& pred, const std::map<int, int>& pred_class, const InstanceMask& gt,
                        const SemanticMask& gt_sem) {
  require(pred.same_shape(gt) && gt.same_shape(gt_sem), "map50: shape mismatch");
  auto preds = regions(pred);
  auto gts = regions(gt);
  for (auto& r : preds) {
    auto it = pred_class.find(r.id);
    r.cls = it == pred_class.end() ? -1 : it->second;
  }
  for (auto& r : gts) {
    std::map<int, int> hist;
    for (int p : r.pixels) ++hist[gt_sem.data[p]];
    int best = 0;
    for (auto& [c, n] : hist)
      if (n > best) {
        best = n;
        r.cls = c;
      }
  }
  for (int c : classes_) {
    std::vector<const IdRegion*> pc, gc;
    for (auto& r : preds)
      if (r.cls == c) pc.push_back(&r);
    for (auto& r : gts)
      if (r.cls == c) gc.push_back(&r);
    std::vector<std::vector<double>> iou(pc.size(), std::vector<double>(gc.size()));
    for (std::size_t i = 0; i < pc.size(); ++i)
      for (std::size_t j = 0; j < gc.size(); ++j) iou[i][j] = pixel_iou(pc[i]->pixels, gc[j]->pixels);
    const long tp = long(greedy_match(iou, 0.5).size());
    tp_[c] += tp;
    fp_[c] += long(pc.size()) - tp;
    fn_[c] += long(gc.size()) - tp;
  }
}

MetricReport ApAccumulator::report() const {
  MetricReport r;
  double sum = 0.0, rsum = 0.0;
  int n = 0;
  long tp = 0, fp = 0, fn = 0;
  for (int c : classes_) {
    const long t = tp_.at(c), f = fp_.at(c), m = fn_.at(c);
    if (t + f + m == 0) continue;
    const double ap = t + f == 0 ? 0.0 : double(t) / double(t + f);
    const double rec = t + m == 0 ? 0.0 : double(t) / double(t + m);
    r.add({"ap50", c, ap, t, f, m});
    r.add({"recall50", c, rec, t, f, m});
    sum += ap;
    rsum += rec;
    ++n;
    tp += t;
    fp += f;
    fn += m;
  }
  r.add({"map50", -1, n ? sum / n : 0.0, tp, fp, fn});
  r.add({"recall50", -1, n ? rsum / n : 0.0, tp, fp, fn});
  return r;
}

double ApAccumulator::mean() const { return report().get("map50").value; }

PanopticMatching match_segments(const PanopticMask& pred, const PanopticMask& gt) {
  require(pred.classes.same_shape(gt.classes) && pred.instances.same_shape(gt.instances),
          "pq: shape mismatch");
  PanopticMatching m;
  std::map<std::pair<int, int>, int> pidx, gidx;
  std::map<std::pair<int, int>, long> inter;
  const std::size_t n = gt.classes.size();
  for (std::size_t p = 0; p < n; ++p) {
    const int gc = gt.classes.data[p];
    if (gc == schema::kVoid) continue;
    const std::pair<int, int> gk{gc, gt.instances.data[p]};
    auto [git, gnew] = gidx.try_emplace(gk, int(m.gt.size()));
    if (gnew) m.gt.push_back({gk.first, gk.second, 0});
    ++m.gt[git->second].area;
    const int pc = pred.classes.data[p];
    if (pc == schema::kVoid) continue;
    const std::pair<int, int> pk{pc, pred.instances.data[p]};
    auto [pit, pnew] = pidx.try_emplace(pk, int(m.pred.size()));
    if (pnew) m.pred.push_back({pk.first, pk.second, 0});
    ++m.pred[pit->second].area;
    if (pc == gc) ++inter[{pit->second, git->second}];
  }
  m.iou.assign(m.pred.size(), std::vector<double>(m.gt.size(), 0.0));
  for (const auto& [k, v] : inter) {
    const long uni = m.pred[k.first].area + m.gt[k.second].area - v;
    m.iou[k.first][k.second] = double(v) / double(uni);
  }
  m.matches = greedy_match(m.iou, 0.5);
  std::vector<int> pu(m.pred.size(), 0), gu(m.gt.size(), 0);
  for (const auto& mt : m.matches) {
    if (++pu[mt.pred] > 1 || ++gu[mt.gt] > 1) throw ContractViolation("pq: segment matched twice");
  }
  return m;
}

PanopticAccumulator::PanopticAccumulator(LabelSchema schema) : schema_(std::move(schema)) {}

void PanopticAccumulator::add(const PanopticMask& pred, const PanopticMask& gt) {
  const PanopticMatching m = match_segments(pred, gt);
  std::vector<bool> pm(m.pred.size(), false), gm(m.gt.size(), false);
  for (const auto& mt : m.matches) {
    auto& s = stats_[m.gt[mt.gt].cls];
    ++s.tp;
    s.iou_sum += mt.iou;
    pm[mt.pred] = gm[mt.gt] = true;
  }
  for (std::size_t i = 0; i < m.pred.size(); ++i) {
    auto& s = stats_[m.pred[i].cls];
    s.seen = true;
    if (!pm[i]) ++s.fp;
  }
  for (std::size_t j = 0; j < m.gt.size(); ++j) {
    auto& s = stats_[m.gt[j].cls];
    s.seen = true;
    if (!gm[j]) ++s.fn;
    if (schema_.is_stuff(m.gt[j].cls)) {
      ++s.stuff_gt;
      for (std::size_t i = 0; i < m.pred.size(); ++i)
        if (m.iou[i][j] > 0.0) s.stuff_iou_sum += m.iou[i][j];
    }
  }
}

MetricReport PanopticAccumulator::report() const {
  MetricReport r;
  double sq_sum = 0.0, rq_sum = 0.0, pq_sum = 0.0, plus_sum = 0.0;
  int n = 0;
  long tp = 0, fp = 0, fn = 0;
  for (const auto& [c, s] : stats_) {
    if (!s.seen) continue;
    const double sq = s.tp ? s.iou_sum / double(s.tp) : 0.0;
    const double denom = double(s.tp) + 0.5 * double(s.fp) + 0.5 * double(s.fn);
    const double rq = denom > 0 ? double(s.tp) / denom : 0.0;
    const double pqc = sq * rq;
    r.add({"sq", c, sq, s.tp, s.fp, s.fn});
    r.add({"rq", c, rq, s.tp, s.fp, s.fn});
    r.add({"pq", c, pqc, s.tp, s.fp, s.fn});
    double plus = pqc;
    if (schema_.is_stuff(c)) {
      plus = s.stuff_gt ? s.stuff_iou_sum / double(s.stuff_gt) : 0.0;
      r.add({"pq_dagger", c, plus, s.tp, s.fp, s.fn});
    }
    r.add({"pqplus", c, plus, s.tp, s.fp, s.fn});
    sq_sum += sq;
    rq_sum += rq;
    pq_sum += pqc;
    plus_sum += plus;
    ++n;
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
  }
  const double inv = n ? 1.0 / n : 0.0;
  r.add({"sq", -1, sq_sum * inv, tp, fp, fn});
  r.add({"rq", -1, rq_sum * inv, tp, fp, fn});
  r.add({"pq", -1, pq_sum * inv, tp, fp, fn});
  r.add({"pqplus", -1, plus_sum * inv, tp, fp, fn});
  return r;
}

MetricReport pq(const PanopticMask& pred, const PanopticMask& gt, const LabelSchema& schema) {
  PanopticAccumulator acc(schema);
  acc.add(pred, gt);
  return acc.report();
}

MetricReport pq_plus(const PanopticMask& pred, const PanopticMask& gt, const LabelSchema& schema) {
  return pq(pred, gt, schema);
}

}  // namespace pansel

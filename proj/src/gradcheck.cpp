#include "pansel/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pansel/instance.hpp"
#include "pansel/nn/ops.hpp"
#include "pansel/nn/unet.hpp"
#include "pansel/rng.hpp"
#include "pansel/semantic.hpp"

namespace pansel {

double max_relative_error(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          const std::vector<double>& analytic, const GradcheckOptions& opt, int* checked) {
  require(x.size() == analytic.size(), "gradcheck: gradient size mismatch");
  const std::size_t n = x.size();
  const std::size_t stride = std::max<std::size_t>(1, n / std::size_t(std::max(1, opt.max_coords)));
  double worst = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < n; i += stride) {
    const double keep = x[i];
    x[i] = keep + opt.step;
    const double up = f(x);
    x[i] = keep - opt.step;
    const double down = f(x);
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    ++count;
  }
  if (checked) *checked = count;
  return worst;
}

namespace {

using nn::Tensor;

std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return v;
}

Tensor<double> tensor_from(int c, int h, int w, const std::vector<double>& v) {
  Tensor<double> t(c, h, w);
  t.data = v;
  return t;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Collector {
  const GradcheckOptions& opt;
  std::vector<GradcheckEntry> entries;

  void check(const std::string& name, const std::function<double(const std::vector<double>&)>& f,
             const std::vector<double>& x, const std::vector<double>& analytic) {
    int n = 0;
    const double err = max_relative_error(f, x, analytic, opt, &n);
    for (auto& e : entries)
      if (e.name == name) {
        e.max_rel_error = std::max(e.max_rel_error, err);
        e.checked += n;
        e.passed = e.max_rel_error < opt.tolerance;
        return;
      }
    entries.push_back({name, err, n, err < opt.tolerance});
  }
};

void check_conv(Collector& col, Rng& rng, int dilation) {
  const int cin = 3, cout = 4, k = 3, h = 6, w = 7;
  const auto x = random_vector(rng, std::size_t(cin) * h * w);
  const auto wt = random_vector(rng, std::size_t(cout) * cin * k * k);
  const auto b = random_vector(rng, cout);
  const auto r = random_vector(rng, std::size_t(cout) * h * w);
  auto loss = [&](const std::vector<double>& xv, const std::vector<double>& wv, const std::vector<double>& bv) {
    std::vector<double> cols;
    const auto y = nn::conv2d_forward<double>(tensor_from(cin, h, w, xv), wv, bv, cout, k, dilation, cols);
    return dot(y.data, r);
  };
  std::vector<double> cols;
  const auto xt = tensor_from(cin, h, w, x);
  nn::conv2d_forward<double>(xt, wt, b, cout, k, dilation, cols);
  std::vector<double> dw(wt.size(), 0.0), db(b.size(), 0.0);
  const auto dx = nn::conv2d_backward<double>(xt, cols, tensor_from(cout, h, w, r), wt, k, dilation, dw, db);
  const std::string name = dilation == 1 ? "conv3x3" : "conv3x3_dilated";
  col.check(name + ".input", [&](const std::vector<double>& v) { return loss(v, wt, b); }, x, dx.data);
  col.check(name + ".weight", [&](const std::vector<double>& v) { return loss(x, v, b); }, wt, dw);
  col.check(name + ".bias", [&](const std::vector<double>& v) { return loss(x, wt, v); }, b, db);
}

void check_primitives(Collector& col, Rng& rng) {
  check_conv(col, rng, 1);
  check_conv(col, rng, 2);
  {
    // Inputs kept away from the kink so central differences never straddle it.
    auto x = random_vector(rng, 60);
    for (auto& v : x) v = (v < 0 ? -0.1 : 0.1) + v;
    const auto r = random_vector(rng, 60);
    auto f = [&](const std::vector<double>& v) {
      auto t = tensor_from(3, 4, 5, v);
      nn::relu_inplace(t);
      return dot(t.data, r);
    };
    auto out = tensor_from(3, 4, 5, x);
    nn::relu_inplace(out);
    auto dy = tensor_from(3, 4, 5, r);
    nn::relu_backward_inplace(out, dy);
    col.check("relu", f, x, dy.data);
  }
  {
    const auto x = random_vector(rng, 2 * 6 * 8);
    const auto r = random_vector(rng, 2 * 3 * 4);
    auto f = [&](const std::vector<double>& v) { return dot(nn::avgpool2_forward(tensor_from(2, 6, 8, v)).data, r); };
    col.check("avgpool2", f, x, nn::avgpool2_backward(tensor_from(2, 3, 4, r)).data);
  }
  {
    const auto x = random_vector(rng, 2 * 3 * 4);
    const auto r = random_vector(rng, 2 * 6 * 8);
    auto f = [&](const std::vector<double>& v) { return dot(nn::upsample2_forward(tensor_from(2, 3, 4, v)).data, r); };
    col.check("upsample2", f, x, nn::upsample2_backward(tensor_from(2, 6, 8, r)).data);
  }
  {
    const auto a = random_vector(rng, 2 * 3 * 3), b = random_vector(rng, 3 * 3 * 3);
    const auto r = random_vector(rng, 5 * 3 * 3);
    auto f = [&](const std::vector<double>& v) {
      return dot(nn::concat_channels(tensor_from(2, 3, 3, v), tensor_from(3, 3, 3, b)).data, r);
    };
    Tensor<double> da, db;
    nn::split_channels(tensor_from(5, 3, 3, r), 2, da, db);
    col.check("concat", f, a, da.data);
  }
  {
    const auto x = random_vector(rng, 4 * 3 * 3, -2.0, 2.0);
    const auto r = random_vector(rng, 4 * 3 * 3);
    auto field = [](const std::vector<double>& v) {
      Field f(4, 3, 3);
      f.data = v;
      return f;
    };
    auto f = [&](const std::vector<double>& v) { return dot(nn::softmax(field(v)).data, r); };
    const Field p = nn::softmax(field(x));
    col.check("softmax", f, x, nn::softmax_backward(p, field(r)).data);
  }
}

Field field_from(int c, int h, int w, const std::vector<double>& v) {
  Field f(c, h, w);
  f.data = v;
  return f;
}

// Small instance fixture: three objects, background, one ignored pixel block.
InstanceMask fixture_mask(int w, int h) {
  InstanceMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x < 3 && y < 3) m.at(x, y) = 1;
      if (x >= 4 && x < 7 && y < 4) m.at(x, y) = 2;
      if (y >= 5 && x >= 2 && x < 6) m.at(x, y) = 3;
      if (x == w - 1 && y == h - 1) m.at(x, y) = kIgnoreInstance;
    }
  return m;
}

void check_losses(Collector& col, Rng& rng) {
  const int C = 5, h = 6, w = 7;
  {
    const auto x = random_vector(rng, std::size_t(C) * h * w, -2.0, 2.0);
    SemanticMask gt(w, h);
    for (auto& v : gt.data) v = std::uint8_t(rng.uniform_int(0, C - 1));
    gt.data[3] = schema::kVoid;
    auto f = [&](const std::vector<double>& v) { return cross_entropy_loss(field_from(C, h, w, v), gt).value; };
    col.check("cross_entropy", f, x, cross_entropy_loss(field_from(C, h, w, x), gt).grad.data);

    const ProbField teacher = nn::softmax(field_from(C, h, w, random_vector(rng, x.size(), -2.0, 2.0)));
    ClassPrior prior = ClassPrior::uniform(C);
    for (auto& v : prior.chi) v = rng.uniform(0.05, 0.6);
    auto g = [&](const std::vector<double>& v) {
      return focal_loss(field_from(C, h, w, v), gt, teacher, prior, 3.0).value;
    };
    col.check("focal", g, x, focal_loss(field_from(C, h, w, x), gt, teacher, prior, 3.0).grad.data);
  }

  const int D = 3, eh = 8, ew = 8;
  const InstanceMask gt = fixture_mask(ew, eh);
  MarginParams m;
  m.delta_v = 0.2;
  m.delta_d = 1.5;
  // Objects centred apart but within 2 delta_d so push is active; spread above
  // delta_v so pull is active.
  std::vector<double> e(std::size_t(D) * eh * ew);
  const double centres[4][3] = {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {1.0, 0.3, -0.2}, {-0.4, 1.1, 0.5}};
  for (int p = 0; p < eh * ew; ++p) {
    const int id = gt.data[p] == kIgnoreInstance ? 0 : gt.data[p];
    for (int c = 0; c < D; ++c) e[std::size_t(c) * eh * ew + p] = centres[id][c] + rng.uniform(-0.6, 0.6);
  }
  auto emb = [&](const std::vector<double>& v) { return field_from(D, eh, ew, v); };
  col.check("pull", [&](const std::vector<double>& v) { return pull_loss(emb(v), gt, m).value; }, e,
            pull_loss(emb(e), gt, m).grad.data);
  col.check("push", [&](const std::vector<double>& v) { return push_loss(emb(v), gt, m).value; }, e,
            push_loss(emb(e), gt, m).grad.data);
  col.check("unlabelled_push", [&](const std::vector<double>& v) { return unlabelled_push_loss(emb(v), gt, m).value; },
            e, unlabelled_push_loss(emb(e), gt, m).grad.data);
  Rng arng(7);
  const auto anchors = sample_object_anchors(gt, arng);
  col.check("dice_object", [&](const std::vector<double>& v) { return dice_object_loss(emb(v), gt, anchors, m).value; },
            e, dice_object_loss(emb(e), gt, anchors, m).grad.data);
  std::vector<double> teacher = e;
  for (auto& v : teacher) v += rng.uniform(-0.3, 0.3);
  const std::vector<int> cons_anchors{0, 5, 20, 43};
  col.check("consistency",
            [&](const std::vector<double>& v) { return consistency_loss(emb(v), emb(teacher), cons_anchors, m).value; },
            e, consistency_loss(emb(e), emb(teacher), cons_anchors, m).grad.data);
  const LossWeights lw{1.0, 1.0, 1.0, 1.0, 0.1};
  const Field tf = emb(teacher);
  col.check("instance_total",
            [&](const std::vector<double>& v) {
              return instance_total_loss(emb(v), gt, anchors, &tf, cons_anchors, m, lw).total;
            },
            e, instance_total_loss(emb(e), gt, anchors, &tf, cons_anchors, m, lw).grad.data);
}

void check_network(Collector& col, Rng& rng) {
  nn::NetConfig cfg;
  cfg.base_channels = 4;
  cfg.embedding_dim = 3;
  cfg.dilated_bottleneck = true;
  const nn::UNet<double> net(cfg);
  nn::ParamStore<double> params = net.init_params(rng.engine()());
  const int h = 32, w = 32;
  Tensor<double> input(3, h, w);
  for (auto& v : input.data) v = rng.uniform(-1.0, 1.0);
  SemanticMask gt(w, h);
  for (auto& v : gt.data) v = std::uint8_t(rng.uniform_int(0, cfg.semantic_classes - 1));
  InstanceMask inst(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) inst.at(x, y) = std::uint16_t(x < 10 && y < 10 ? 1 : (x > 20 && y > 16 ? 2 : 0));
  Rng arng(11);
  const auto anchors = sample_object_anchors(inst, arng);
  const MarginParams m{0.05, 1.5, 0.0};

  auto semantic = [&](const nn::ParamStore<double>& p, nn::Gradients<double>* g) {
    typename nn::UNet<double>::Trace trace;
    const Field logits = net.forward(p, input, nn::Head::semantic, g ? &trace : nullptr);
    const LossResult ce = cross_entropy_loss(logits, gt);
    if (g) net.backward(p, trace, nn::Head::semantic, ce.grad, *g);
    return ce.value;
  };
  auto embedding = [&](const nn::ParamStore<double>& p, nn::Gradients<double>* g) {
    typename nn::UNet<double>::Trace trace;
    const Field e = net.forward(p, input, nn::Head::embedding, g ? &trace : nullptr);
    const InstanceLoss l = instance_total_loss(e, inst, anchors, nullptr, {}, m, LossWeights{});
    if (g) net.backward(p, trace, nn::Head::embedding, l.grad, *g);
    return l.total;
  };
  for (auto [name, fn] : {std::pair{std::string("unet_semantic_ce"), std::function(semantic)},
                          std::pair{std::string("unet_embedding_total"), std::function(embedding)}}) {
    auto grads = nn::Gradients<double>::zeros_like(params);
    fn(params, &grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads.arrays[i].empty()) continue;
      const bool relevant = std::any_of(grads.arrays[i].begin(), grads.arrays[i].end(), [](double v) { return v != 0.0; });
      if (!relevant) continue;
      auto f = [&, i](const std::vector<double>& v) {
        nn::ParamStore<double> p = params;
        p[i].data = v;
        return fn(p, nullptr);
      };
      GradcheckOptions o = col.opt;
      o.max_coords = 4;
      int n = 0;
      const double err = max_relative_error(f, params[i].data, grads.arrays[i], o, &n);
      bool found = false;
      for (auto& e : col.entries)
        if (e.name == name) {
          e.max_rel_error = std::max(e.max_rel_error, err);
          e.checked += n;
          e.passed = e.max_rel_error < col.opt.tolerance;
          found = true;
        }
      if (!found) col.entries.push_back({name, err, n, err < col.opt.tolerance});
    }
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opt) {
  Collector col{opt, {}};
  Rng rng(mix_seed(opt.seed, 0x67c));
  check_primitives(col, rng);
  check_losses(col, rng);
  check_network(col, rng);
  return col.entries;
}

}  // namespace pansel

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pansel/nn/ops.hpp"
#include "pansel/nn/params.hpp"
#include "pansel/nn/unet.hpp"
#include "pansel/rng.hpp"

using namespace pansel;
using namespace pansel::nn;

namespace {

Tensor<double> random_tensor(Rng& rng, int c, int h, int w) {
  Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

// Direct zero-padded convolution from the definition.
Tensor<double> naive_conv(const Tensor<double>& x, const std::vector<double>& w, const std::vector<double>& b,
                          int out, int k, int dil) {
  Tensor<double> y(out, x.height, x.width);
  const int r = (k / 2) * dil;
  for (int o = 0; o < out; ++o)
    for (int yy = 0; yy < x.height; ++yy)
      for (int xx = 0; xx < x.width; ++xx) {
        double s = b[o];
        for (int i = 0; i < x.channels; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = yy - r + ky * dil, sx = xx - r + kx * dil;
              if (sy < 0 || sx < 0 || sy >= x.height || sx >= x.width) continue;
              s += w[((o * x.channels + i) * k + ky) * k + kx] * x.data[i * x.plane() + sy * x.width + sx];
            }
        y.data[o * y.plane() + yy * y.width + xx] = s;
      }
  return y;
}

ParamStore<double> scalar_store(double w) {
  ParamStore<double> p;
  p.add("w", {1});
  p[0].data[0] = w;
  return p;
}

}  // namespace

TEST_CASE("convolution matches the direct sum") {
  Rng rng(1);
  for (int k : {1, 3})
    for (int dil : {1, 2}) {
      if (k == 1 && dil == 2) continue;
      const auto x = random_tensor(rng, 3, 7, 6);
      std::vector<double> w(4 * 3 * k * k), b(4);
      for (auto& v : w) v = rng.uniform(-1, 1);
      for (auto& v : b) v = rng.uniform(-1, 1);
      std::vector<double> cols;
      const auto y = conv2d_forward<double>(x, w, b, 4, k, dil, cols);
      const auto ref = naive_conv(x, w, b, 4, k, dil);
      REQUIRE(y.data.size() == ref.data.size());
      for (std::size_t i = 0; i < y.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("pooling and upsampling") {
  Tensor<double> x(1, 2, 4);
  x.data = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto p = avgpool2_forward(x);
  REQUIRE(p.width == 2);
  CHECK(p.data[0] == 3.5);
  CHECK(p.data[1] == 5.5);
  const auto u = upsample2_forward(p);
  REQUIRE(u.width == 4);
  REQUIRE(u.height == 2);
  CHECK(u.data == std::vector<double>{3.5, 3.5, 5.5, 5.5, 3.5, 3.5, 5.5, 5.5});
  // Adjoint pairs: <pool(x), y> = <x, pool_backward(y)>.
  const auto g = avgpool2_backward(p);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) lhs += p.data[i] * p.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * g.data[i];
  CHECK(lhs == doctest::Approx(rhs));
  const auto ub = upsample2_backward(u);
  CHECK(ub.data[0] == 4 * 3.5);
}

TEST_CASE("relu and concat") {
  Tensor<double> x(1, 1, 4);
  x.data = {-1, 0.5, 0, 2};
  relu_inplace(x);
  CHECK(x.data == std::vector<double>{0, 0.5, 0, 2});
  Tensor<double> dy(1, 1, 4, 1.0);
  relu_backward_inplace(x, dy);
  CHECK(dy.data == std::vector<double>{0, 1, 0, 1});
  Tensor<double> a(1, 1, 2, 1.0), b(2, 1, 2, 2.0);
  const auto c = concat_channels(a, b);
  CHECK(c.channels == 3);
  Tensor<double> da, db;
  split_channels(c, 1, da, db);
  CHECK(da.data == a.data);
  CHECK(db.data == b.data);
}

TEST_CASE("softmax normalises and is shift invariant") {
  Rng rng(2);
  Field l(5, 3, 4);
  for (auto& v : l.data) v = rng.uniform(-30, 30);
  const Field p = softmax(l);
  Field shifted = l;
  for (auto& v : shifted.data) v += 100.0;
  const Field q = softmax(shifted);
  for (std::size_t px = 0; px < p.plane(); ++px) {
    double s = 0;
    for (int c = 0; c < 5; ++c) {
      s += p.at(c, px);
      CHECK(p.at(c, px) == doctest::Approx(q.at(c, px)).epsilon(1e-12));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("network shapes and zero initialisation") {
  UNet<float> net(NetConfig{});
  const auto zero = net.zero_params();
  Image img(32, 16);
  const ProbField p = net.predict_probs(zero, img);
  CHECK(p.channels == 6);
  CHECK(p.width == 32);
  CHECK(p.height == 16);
  for (double v : p.data) CHECK(v == doctest::Approx(1.0 / 6.0));
  const auto params = net.init_params(3);
  const Field e = net.forward(params, img, Head::embedding);
  CHECK(e.channels == 8);
  CHECK(e.width == 32);
  CHECK(params.total_elements() > 10000);
  CHECK(net.init_params(3).checksum() == params.checksum());
  CHECK(net.init_params(4).checksum() != params.checksum());
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  UNet<double> net(NetConfig{.depth = 2, .base_channels = 4});
  const auto params = net.init_params(1);
  Image img(8, 8);
  UNet<double>::Trace trace;
  const Field out = net.forward(params, img, Head::semantic, &trace);
  auto grads = Gradients<double>::zeros_like(params);
  net.backward(params, trace, Head::semantic, Field(out.channels, out.height, out.width), grads);
  for (const auto& a : grads.arrays)
    for (double g : a) CHECK(g == 0.0);
}

TEST_CASE("sgd arithmetic") {
  auto p = scalar_store(1.0);
  auto g = Gradients<double>::zeros_like(p);
  g.arrays[0][0] = 1.0;
  Sgd<double> sgd({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  sgd.step(p, g);
  CHECK(p[0].data[0] == doctest::Approx(0.9).epsilon(1e-15));

  auto q = scalar_store(1.0);
  Sgd<double> mom({.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
  mom.step(q, g);
  mom.step(q, g);
  CHECK(mom.velocity()[0][0] == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(q[0].data[0] == doctest::Approx(1.0 - 0.1 * 1.0 - 0.1 * 1.9).epsilon(1e-15));

  auto r = scalar_store(2.0);
  auto zero = Gradients<double>::zeros_like(r);
  Sgd<double> still({.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
  still.step(r, zero);
  CHECK(r[0].data[0] == 2.0);

  auto nan = Gradients<double>::zeros_like(r);
  nan.arrays[0][0] = std::nan("");
  CHECK_THROWS_AS(still.step(r, nan), NumericalError);
}

TEST_CASE("gradient of half the squared norm is the weight") {
  // L = 0.5 w^2 under plain SGD: w <- w - lr * w.
  auto p = scalar_store(3.0);
  auto g = Gradients<double>::zeros_like(p);
  g.arrays[0][0] = p[0].data[0];
  Sgd<double>({.lr = 0.5, .momentum = 0.0, .weight_decay = 0.0}).step(p, g);
  CHECK(p[0].data[0] == 1.5);
}

TEST_CASE("poly learning rate") {
  SgdConfig c{.lr = 1.0, .poly_power = 0.9};
  CHECK(scheduled_lr(c, 1, 10) == 1.0);
  CHECK(scheduled_lr(c, 6, 10) == doctest::Approx(std::pow(0.5, 0.9)));
  c.poly_power = 0.0;
  CHECK(scheduled_lr(c, 9, 10) == 1.0);
}

TEST_CASE("ema teacher") {
  TeacherStore<double> t{scalar_store(0.0), 0.99, 1};
  const auto s = scalar_store(1.0);
  CHECK(ema_update(t, s, 1));
  CHECK(t.params[0].data[0] == doctest::Approx(0.01).epsilon(1e-15));

  TeacherStore<double> frozen{scalar_store(0.5), 1.0, 1};
  ema_update(frozen, s, 1);
  CHECK(frozen.params[0].data[0] == 0.5);

  // Constant student: the gap shrinks by 0.99 per tick, and only on ticks.
  TeacherStore<double> ticks{scalar_store(0.0), 0.99, 5};
  int updates = 0;
  for (long it = 1; it <= 50; ++it) updates += ema_update(ticks, s, it);
  CHECK(updates == 10);
  CHECK(1.0 - ticks.params[0].data[0] == doctest::Approx(std::pow(0.99, 10)).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip") {
  UNet<float> net(NetConfig{.depth = 2, .base_channels = 4});
  const auto p = net.init_params(9);
  const auto path = std::filesystem::temp_directory_path() / "pansel_test_ckpt.bin";
  save_checkpoint(path, p);
  const auto q = load_checkpoint<float>(path);
  CHECK(q.same_layout(p));
  CHECK(q.checksum() == p.checksum());
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "PNSLgarbage";
  }
  CHECK_THROWS(load_checkpoint<float>(path));
  std::filesystem::remove(path);
}

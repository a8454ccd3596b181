#include "pansel/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace pansel::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void im2col(const Tensor<T>& x, int k, int d, std::vector<T>& cols) {
  const int h = x.height, w = x.width, pad = d * (k / 2);
  const std::size_t plane = x.plane();
  cols.assign(std::size_t(x.channels) * k * k * plane, T(0));
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((std::size_t(c) * k + ky) * k + kx) * plane;
        const int oy = ky * d - pad, ox = kx * d - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          T* dst = row + std::size_t(y) * w;
          const T* s = src + std::size_t(sy) * w + ox;
          for (int xx = x0; xx < x1; ++xx) dst[xx] = s[xx];
        }
      }
  }
}

template <typename T>
void col2im(const std::vector<T>& dcols, int k, int d, Tensor<T>& dx) {
  const int h = dx.height, w = dx.width, pad = d * (k / 2);
  const std::size_t plane = dx.plane();
  for (int c = 0; c < dx.channels; ++c) {
    T* dst = dx.channel(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = dcols.data() + ((std::size_t(c) * k + ky) * k + kx) * plane;
        const int oy = ky * d - pad, ox = kx * d - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          const T* s = row + std::size_t(y) * w;
          T* o = dst + std::size_t(sy) * w + ox;
          for (int xx = x0; xx < x1; ++xx) o[xx] += s[xx];
        }
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                         int kernel, int dilation, std::vector<T>& cols) {
  const int rows = x.channels * kernel * kernel;
  require(weight.size() == std::size_t(out_channels) * rows, "conv2d: weight size mismatch");
  require(bias.size() == std::size_t(out_channels), "conv2d: bias size mismatch");
  const auto plane = Eigen::Index(x.plane());
  Tensor<T> y(out_channels, x.height, x.width);
  CMapMat<T> wm(weight.data(), out_channels, rows);
  MapMat<T> ym(y.data.data(), out_channels, plane);
  if (kernel == 1) {
    cols.clear();
    ym.noalias() = wm * CMapMat<T>(x.data.data(), rows, plane);
  } else {
    im2col(x, kernel, dilation, cols);
    ym.noalias() = wm * CMapMat<T>(cols.data(), rows, plane);
  }
  for (int o = 0; o < out_channels; ++o) ym.row(o).array() += bias[o];
  return y;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const std::vector<T>& cols, const Tensor<T>& dy,
                          std::span<const T> weight, int kernel, int dilation, std::span<T> dweight,
                          std::span<T> dbias) {
  const int rows = x.channels * kernel * kernel;
  const int out_channels = dy.channels;
  const auto plane = Eigen::Index(x.plane());
  CMapMat<T> wm(weight.data(), out_channels, rows);
  CMapMat<T> dym(dy.data.data(), out_channels, plane);
  MapMat<T> dwm(dweight.data(), out_channels, rows);
  const T* colp = kernel == 1 ? x.data.data() : cols.data();
  CMapMat<T> cm(colp, rows, plane);
  dwm.noalias() += dym * cm.transpose();
  // Plain loop: a vectorised sum would depend on the buffer's alignment.
  for (int o = 0; o < out_channels; ++o) {
    const T* row = dy.channel(o);
    T s = T(0);
    for (Eigen::Index i = 0; i < plane; ++i) s += row[i];
    dbias[o] += s;
  }

  Tensor<T> dx(x.channels, x.height, x.width);
  if (kernel == 1) {
    MapMat<T>(dx.data.data(), rows, plane).noalias() = wm.transpose() * dym;
  } else {
    std::vector<T> dcols(std::size_t(rows) * plane);
    MapMat<T>(dcols.data(), rows, plane).noalias() = wm.transpose() * dym;
    col2im(dcols, kernel, dilation, dx);
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& out, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(out.data[i] > T(0))) dy.data[i] = T(0);
}

template <typename T>
Tensor<T> avgpool2_forward(const Tensor<T>& x) {
  require(x.height % 2 == 0 && x.width % 2 == 0, "avgpool2: odd spatial size");
  Tensor<T> y(x.channels, x.height / 2, x.width / 2);
  for (int c = 0; c < x.channels; ++c) {
    const T* s = x.channel(c);
    T* d = y.channel(c);
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) {
        const std::size_t i = std::size_t(2 * yy) * x.width + 2 * xx;
        d[std::size_t(yy) * y.width + xx] = T(0.25) * (s[i] + s[i + 1] + s[i + x.width] + s[i + x.width + 1]);
      }
  }
  return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.channels, dy.height * 2, dy.width * 2);
  for (int c = 0; c < dy.channels; ++c) {
    const T* s = dy.channel(c);
    T* d = dx.channel(c);
    for (int y = 0; y < dx.height; ++y)
      for (int x = 0; x < dx.width; ++x) d[std::size_t(y) * dx.width + x] = T(0.25) * s[std::size_t(y / 2) * dy.width + x / 2];
  }
  return dx;
}

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  Tensor<T> y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c) {
    const T* s = x.channel(c);
    T* d = y.channel(c);
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx) d[std::size_t(yy) * y.width + xx] = s[std::size_t(yy / 2) * x.width + xx / 2];
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
  require(dy.height % 2 == 0 && dy.width % 2 == 0, "upsample2_backward: odd spatial size");
  Tensor<T> dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c) {
    const T* s = dy.channel(c);
    T* d = dx.channel(c);
    for (int y = 0; y < dy.height; ++y)
      for (int x = 0; x < dy.width; ++x) d[std::size_t(y / 2) * dx.width + x / 2] += s[std::size_t(y) * dy.width + x];
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.height == b.height && a.width == b.width, "concat_channels: spatial mismatch");
  Tensor<T> y(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + std::ptrdiff_t(a.data.size()));
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(a_channels, d.height, d.width);
  db = Tensor<T>(d.channels - a_channels, d.height, d.width);
  const auto cut = std::ptrdiff_t(da.data.size());
  std::copy(d.data.begin(), d.data.begin() + cut, da.data.begin());
  std::copy(d.data.begin() + cut, d.data.end(), db.data.begin());
}

Field softmax(const Field& logits) {
  Field p = logits;
  const std::size_t plane = logits.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    double m = logits.at(0, i);
    for (int c = 1; c < logits.channels; ++c) m = std::max(m, logits.at(c, i));
    double z = 0.0;
    for (int c = 0; c < logits.channels; ++c) z += p.at(c, i) = std::exp(logits.at(c, i) - m);
    for (int c = 0; c < logits.channels; ++c) p.at(c, i) /= z;
  }
  return p;
}

Field softmax_backward(const Field& probs, const Field& dprobs) {
  Field d(probs.channels, probs.height, probs.width);
  const std::size_t plane = probs.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0.0;
    for (int c = 0; c < probs.channels; ++c) dot += dprobs.at(c, i) * probs.at(c, i);
    for (int c = 0; c < probs.channels; ++c) d.at(c, i) = probs.at(c, i) * (dprobs.at(c, i) - dot);
  }
  return d;
}

#define PANSEL_INSTANTIATE_OPS(T)                                                                              \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, int, int, \
                                       std::vector<T>&);                                                       \
  template Tensor<T> conv2d_backward<T>(const Tensor<T>&, const std::vector<T>&, const Tensor<T>&,             \
                                        std::span<const T>, int, int, std::span<T>, std::span<T>);             \
  template void relu_inplace<T>(Tensor<T>&);                                                                   \
  template void relu_backward_inplace<T>(const Tensor<T>&, Tensor<T>&);                                        \
  template Tensor<T> avgpool2_forward<T>(const Tensor<T>&);                                                    \
  template Tensor<T> avgpool2_backward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> upsample2_forward<T>(const Tensor<T>&);                                                   \
  template Tensor<T> upsample2_backward<T>(const Tensor<T>&);                                                  \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);

PANSEL_INSTANTIATE_OPS(float)
PANSEL_INSTANTIATE_OPS(double)

}  // namespace pansel::nn

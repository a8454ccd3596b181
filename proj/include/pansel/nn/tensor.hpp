#pragma once

#include <cstddef>
#include <vector>

#include "pansel/common.hpp"

namespace pansel::nn {

/// Single-image activation tensor, channel-major (C x H x W).
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T{}) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, fill) {}

  std::size_t plane() const { return std::size_t(height) * width; }
  T* channel(int c) { return data.data() + c * plane(); }
  const T* channel(int c) const { return data.data() + c * plane(); }
};

template <typename T>
Tensor<T> to_tensor(const Field& f) {
  Tensor<T> t(f.channels, f.height, f.width);
  for (std::size_t i = 0; i < f.data.size(); ++i) t.data[i] = T(f.data[i]);
  return t;
}

template <typename T>
Field to_field(const Tensor<T>& t) {
  Field f(t.channels, t.height, t.width);
  for (std::size_t i = 0; i < t.data.size(); ++i) f.data[i] = double(t.data[i]);
  return f;
}

/// Network input: RGB normalised to zero mean, roughly unit spread.
template <typename T>
Tensor<T> image_tensor(const Image& img) {
  Tensor<T> t(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.data[c * t.plane() + std::size_t(y) * img.width + x] = T((img.at(x, y, c) - 0.5f) / 0.25f);
  return t;
}

}  // namespace pansel::nn

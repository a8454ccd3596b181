#pragma once

#include <cstdint>
#include <vector>

#include "pansel/nn/ops.hpp"
#include "pansel/nn/params.hpp"
#include "pansel/nn/tensor.hpp"

namespace pansel::nn {

struct NetConfig {
  int depth = 3;
  int base_channels = 16;
  int semantic_classes = 6;
  int embedding_dim = 8;
  int in_channels = 3;
  bool dilated_bottleneck = false;  // extra dilation-2 conv at the bottleneck

  /// Channels at encoder level l: base at full resolution, 2*base below.
  int level_channels(int level) const { return level == 0 ? base_channels : 2 * base_channels; }
};

enum class Head { semantic, embedding };

/// Encoder-decoder with skip connections: per level two 3x3 conv+ReLU, 2x2
/// average pooling down, nearest 2x upsampling up, and 1x1 output heads.
template <typename T>
class UNet {
 public:
  struct Conv {
    int weight = -1;
    int bias = -1;
    int in = 0;
    int out = 0;
    int kernel = 3;
    int dilation = 1;
  };

  struct UnitCache {
    Tensor<T> input;
    std::vector<T> cols;
    Tensor<T> output;
  };

  /// Everything recorded by forward() that backward() needs.
  struct Trace {
    std::vector<UnitCache> units;
    Tensor<T> features;
    std::vector<int> skip_channels;
    std::vector<int> up_channels;
  };

  explicit UNet(NetConfig cfg);

  const NetConfig& config() const { return cfg_; }
  /// Fresh parameters with the architecture's layout, He-initialised from `seed`.
  ParamStore<T> init_params(std::uint64_t seed) const;
  /// Zero-filled parameters with the right layout.
  ParamStore<T> zero_params() const;

  /// Runs the shared trunk. Input spatial dims must be divisible by 2^depth.
  Tensor<T> trunk_forward(const ParamStore<T>& params, const Tensor<T>& input, Trace* trace) const;
  Tensor<T> head_forward(const ParamStore<T>& params, Head head, const Tensor<T>& features) const;

  /// Convenience: logits (semantic) or raw embeddings, as a 64-bit field.
  Field forward(const ParamStore<T>& params, const Tensor<T>& input, Head head, Trace* trace = nullptr) const;
  Field forward(const ParamStore<T>& params, const Image& img, Head head, Trace* trace = nullptr) const;
  /// Semantic head followed by softmax.
  ProbField predict_probs(const ParamStore<T>& params, const Image& img) const;

  /// Accumulates parameter gradients for d(loss)/d(head output) = `dout`.
  void backward(const ParamStore<T>& params, const Trace& trace, Head head, const Field& dout,
                Gradients<T>& grads) const;

 private:
  Tensor<T> unit_forward(const ParamStore<T>& params, const Conv& c, const Tensor<T>& x, bool relu,
                         Trace* trace) const;
  Tensor<T> unit_backward(const ParamStore<T>& params, const Conv& c, const UnitCache& cache, Tensor<T> dy,
                          bool relu, Gradients<T>& grads) const;

  NetConfig cfg_;
  ParamStore<T> layout_;
  std::vector<Conv> encoder_;     // two per level
  std::vector<Conv> bottleneck_;  // two, or three with the dilated block
  std::vector<Conv> decoder_;     // two per level, stored deepest level first
  Conv semantic_head_;
  Conv embedding_head_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace pansel::nn

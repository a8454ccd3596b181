#include "pansel/nn/unet.hpp"

#include <cmath>

#include "pansel/rng.hpp"

namespace pansel::nn {

template <typename T>
UNet<T>::UNet(NetConfig cfg) : cfg_(cfg) {
  require(cfg_.depth >= 1 && cfg_.base_channels >= 1, "NetConfig: depth and base_channels must be positive");
  auto conv = [this](const std::string& name, int in, int out, int k, int d) {
    Conv c{layout_.add(name + ".weight", {out, in, k, k}), layout_.add(name + ".bias", {out}), in, out, k, d};
    return c;
  };
  int ch = cfg_.in_channels;
  for (int l = 0; l < cfg_.depth; ++l) {
    const int out = cfg_.level_channels(l);
    encoder_.push_back(conv("enc" + std::to_string(l) + ".conv1", ch, out, 3, 1));
    encoder_.push_back(conv("enc" + std::to_string(l) + ".conv2", out, out, 3, 1));
    ch = out;
  }
  const int bott = cfg_.level_channels(cfg_.depth);
  bottleneck_.push_back(conv("bottleneck.conv1", ch, bott, 3, 1));
  if (cfg_.dilated_bottleneck) bottleneck_.push_back(conv("bottleneck.dilated", bott, bott, 3, 2));
  bottleneck_.push_back(conv("bottleneck.conv2", bott, bott, 3, 1));
  ch = bott;
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    const int skip = cfg_.level_channels(l);
    decoder_.push_back(conv("dec" + std::to_string(l) + ".conv1", ch + skip, skip, 3, 1));
    decoder_.push_back(conv("dec" + std::to_string(l) + ".conv2", skip, skip, 3, 1));
    ch = skip;
  }
  semantic_head_ = conv("head.semantic", ch, cfg_.semantic_classes, 1, 1);
  embedding_head_ = conv("head.embedding", ch, cfg_.embedding_dim, 1, 1);
}

template <typename T>
ParamStore<T> UNet<T>::zero_params() const {
  return layout_;
}

template <typename T>
ParamStore<T> UNet<T>::init_params(std::uint64_t seed) const {
  ParamStore<T> p = layout_;
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& a = p[i];
    if (a.shape.size() != 4) continue;  // biases stay zero
    const int fan_in = a.shape[1] * a.shape[2] * a.shape[3];
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : a.data) v = T(rng.normal(0.0, stddev));
  }
  return p;
}

template <typename T>
Tensor<T> UNet<T>::unit_forward(const ParamStore<T>& params, const Conv& c, const Tensor<T>& x, bool relu,
                                Trace* trace) const {
  UnitCache cache;
  Tensor<T> y = conv2d_forward<T>(x, params.data(c.weight), params.data(c.bias), c.out, c.kernel, c.dilation, cache.cols);
  if (relu) relu_inplace(y);
  if (trace) {
    if (c.kernel == 1) cache.input = x;
    cache.input.channels = x.channels;
    cache.input.height = x.height;
    cache.input.width = x.width;
    if (relu) cache.output = y;
    trace->units.push_back(std::move(cache));
  }
  return y;
}

template <typename T>
Tensor<T> UNet<T>::unit_backward(const ParamStore<T>& params, const Conv& c, const UnitCache& cache, Tensor<T> dy,
                                 bool relu, Gradients<T>& grads) const {
  if (relu) relu_backward_inplace(cache.output, dy);
  return conv2d_backward<T>(cache.input, cache.cols, dy, params.data(c.weight), c.kernel, c.dilation,
                            grads.arrays[c.weight], grads.arrays[c.bias]);
}

template <typename T>
Tensor<T> UNet<T>::trunk_forward(const ParamStore<T>& params, const Tensor<T>& input, Trace* trace) const {
  const int f = 1 << cfg_.depth;
  if (input.height % f != 0 || input.width % f != 0)
    throw ContractViolation("UNet: input " + std::to_string(input.width) + "x" + std::to_string(input.height) +
                            " not divisible by " + std::to_string(f));
  if (input.channels != cfg_.in_channels) throw ContractViolation("UNet: wrong number of input channels");
  if (!params.same_layout(layout_)) throw ContractViolation("UNet: parameter layout does not match NetConfig");

  std::vector<Tensor<T>> skips;
  Tensor<T> h = input;
  for (int l = 0; l < cfg_.depth; ++l) {
    h = unit_forward(params, encoder_[2 * l], h, true, trace);
    h = unit_forward(params, encoder_[2 * l + 1], h, true, trace);
    skips.push_back(h);
    h = avgpool2_forward(h);
  }
  for (const auto& c : bottleneck_) h = unit_forward(params, c, h, true, trace);
  for (int i = 0; i < cfg_.depth; ++i) {
    const int l = cfg_.depth - 1 - i;
    h = upsample2_forward(h);
    if (trace) {
      trace->up_channels.push_back(h.channels);
      trace->skip_channels.push_back(skips[l].channels);
    }
    h = concat_channels(h, skips[l]);
    h = unit_forward(params, decoder_[2 * i], h, true, trace);
    h = unit_forward(params, decoder_[2 * i + 1], h, true, trace);
  }
  if (trace) trace->features = h;
  return h;
}

template <typename T>
Tensor<T> UNet<T>::head_forward(const ParamStore<T>& params, Head head, const Tensor<T>& features) const {
  const Conv& c = head == Head::semantic ? semantic_head_ : embedding_head_;
  std::vector<T> unused;
  return conv2d_forward<T>(features, params.data(c.weight), params.data(c.bias), c.out, 1, 1, unused);
}

template <typename T>
Field UNet<T>::forward(const ParamStore<T>& params, const Tensor<T>& input, Head head, Trace* trace) const {
  return to_field(head_forward(params, head, trunk_forward(params, input, trace)));
}

template <typename T>
Field UNet<T>::forward(const ParamStore<T>& params, const Image& img, Head head, Trace* trace) const {
  return forward(params, image_tensor<T>(img), head, trace);
}

template <typename T>
ProbField UNet<T>::predict_probs(const ParamStore<T>& params, const Image& img) const {
  return softmax(forward(params, img, Head::semantic));
}

template <typename T>
void UNet<T>::backward(const ParamStore<T>& params, const Trace& trace, Head head, const Field& dout,
                       Gradients<T>& grads) const {
  require(grads.arrays.size() == params.size(), "UNet::backward: gradient layout mismatch");
  const Conv& hc = head == Head::semantic ? semantic_head_ : embedding_head_;
  if (dout.channels != hc.out || dout.height != trace.features.height || dout.width != trace.features.width)
    throw ContractViolation("UNet::backward: output gradient has the wrong shape");
  for (double v : dout.data)
    if (!std::isfinite(v)) throw NumericalError("non-finite loss gradient at network output");

  const std::vector<T> no_cols;
  Tensor<T> g = conv2d_backward<T>(trace.features, no_cols, to_tensor<T>(dout), params.data(hc.weight), 1, 1,
                                   grads.arrays[hc.weight], grads.arrays[hc.bias]);

  int u = int(trace.units.size()) - 1;
  std::vector<Tensor<T>> dskips(cfg_.depth);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const int l = cfg_.depth - 1 - i;
    g = unit_backward(params, decoder_[2 * i + 1], trace.units[u--], std::move(g), true, grads);
    g = unit_backward(params, decoder_[2 * i], trace.units[u--], std::move(g), true, grads);
    Tensor<T> dup;
    split_channels(g, trace.up_channels[i], dup, dskips[l]);
    g = upsample2_backward(dup);
  }
  for (int b = int(bottleneck_.size()) - 1; b >= 0; --b)
    g = unit_backward(params, bottleneck_[b], trace.units[u--], std::move(g), true, grads);
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    g = avgpool2_backward(g);
    for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += dskips[l].data[k];
    g = unit_backward(params, encoder_[2 * l + 1], trace.units[u--], std::move(g), true, grads);
    g = unit_backward(params, encoder_[2 * l], trace.units[u--], std::move(g), true, grads);
  }
}

template class UNet<float>;
template class UNet<double>;

}  // namespace pansel::nn

#pragma once

#include <span>
#include <vector>

#include "pansel/nn/tensor.hpp"

namespace pansel::nn {

/// "Same"-padded square convolution with stride 1. `weight` is laid out
/// [out][in][ky][kx]. `cols` receives the unfolded input for the backward pass
/// (left empty for 1x1 kernels, where the input itself is reused).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                         int kernel, int dilation, std::vector<T>& cols);

/// Accumulates dW, db into the given spans and returns dX.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const std::vector<T>& cols, const Tensor<T>& dy,
                          std::span<const T> weight, int kernel, int dilation, std::span<T> dweight,
                          std::span<T> dbias);

template <typename T>
void relu_inplace(Tensor<T>& x);
/// dX = dY where the forward output was positive.
template <typename T>
void relu_backward_inplace(const Tensor<T>& out, Tensor<T>& dy);

template <typename T>
Tensor<T> avgpool2_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a gradient of concat(a, b) back into its parts.
template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db);

/// Per-pixel softmax over channels, computed with the max shifted out.
Field softmax(const Field& logits);
/// Backward of softmax: dlogits = p * (dp - <dp, p>).
Field softmax_backward(const Field& probs, const Field& dprobs);

}  // namespace pansel::nn

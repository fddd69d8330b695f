#pragma once

// Forward and backward kernels for the layers used by the VGG family.
// Kernels are pure functions over Tensors; eyedex::Graph wires them into
// reverse-mode differentiation. Every kernel runs in the dtype of its input.

#include <cstdint>
#include <vector>

#include "eyedex/rng.hpp"
#include "eyedex/tensor.hpp"

namespace eyedex {

enum class Mode { train, eval };

/// Geometry of a 2-D convolution. Padding is a symmetric zero-pad count.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
};

namespace ops {

// Cross-correlation (no kernel flip). input [N,C,H,W], weight [F,C,kh,kw],
// bias [F]. Each output is accumulated over (c, kh, kw) in ascending order
// starting from zero, then the bias is added.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          const ConvSpec& spec, bool need_input, bool need_params);

// 2x2 window, stride 2. Odd spatial sizes are rejected.
struct MaxPoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input offset within each (n,c) plane
};
MaxPoolResult maxpool2d(const Tensor& input);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                          const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

// x [N,D] * W [D,M] + b [M]
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
struct DenseGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          bool need_input, bool need_params);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

// Softmax over the last axis, computed with max subtraction.
Tensor softmax(const Tensor& input);
Tensor softmax_backward(const Tensor& output, const Tensor& grad_out);

/// Per-channel normalization over the batch and spatial axes (channel axis 1).
/// Running statistics follow r <- (1 - momentum) * r + momentum * batch_stat,
/// where batch_stat is the batch mean and the biased batch variance.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.01;
  double epsilon = 1e-3;
};
struct BatchNormResult {
  Tensor output;
  Tensor normalized;  // x_hat
  std::vector<double> inv_std;
};
BatchNormResult batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, Mode mode, bool update_running = true);
struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const BatchNormResult& forward, const Tensor& gamma,
                                  const Tensor& grad_out, Mode mode);

// Inverted dropout: survivors are scaled by 1/(1-rate); eval mode and rate 0
// are the identity and return an empty mask.
struct DropoutResult {
  Tensor output;
  Tensor mask;
};
DropoutResult dropout(const Tensor& input, double rate, Mode mode, Rng& rng);
Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// acc += g, shapes and dtypes must match.
void accumulate(Tensor& acc, const Tensor& g);
double sum(const Tensor& a);

// Bilinear resize of a [C,H,W] tensor. Half-pixel centers map pixel areas
// (image resizing); corner alignment maps the source grid onto the output
// corners so source nodes are reproduced exactly when (out-1) is a multiple
// of (in-1) (heatmap upsampling).
enum class ResizeAlign { half_pixel, corners };
Tensor resize_bilinear(const Tensor& planes, std::size_t out_h, std::size_t out_w,
                       ResizeAlign align);

}  // namespace ops
}  // namespace eyedex

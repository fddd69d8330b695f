#include "eyedex/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace eyedex {

namespace {

using Index = std::ptrdiff_t;

std::string axis_mismatch(const std::string& what, const std::string& axis_a, std::size_t a,
                          const std::string& axis_b, std::size_t b) {
  return what + ": " + axis_a + "=" + std::to_string(a) + " does not match " + axis_b + "=" +
         std::to_string(b);
}

void require_rank(const Tensor& t, std::size_t rank, const std::string& what) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(what + " must have rank " + std::to_string(rank) + ", got shape " +
                         to_string(t.shape()));
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.dtype() != b.dtype()) {
    throw ConfigError(what + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                      to_string(b.dtype()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(what + ": shape " + to_string(a.shape()) + " does not match " +
                         to_string(b.shape()));
  }
  require_same_dtype(a, b, what);
}

// [lo, hi) range of output columns whose input column ow*stride + offset is in [0, width).
std::pair<Index, Index> valid_range(Index out_size, Index in_size, Index stride, Index offset) {
  Index lo = 0;
  if (offset < 0) {
    lo = (-offset + stride - 1) / stride;
  }
  const Index last = in_size - 1 - offset;
  if (last < 0) {
    return {0, 0};
  }
  Index hi = std::min(out_size, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct ConvDims {
  Index n, c, h, w, f, kh, kw, stride, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const ConvSpec& spec) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_same_dtype(input, weight, "conv2d");
  if (spec.stride < 1) {
    throw ConfigError("conv2d stride must be >= 1");
  }
  if (input.dim(1) != spec.in_channels) {
    throw DimensionError(axis_mismatch("conv2d input", "C (axis 1)", input.dim(1),
                                       "spec.in_channels", spec.in_channels));
  }
  if (weight.dim(0) != spec.out_channels) {
    throw DimensionError(axis_mismatch("conv2d weight", "F (axis 0)", weight.dim(0),
                                       "spec.out_channels", spec.out_channels));
  }
  if (weight.dim(1) != spec.in_channels) {
    throw DimensionError(axis_mismatch("conv2d weight", "C (axis 1)", weight.dim(1),
                                       "input C (axis 1)", input.dim(1)));
  }
  if (weight.dim(2) != spec.kernel_h || weight.dim(3) != spec.kernel_w) {
    throw DimensionError("conv2d weight: kernel axes (2,3) are " + std::to_string(weight.dim(2)) +
                         "x" + std::to_string(weight.dim(3)) + ", spec says " +
                         std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w));
  }
  ConvDims d{};
  d.n = static_cast<Index>(input.dim(0));
  d.c = static_cast<Index>(input.dim(1));
  d.h = static_cast<Index>(input.dim(2));
  d.w = static_cast<Index>(input.dim(3));
  d.f = static_cast<Index>(spec.out_channels);
  d.kh = static_cast<Index>(spec.kernel_h);
  d.kw = static_cast<Index>(spec.kernel_w);
  d.stride = static_cast<Index>(spec.stride);
  d.pad = static_cast<Index>(spec.padding);
  d.oh = static_cast<Index>(spec.out_h(input.dim(2)));
  d.ow = static_cast<Index>(spec.out_w(input.dim(3)));
  return d;
}

template <typename T>
void conv_forward(const ConvDims& d, const T* x, const T* w, const T* b, T* y) {
  const Index plane_in = d.h * d.w;
  const Index plane_out = d.oh * d.ow;
  for (Index n = 0; n < d.n; ++n) {
    for (Index f = 0; f < d.f; ++f) {
      T* yp = y + (n * d.f + f) * plane_out;
      std::fill(yp, yp + plane_out, T{0});
      for (Index c = 0; c < d.c; ++c) {
        const T* xp = x + (n * d.c + c) * plane_in;
        const T* wp = w + (f * d.c + c) * d.kh * d.kw;
        for (Index i = 0; i < d.kh; ++i) {
          for (Index j = 0; j < d.kw; ++j) {
            const T wv = wp[i * d.kw + j];
            const auto [lo, hi] = valid_range(d.ow, d.w, d.stride, j - d.pad);
            for (Index oh = 0; oh < d.oh; ++oh) {
              const Index ih = oh * d.stride + i - d.pad;
              if (ih < 0 || ih >= d.h) {
                continue;
              }
              const T* xrow = xp + ih * d.w;
              const Index off = j - d.pad;
              T* yrow = yp + oh * d.ow;
              if (d.stride == 1) {
                for (Index ow = lo; ow < hi; ++ow) {
                  yrow[ow] += wv * xrow[ow + off];
                }
              } else {
                for (Index ow = lo; ow < hi; ++ow) {
                  yrow[ow] += wv * xrow[ow * d.stride + off];
                }
              }
            }
          }
        }
      }
      const T bias = b[f];
      for (Index k = 0; k < plane_out; ++k) {
        yp[k] += bias;
      }
    }
  }
}

template <typename T>
void conv_backward_input(const ConvDims& d, const T* w, const T* gy, T* gx) {
  const Index plane_in = d.h * d.w;
  const Index plane_out = d.oh * d.ow;
  for (Index n = 0; n < d.n; ++n) {
    for (Index c = 0; c < d.c; ++c) {
      T* gxp = gx + (n * d.c + c) * plane_in;
      for (Index f = 0; f < d.f; ++f) {
        const T* gyp = gy + (n * d.f + f) * plane_out;
        const T* wp = w + (f * d.c + c) * d.kh * d.kw;
        for (Index i = 0; i < d.kh; ++i) {
          for (Index j = 0; j < d.kw; ++j) {
            const T wv = wp[i * d.kw + j];
            const auto [lo, hi] = valid_range(d.ow, d.w, d.stride, j - d.pad);
            for (Index oh = 0; oh < d.oh; ++oh) {
              const Index ih = oh * d.stride + i - d.pad;
              if (ih < 0 || ih >= d.h) {
                continue;
              }
              T* gxrow = gxp + ih * d.w;
              const Index off = j - d.pad;
              const T* gyrow = gyp + oh * d.ow;
              for (Index ow = lo; ow < hi; ++ow) {
                gxrow[ow * d.stride + off] += wv * gyrow[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_params(const ConvDims& d, const T* x, const T* gy, T* gw, T* gb) {
  const Index plane_in = d.h * d.w;
  const Index plane_out = d.oh * d.ow;
  for (Index f = 0; f < d.f; ++f) {
    for (Index c = 0; c < d.c; ++c) {
      for (Index i = 0; i < d.kh; ++i) {
        for (Index j = 0; j < d.kw; ++j) {
          const auto [lo, hi] = valid_range(d.ow, d.w, d.stride, j - d.pad);
          double acc = 0.0;
          for (Index n = 0; n < d.n; ++n) {
            const T* xp = x + (n * d.c + c) * plane_in;
            const T* gyp = gy + (n * d.f + f) * plane_out;
            for (Index oh = 0; oh < d.oh; ++oh) {
              const Index ih = oh * d.stride + i - d.pad;
              if (ih < 0 || ih >= d.h) {
                continue;
              }
              const T* xrow = xp + ih * d.w;
              const Index off = j - d.pad;
              const T* gyrow = gyp + oh * d.ow;
              for (Index ow = lo; ow < hi; ++ow) {
                acc += static_cast<double>(gyrow[ow]) *
                       static_cast<double>(xrow[ow * d.stride + off]);
              }
            }
          }
          gw[((f * d.c + c) * d.kh + i) * d.kw + j] = static_cast<T>(acc);
        }
      }
    }
    double bias_acc = 0.0;
    for (Index n = 0; n < d.n; ++n) {
      const T* gyp = gy + (n * d.f + f) * plane_out;
      for (Index k = 0; k < plane_out; ++k) {
        bias_acc += static_cast<double>(gyp[k]);
      }
    }
    gb[f] = static_cast<T>(bias_acc);
  }
}

// Number of channels and per-channel element stride layout for [N,C,...].
struct ChannelLayout {
  std::size_t n, c, spatial;
};

ChannelLayout channel_layout(const Tensor& x, const std::string& what) {
  if (x.rank() < 2) {
    throw DimensionError(what + " input must have rank >= 2, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  return {n, c, x.numel() / (n * c)};
}

}  // namespace

std::size_t ConvSpec::out_h(std::size_t in_h) const {
  const auto padded = static_cast<Index>(in_h + 2 * padding);
  const auto k = static_cast<Index>(kernel_h);
  if (stride < 1 || padded < k || (padded - k) % static_cast<Index>(stride) != 0) {
    throw DimensionError("conv geometry: height " + std::to_string(in_h) + " with padding " +
                         std::to_string(padding) + ", kernel " + std::to_string(kernel_h) +
                         ", stride " + std::to_string(stride) +
                         " does not give an integer output height");
  }
  return static_cast<std::size_t>((padded - k) / static_cast<Index>(stride) + 1);
}

std::size_t ConvSpec::out_w(std::size_t in_w) const {
  const auto padded = static_cast<Index>(in_w + 2 * padding);
  const auto k = static_cast<Index>(kernel_w);
  if (stride < 1 || padded < k || (padded - k) % static_cast<Index>(stride) != 0) {
    throw DimensionError("conv geometry: width " + std::to_string(in_w) + " with padding " +
                         std::to_string(padding) + ", kernel " + std::to_string(kernel_w) +
                         ", stride " + std::to_string(stride) +
                         " does not give an integer output width");
  }
  return static_cast<std::size_t>((padded - k) / static_cast<Index>(stride) + 1);
}

namespace ops {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
  const ConvDims d = conv_dims(input, weight, spec);
  require_rank(bias, 1, "conv2d bias");
  require_same_dtype(input, bias, "conv2d bias");
  if (bias.dim(0) != spec.out_channels) {
    throw DimensionError(axis_mismatch("conv2d bias", "axis 0", bias.dim(0), "spec.out_channels",
                                       spec.out_channels));
  }
  Tensor out({input.dim(0), spec.out_channels, static_cast<std::size_t>(d.oh),
              static_cast<std::size_t>(d.ow)},
             input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    conv_forward<T>(d, input.data<T>().data(), weight.data<T>().data(), bias.data<T>().data(),
                    out.mutable_data<T>().data());
  });
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          const ConvSpec& spec, bool need_input, bool need_params) {
  const ConvDims d = conv_dims(input, weight, spec);
  const Shape expected{input.dim(0), spec.out_channels, static_cast<std::size_t>(d.oh),
                       static_cast<std::size_t>(d.ow)};
  if (grad_out.shape() != expected) {
    throw DimensionError("conv2d backward: gradient shape " + to_string(grad_out.shape()) +
                         " does not match output shape " + to_string(expected));
  }
  ConvGrads grads;
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    if (need_input) {
      grads.input = Tensor(input.shape(), input.dtype());
      conv_backward_input<T>(d, weight.data<T>().data(), grad_out.data<T>().data(),
                             grads.input.mutable_data<T>().data());
    }
    if (need_params) {
      grads.weight = Tensor(weight.shape(), weight.dtype());
      grads.bias = Tensor({spec.out_channels}, weight.dtype());
      conv_backward_params<T>(d, input.data<T>().data(), grad_out.data<T>().data(),
                              grads.weight.mutable_data<T>().data(),
                              grads.bias.mutable_data<T>().data());
    }
  });
  return grads;
}

MaxPoolResult maxpool2d(const Tensor& input) {
  require_rank(input, 4, "maxpool2d input");
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2d: spatial axes (2,3) must be even, got H=" + std::to_string(h) +
                         " W=" + std::to_string(w));
  }
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  MaxPoolResult result;
  result.output = Tensor({input.dim(0), input.dim(1), oh, ow}, input.dtype());
  result.argmax.resize(planes * oh * ow);
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto y = result.output.mutable_data<T>();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* xp = x.data() + p * h * w;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          std::size_t best = (2 * i) * w + 2 * j;
          T best_value = xp[best];
          const std::size_t candidates[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j,
                                             (2 * i + 1) * w + 2 * j + 1};
          for (std::size_t k : candidates) {
            if (xp[k] > best_value) {
              best_value = xp[k];
              best = k;
            }
          }
          const std::size_t o = p * oh * ow + i * ow + j;
          y[o] = best_value;
          result.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  });
  return result;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                          const Tensor& grad_out) {
  Tensor grad(input_shape, grad_out.dtype());
  const std::size_t plane_in = input_shape[2] * input_shape[3];
  const std::size_t plane_out = plane_in / 4;
  if (argmax.size() != grad_out.numel()) {
    throw DimensionError("maxpool2d backward: gradient does not match recorded output");
  }
  visit_dtype(grad_out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gy = grad_out.data<T>();
    auto gx = grad.mutable_data<T>();
    for (std::size_t o = 0; o < gy.size(); ++o) {
      const std::size_t plane = o / plane_out;
      gx[plane * plane_in + argmax[o]] += gy[o];
    }
  });
  return grad;
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool input");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t area = input.dim(2) * input.dim(3);
  Tensor out({input.dim(0), input.dim(1)}, input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto y = out.mutable_data<T>();
    for (std::size_t p = 0; p < planes; ++p) {
      double acc = 0.0;
      for (std::size_t k = 0; k < area; ++k) {
        acc += static_cast<double>(x[p * area + k]);
      }
      y[p] = static_cast<T>(acc / static_cast<double>(area));
    }
  });
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  Tensor grad(input_shape, grad_out.dtype());
  const std::size_t area = input_shape[2] * input_shape[3];
  visit_dtype(grad_out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gy = grad_out.data<T>();
    auto gx = grad.mutable_data<T>();
    const T inv = static_cast<T>(1.0 / static_cast<double>(area));
    for (std::size_t p = 0; p < gy.size(); ++p) {
      std::fill(gx.begin() + static_cast<Index>(p * area),
                gx.begin() + static_cast<Index>((p + 1) * area), gy[p] * inv);
    }
  });
  return grad;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weight, 2, "dense weight");
  require_rank(bias, 1, "dense bias");
  require_same_dtype(input, weight, "dense");
  require_same_dtype(input, bias, "dense bias");
  if (input.dim(1) != weight.dim(0)) {
    throw DimensionError(axis_mismatch("dense", "input D (axis 1)", input.dim(1),
                                       "weight D (axis 0)", weight.dim(0)));
  }
  if (bias.dim(0) != weight.dim(1)) {
    throw DimensionError(axis_mismatch("dense", "bias M (axis 0)", bias.dim(0),
                                       "weight M (axis 1)", weight.dim(1)));
  }
  const std::size_t n = input.dim(0);
  const std::size_t din = input.dim(1);
  const std::size_t m = weight.dim(1);
  Tensor out({n, m}, input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto wt = weight.data<T>();
    auto b = bias.data<T>();
    auto y = out.mutable_data<T>();
    for (std::size_t r = 0; r < n; ++r) {
      T* yrow = y.data() + r * m;
      for (std::size_t k = 0; k < din; ++k) {
        const T xv = x[r * din + k];
        const T* wrow = wt.data() + k * m;
        for (std::size_t j = 0; j < m; ++j) {
          yrow[j] += xv * wrow[j];
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        yrow[j] += b[j];
      }
    }
  });
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          bool need_input, bool need_params) {
  const std::size_t n = input.dim(0);
  const std::size_t din = input.dim(1);
  const std::size_t m = weight.dim(1);
  if (grad_out.shape() != Shape{n, m}) {
    throw DimensionError("dense backward: gradient shape " + to_string(grad_out.shape()) +
                         " does not match output shape " + to_string(Shape{n, m}));
  }
  DenseGrads grads;
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto wt = weight.data<T>();
    auto gy = grad_out.data<T>();
    if (need_input) {
      grads.input = Tensor(input.shape(), input.dtype());
      auto gx = grads.input.mutable_data<T>();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < din; ++k) {
          T acc{0};
          for (std::size_t j = 0; j < m; ++j) {
            acc += gy[r * m + j] * wt[k * m + j];
          }
          gx[r * din + k] = acc;
        }
      }
    }
    if (need_params) {
      grads.weight = Tensor(weight.shape(), weight.dtype());
      grads.bias = Tensor({m}, weight.dtype());
      auto gw = grads.weight.mutable_data<T>();
      auto gb = grads.bias.mutable_data<T>();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < din; ++k) {
          const T xv = x[r * din + k];
          T* gwrow = gw.data() + k * m;
          for (std::size_t j = 0; j < m; ++j) {
            gwrow[j] += xv * gy[r * m + j];
          }
        }
        for (std::size_t j = 0; j < m; ++j) {
          gb[j] += gy[r * m + j];
        }
      }
    }
  });
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape(), input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto y = out.mutable_data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = x[i] > T{0} ? x[i] : T{0};
    }
  });
  return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "relu backward");
  Tensor grad(output.shape(), output.dtype());
  visit_dtype(output.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto y = output.data<T>();
    auto gy = grad_out.data<T>();
    auto gx = grad.mutable_data<T>();
    for (std::size_t i = 0; i < y.size(); ++i) {
      gx[i] = y[i] > T{0} ? gy[i] : T{0};
    }
  });
  return grad;
}

Tensor softmax(const Tensor& input) {
  if (!input.defined() || input.rank() < 1) {
    throw DimensionError("softmax needs at least one axis");
  }
  const std::size_t k = input.shape().back();
  const std::size_t rows = input.numel() / k;
  Tensor out(input.shape(), input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto y = out.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * k;
      T* yr = y.data() + r * k;
      const T peak = *std::max_element(xr, xr + k);
      T total{0};
      for (std::size_t j = 0; j < k; ++j) {
        yr[j] = std::exp(xr[j] - peak);
        total += yr[j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        yr[j] /= total;
      }
    }
  });
  return out;
}

Tensor softmax_backward(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "softmax backward");
  const std::size_t k = output.shape().back();
  const std::size_t rows = output.numel() / k;
  Tensor grad(output.shape(), output.dtype());
  visit_dtype(output.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto y = output.data<T>();
    auto gy = grad_out.data<T>();
    auto gx = grad.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < k; ++j) {
        dot += gy[r * k + j] * y[r * k + j];
      }
      for (std::size_t j = 0; j < k; ++j) {
        gx[r * k + j] = y[r * k + j] * (gy[r * k + j] - dot);
      }
    }
  });
  return grad;
}

BatchNormResult batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                          BatchNormState& state, Mode mode, bool update_running) {
  if (!(state.epsilon > 0.0)) {
    throw ConfigError("batchnorm epsilon must be > 0");
  }
  const ChannelLayout lay = channel_layout(input, "batchnorm");
  const std::array<const Tensor*, 4> params{&gamma, &beta, &state.running_mean,
                                            &state.running_var};
  for (const Tensor* t : params) {
    require_rank(*t, 1, "batchnorm parameter");
    if (t->dim(0) != lay.c) {
      throw DimensionError(axis_mismatch("batchnorm", "input C (axis 1)", lay.c,
                                         "parameter length", t->dim(0)));
    }
    require_same_dtype(input, *t, "batchnorm");
  }
  BatchNormResult result;
  result.output = Tensor(input.shape(), input.dtype());
  result.normalized = Tensor(input.shape(), input.dtype());
  result.inv_std.resize(lay.c);
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto y = result.output.mutable_data<T>();
    auto xhat = result.normalized.mutable_data<T>();
    auto g = gamma.data<T>();
    auto b = beta.data<T>();
    const double count = static_cast<double>(lay.n * lay.spatial);
    std::vector<double> mean(lay.c);
    std::vector<double> var(lay.c);
    if (mode == Mode::train) {
      for (std::size_t c = 0; c < lay.c; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < lay.n; ++n) {
          const T* xp = x.data() + (n * lay.c + c) * lay.spatial;
          for (std::size_t s = 0; s < lay.spatial; ++s) {
            acc += static_cast<double>(xp[s]);
          }
        }
        mean[c] = acc / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < lay.n; ++n) {
          const T* xp = x.data() + (n * lay.c + c) * lay.spatial;
          for (std::size_t s = 0; s < lay.spatial; ++s) {
            const double dlt = static_cast<double>(xp[s]) - mean[c];
            sq += dlt * dlt;
          }
        }
        var[c] = sq / count;
      }
      if (update_running) {
        auto rm = state.running_mean.mutable_data<T>();
        auto rv = state.running_var.mutable_data<T>();
        for (std::size_t c = 0; c < lay.c; ++c) {
          rm[c] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(rm[c]) +
                                 state.momentum * mean[c]);
          rv[c] = static_cast<T>((1.0 - state.momentum) * static_cast<double>(rv[c]) +
                                 state.momentum * var[c]);
        }
      }
    } else {
      auto rm = state.running_mean.data<T>();
      auto rv = state.running_var.data<T>();
      for (std::size_t c = 0; c < lay.c; ++c) {
        mean[c] = static_cast<double>(rm[c]);
        var[c] = static_cast<double>(rv[c]);
      }
    }
    for (std::size_t c = 0; c < lay.c; ++c) {
      result.inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
    }
    for (std::size_t n = 0; n < lay.n; ++n) {
      for (std::size_t c = 0; c < lay.c; ++c) {
        const std::size_t base = (n * lay.c + c) * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) {
          const double xh = (static_cast<double>(x[base + s]) - mean[c]) * result.inv_std[c];
          xhat[base + s] = static_cast<T>(xh);
          y[base + s] = static_cast<T>(xh * static_cast<double>(g[c]) + static_cast<double>(b[c]));
        }
      }
    }
  });
  return result;
}

BatchNormGrads batchnorm_backward(const BatchNormResult& forward, const Tensor& gamma,
                                  const Tensor& grad_out, Mode mode) {
  require_same_shape(forward.normalized, grad_out, "batchnorm backward");
  const ChannelLayout lay = channel_layout(grad_out, "batchnorm backward");
  BatchNormGrads grads;
  grads.input = Tensor(grad_out.shape(), grad_out.dtype());
  grads.gamma = Tensor({lay.c}, grad_out.dtype());
  grads.beta = Tensor({lay.c}, grad_out.dtype());
  visit_dtype(grad_out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto gy = grad_out.data<T>();
    auto xhat = forward.normalized.data<T>();
    auto g = gamma.data<T>();
    auto gx = grads.input.mutable_data<T>();
    auto gg = grads.gamma.mutable_data<T>();
    auto gb = grads.beta.mutable_data<T>();
    const double count = static_cast<double>(lay.n * lay.spatial);
    for (std::size_t c = 0; c < lay.c; ++c) {
      double sum_gy = 0.0;
      double sum_gy_xhat = 0.0;
      for (std::size_t n = 0; n < lay.n; ++n) {
        const std::size_t base = (n * lay.c + c) * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) {
          sum_gy += static_cast<double>(gy[base + s]);
          sum_gy_xhat += static_cast<double>(gy[base + s]) * static_cast<double>(xhat[base + s]);
        }
      }
      gg[c] = static_cast<T>(sum_gy_xhat);
      gb[c] = static_cast<T>(sum_gy);
      const double scale = static_cast<double>(g[c]) * forward.inv_std[c];
      for (std::size_t n = 0; n < lay.n; ++n) {
        const std::size_t base = (n * lay.c + c) * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) {
          double v = static_cast<double>(gy[base + s]);
          if (mode == Mode::train) {
            v -= sum_gy / count + static_cast<double>(xhat[base + s]) * sum_gy_xhat / count;
          }
          gx[base + s] = static_cast<T>(scale * v);
        }
      }
    }
  });
  return grads;
}

DropoutResult dropout(const Tensor& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) {
    return {input, Tensor{}};
  }
  DropoutResult result;
  result.mask = Tensor(input.shape(), input.dtype());
  result.output = Tensor(input.shape(), input.dtype());
  visit_dtype(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = input.data<T>();
    auto mask = result.mask.mutable_data<T>();
    auto y = result.output.mutable_data<T>();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = uniform01(rng) >= rate ? keep_scale : T{0};
      y[i] = x[i] * mask[i];
    }
  });
  return result;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
  if (!mask.defined()) {
    return grad_out;
  }
  return mul(mask, grad_out);
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a.clone();
  accumulate(out, b);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) {
      o[i] = x[i] * y[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape(), a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto o = out.mutable_data<T>();
    const T f = static_cast<T>(factor);
    for (std::size_t i = 0; i < x.size(); ++i) {
      o[i] = x[i] * f;
    }
  });
  return out;
}

void accumulate(Tensor& acc, const Tensor& g) {
  require_same_shape(acc, g, "accumulate");
  visit_dtype(acc.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = g.data<T>();
    auto dst = acc.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] += src[i];
    }
  });
}

double sum(const Tensor& a) {
  return visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    double acc = 0.0;
    for (T v : a.data<T>()) {
      acc += static_cast<double>(v);
    }
    return acc;
  });
}

Tensor resize_bilinear(const Tensor& planes, std::size_t out_h, std::size_t out_w,
                       ResizeAlign align) {
  require_rank(planes, 3, "resize_bilinear input");
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear: output size must be positive");
  }
  const std::size_t channels = planes.dim(0);
  const std::size_t in_h = planes.dim(1);
  const std::size_t in_w = planes.dim(2);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [align](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = 0.0;
      if (align == ResizeAlign::corners) {
        src = out == 1 ? 0.0
                       : static_cast<double>(o * (in - 1)) / static_cast<double>(out - 1);
      } else {
        src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) -
              0.5;
      }
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      result[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto rows = taps(in_h, out_h);
  const auto cols = taps(in_w, out_w);

  Tensor out({channels, out_h, out_w}, planes.dtype());
  visit_dtype(planes.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = planes.data<T>();
    auto y = out.mutable_data<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xp = x.data() + c * in_h * in_w;
      T* yp = y.data() + c * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const Tap& r = rows[i];
        for (std::size_t j = 0; j < out_w; ++j) {
          const Tap& q = cols[j];
          const double a = static_cast<double>(xp[r.lo * in_w + q.lo]);
          const double b = static_cast<double>(xp[r.lo * in_w + q.hi]);
          const double cc = static_cast<double>(xp[r.hi * in_w + q.lo]);
          const double d = static_cast<double>(xp[r.hi * in_w + q.hi]);
          const double top = a + (b - a) * q.frac;
          const double bottom = cc + (d - cc) * q.frac;
          yp[i * out_w + j] = static_cast<T>(top + (bottom - top) * r.frac);
        }
      }
    }
  });
  return out;
}

}  // namespace ops
}  // namespace eyedex

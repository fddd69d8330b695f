#include "eyedex/augment.hpp"

#include <algorithm>
#include <cmath>

namespace eyedex {

void AugmentParams::validate() const {
  if (!(shear_range >= 0.0 && shear_range < 1.0)) {
    throw ConfigError("shear_range must be in [0, 1)");
  }
  if (!(zoom_range >= 0.0 && zoom_range < 1.0)) {
    throw ConfigError("zoom_range must be in [0, 1)");
  }
}

AffineDraw sample_draw(const AugmentParams& params, Rng& rng) {
  AffineDraw draw;
  // Always consume the same number of draws so the stream stays aligned
  // across configurations.
  const double u_shear = uniform01(rng);
  const double u_zx = uniform01(rng);
  const double u_zy = uniform01(rng);
  const double u_flip = uniform01(rng);
  draw.shear = params.shear_range * (2.0 * u_shear - 1.0);
  draw.zoom_x = 1.0 + params.zoom_range * (2.0 * u_zx - 1.0);
  draw.zoom_y = 1.0 + params.zoom_range * (2.0 * u_zy - 1.0);
  draw.flip = params.vertical_flip && u_flip < 0.5;
  return draw;
}

Tensor apply_affine(const Tensor& image, const AffineDraw& draw) {
  if (image.rank() != 3) {
    throw DimensionError("apply_affine expects [C,H,W], got " + to_string(image.shape()));
  }
  const std::size_t channels = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double max_y = static_cast<double>(h - 1);
  const double max_x = static_cast<double>(w - 1);

  Tensor out(image.shape(), image.dtype());
  visit_dtype(image.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = image.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < h; ++i) {
      const double row = draw.flip ? max_y - static_cast<double>(i) : static_cast<double>(i);
      const double dy = (row - cy) * draw.zoom_y;
      for (std::size_t j = 0; j < w; ++j) {
        const double dx = (static_cast<double>(j) - cx) * draw.zoom_x;
        const double sx = std::clamp(cx + dx + draw.shear * dy, 0.0, max_x);
        const double sy = std::clamp(cy + dy, 0.0, max_y);
        const auto x0 = static_cast<std::size_t>(std::floor(sx));
        const auto y0 = static_cast<std::size_t>(std::floor(sy));
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fx = sx - static_cast<double>(x0);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < channels; ++c) {
          const T* p = src.data() + c * h * w;
          const double a = static_cast<double>(p[y0 * w + x0]);
          const double b = static_cast<double>(p[y0 * w + x1]);
          const double cc = static_cast<double>(p[y1 * w + x0]);
          const double d = static_cast<double>(p[y1 * w + x1]);
          const double top = a + (b - a) * fx;
          const double bottom = cc + (d - cc) * fx;
          const double v = top + (bottom - top) * fy;
          dst[c * h * w + i * w + j] = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  });
  return out;
}

Tensor augment(const Tensor& image, const AugmentParams& params, Rng& rng) {
  return apply_affine(image, sample_draw(params, rng));
}

}  // namespace eyedex

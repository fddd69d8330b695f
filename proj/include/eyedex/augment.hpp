#pragma once

#include <cstdint>

#include "eyedex/rng.hpp"
#include "eyedex/tensor.hpp"

namespace eyedex {

/// Random geometric augmentation applied to training images.
///
/// shear_range 0.3 draws a shear factor from U(-0.3, 0.3); zoom_range 0.3
/// draws independent per-axis scales from U(0.7, 1.3); vertical_flip flips
/// rows with probability 0.5.
struct AugmentParams {
  double shear_range = 0.3;
  double zoom_range = 0.3;
  bool vertical_flip = true;

  void validate() const;
};

/// One concrete draw of the augmentation parameters.
struct AffineDraw {
  double shear = 0.0;
  double zoom_x = 1.0;
  double zoom_y = 1.0;
  bool flip = false;
};

AffineDraw sample_draw(const AugmentParams& params, Rng& rng);

// Applies the draw to a [C,H,W] image in [0,1]. For each output pixel the
// source location is c + S * Z * (p - c) (rows mirrored first when flipping),
// with c the image center, S = [[1, shear], [0, 1]] acting on (x, y) and
// Z = diag(zoom_x, zoom_y). Sampling is bilinear; out-of-bounds coordinates
// clamp to the nearest edge pixel; output is clamped to [0,1].
Tensor apply_affine(const Tensor& image, const AffineDraw& draw);

Tensor augment(const Tensor& image, const AugmentParams& params, Rng& rng);

}  // namespace eyedex

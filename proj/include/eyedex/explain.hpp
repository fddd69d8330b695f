#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eyedex/image_io.hpp"
#include "eyedex/model.hpp"

namespace eyedex {

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major, in [0,1]
  std::string source_layer;
  std::size_t target_class = 0;
  double raw_max = 0.0;  // maximum before normalization

  // Grad-CAM only: the unrectified map sum_k alpha_k A^k and the channel
  // weights, both at feature-map resolution.
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> raw_cam;
  std::vector<double> channel_weights;

  double at(std::size_t y, std::size_t x) const { return values.at(y * width + x); }
};

/// Grad-CAM for one image ([3,H,W] or [1,3,H,W]) in eval mode. Gradients are
/// taken from the pre-softmax score of `target_class` with respect to the
/// output of `layer` (default: the model's Grad-CAM layer). The rectified map
/// is divided by its maximum and bilinearly upsampled (grid nodes exact) to
/// H x W.
Heatmap gradcam(const Model& model, const Tensor& image, std::size_t target_class,
                const std::optional<std::string>& layer = std::nullopt);

struct OcclusionOptions {
  std::size_t patch = 8;
  std::size_t stride = 4;
  double fill = 0.5;
  std::size_t batch_size = 64;
};

/// Occlusion sensitivity: the drop in the pre-softmax score when a square
/// patch is replaced by `fill`, averaged over the patches covering each pixel
/// and min-max normalized (all zero when every pixel has the same drop).
/// Patch positions step by `stride`; a final position flush with the border
/// is added when the stride does not land on it.
Heatmap occlusion_map(const Model& model, const Tensor& image, std::size_t target_class,
                      const OcclusionOptions& options = {});

// 256-entry colormap: index 0 blue, 128 green, 255 red, linear in between.
const std::vector<std::array<std::uint8_t, 3>>& heatmap_colormap();

/// Alpha-blends the colormapped heatmap over the grayscale version
/// (0.299 R + 0.587 G + 0.114 B) of a preprocessed [3,H,W] image.
Image overlay(const Tensor& image, const Heatmap& heatmap, double alpha = 0.4);

std::string heatmap_csv(const Heatmap& heatmap);
nlohmann::json heatmap_sidecar(const Heatmap& heatmap, const std::string& class_name);

// Spearman rank correlation with average ranks for ties; 0 when either
// input is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace eyedex

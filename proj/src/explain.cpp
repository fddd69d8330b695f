#include "eyedex/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "eyedex/errors.hpp"

namespace eyedex {

using json = nlohmann::json;

namespace {

// Accepts [3,H,W] or [1,3,H,W] and returns [1,3,H,W] in the model dtype.
Tensor as_batch(const Tensor& image, DType dtype) {
  if (image.rank() == 3 && image.dim(0) == 3) {
    return image.reshape({1, 3, image.dim(1), image.dim(2)}).astype(dtype);
  }
  if (image.rank() == 4 && image.dim(0) == 1 && image.dim(1) == 3) {
    return image.astype(dtype);
  }
  throw DimensionError("expected one image [3,H,W] or [1,3,H,W], got " + to_string(image.shape()));
}

void check_class(const Model& model, std::size_t target_class) {
  if (target_class >= model.num_classes()) {
    throw ConfigError("target class " + std::to_string(target_class) + " out of range (K=" +
                      std::to_string(model.num_classes()) + ")");
  }
}

}  // namespace

Heatmap gradcam(const Model& model, const Tensor& image, std::size_t target_class,
                const std::optional<std::string>& layer) {
  check_class(model, target_class);
  const Tensor input = as_batch(image, model.dtype());
  const std::size_t in_h = input.dim(2);
  const std::size_t in_w = input.dim(3);

  Model view = model;
  Graph graph;
  ForwardOptions opts;
  opts.mode = Mode::eval;
  opts.capture_layer = layer.value_or(model.gradcam_layer());
  opts.capture_requires_grad = true;
  const ForwardPass pass = view.forward(graph, input, opts);
  const Tensor& acts = graph.value(*pass.captured);
  if (acts.rank() != 4 || acts.dim(2) * acts.dim(3) < 1) {
    throw DimensionError("layer '" + *opts.capture_layer + "' has no spatial extent (output " +
                         to_string(acts.shape()) + ")");
  }
  const Var score = graph.pick(pass.logits, target_class);
  graph.backward(score);
  const Tensor& grads = graph.grad(*pass.captured);

  const std::size_t channels = acts.dim(1);
  const std::size_t gh = acts.dim(2);
  const std::size_t gw = acts.dim(3);
  const std::size_t plane = gh * gw;
  const auto a = acts.to_vector();
  const auto g = grads.defined() ? grads.to_vector() : std::vector<double>(a.size(), 0.0);

  Heatmap hm;
  hm.source_layer = *opts.capture_layer;
  hm.target_class = target_class;
  hm.grid_h = gh;
  hm.grid_w = gw;
  hm.channel_weights.assign(channels, 0.0);
  hm.raw_cam.assign(plane, 0.0);
  for (std::size_t k = 0; k < channels; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      s += g[k * plane + i];
    }
    hm.channel_weights[k] = s / static_cast<double>(plane);
  }
  for (std::size_t k = 0; k < channels; ++k) {
    const double alpha = hm.channel_weights[k];
    for (std::size_t i = 0; i < plane; ++i) {
      hm.raw_cam[i] += alpha * a[k * plane + i];
    }
  }

  Tensor cam({1, gh, gw}, DType::f64);
  auto c = cam.mutable_data<double>();
  double raw_max = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    c[i] = std::max(hm.raw_cam[i], 0.0);
    raw_max = std::max(raw_max, c[i]);
  }
  hm.raw_max = raw_max;
  if (raw_max > 0.0) {
    for (double& v : c) {
      v /= raw_max;
    }
  }
  const Tensor up = ops::resize_bilinear(cam, in_h, in_w, ops::ResizeAlign::corners);
  hm.height = in_h;
  hm.width = in_w;
  hm.values = up.to_vector();
  for (double& v : hm.values) {
    v = std::clamp(v, 0.0, 1.0);
  }
  return hm;
}

Heatmap occlusion_map(const Model& model, const Tensor& image, std::size_t target_class,
                      const OcclusionOptions& options) {
  check_class(model, target_class);
  const Tensor input = as_batch(image, DType::f64);
  const std::size_t h = input.dim(2);
  const std::size_t w = input.dim(3);
  if (options.patch == 0 || options.patch > std::min(h, w)) {
    throw ConfigError("occlusion patch must be in [1, " + std::to_string(std::min(h, w)) + "]");
  }
  if (options.stride == 0 || options.batch_size == 0) {
    throw ConfigError("occlusion stride and batch size must be positive");
  }
  auto starts = [&](std::size_t extent) {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s + options.patch <= extent; s += options.stride) {
      out.push_back(s);
    }
    if (out.back() + options.patch != extent) {
      out.push_back(extent - options.patch);
    }
    return out;
  };
  const auto ys = starts(h);
  const auto xs = starts(w);
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t y : ys) {
    for (std::size_t x : xs) {
      positions.emplace_back(y, x);
    }
  }

  const auto base_pixels = input.to_vector();
  const std::size_t k = model.num_classes();
  const double base_score = model.logits(input.astype(model.dtype())).at(target_class);
  std::vector<double> drops(positions.size());
  for (std::size_t start = 0; start < positions.size(); start += options.batch_size) {
    const std::size_t n = std::min(options.batch_size, positions.size() - start);
    std::vector<double> batch(n * base_pixels.size());
    for (std::size_t b = 0; b < n; ++b) {
      auto* dst = batch.data() + b * base_pixels.size();
      std::copy(base_pixels.begin(), base_pixels.end(), dst);
      const auto [py, px] = positions[start + b];
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = py; y < py + options.patch; ++y) {
          for (std::size_t x = px; x < px + options.patch; ++x) {
            dst[(c * h + y) * w + x] = options.fill;
          }
        }
      }
    }
    const Tensor scores =
        model.logits(Tensor::from_values({n, 3, h, w}, batch, model.dtype()));
    for (std::size_t b = 0; b < n; ++b) {
      drops[start + b] = base_score - scores.at(b * k + target_class);
    }
  }

  std::vector<double> total(h * w, 0.0);
  std::vector<std::size_t> coverage(h * w, 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto [py, px] = positions[i];
    for (std::size_t y = py; y < py + options.patch; ++y) {
      for (std::size_t x = px; x < px + options.patch; ++x) {
        total[y * w + x] += drops[i];
        ++coverage[y * w + x];
      }
    }
  }
  for (std::size_t i = 0; i < total.size(); ++i) {
    total[i] /= static_cast<double>(coverage[i]);
  }
  const auto [lo_it, hi_it] = std::minmax_element(total.begin(), total.end());
  const double lo = *lo_it;
  const double hi = *hi_it;

  Heatmap hm;
  hm.height = h;
  hm.width = w;
  hm.source_layer = "occlusion";
  hm.target_class = target_class;
  hm.raw_max = hi;
  hm.values.assign(h * w, 0.0);
  if (hi > lo) {
    for (std::size_t i = 0; i < total.size(); ++i) {
      hm.values[i] = std::clamp((total[i] - lo) / (hi - lo), 0.0, 1.0);
    }
  }
  return hm;
}

const std::vector<std::array<std::uint8_t, 3>>& heatmap_colormap() {
  static const auto table = [] {
    std::vector<std::array<std::uint8_t, 3>> t(256);
    for (std::size_t i = 0; i < 256; ++i) {
      const double s = static_cast<double>(i) / 255.0;
      double r = 0.0, g = 0.0, b = 0.0;
      if (s < 0.5) {
        g = 2.0 * s;
        b = 1.0 - 2.0 * s;
      } else {
        r = 2.0 * s - 1.0;
        g = 2.0 - 2.0 * s;
      }
      auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
      t[i] = {q(r), q(g), q(b)};
    }
    return t;
  }();
  return table;
}

Image overlay(const Tensor& image, const Heatmap& heatmap, double alpha) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("overlay expects a preprocessed [3,H,W] image, got " +
                         to_string(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (heatmap.height != h || heatmap.width != w || heatmap.values.size() != h * w) {
    throw DimensionError("heatmap " + std::to_string(heatmap.height) + "x" +
                         std::to_string(heatmap.width) + " does not match image " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("overlay alpha must be in [0, 1]");
  }
  const auto px = image.to_vector();
  const auto& cmap = heatmap_colormap();
  Image out(w, h, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double gray = std::clamp(
          0.299 * px[i] + 0.587 * px[h * w + i] + 0.114 * px[2 * h * w + i], 0.0, 1.0);
      const double v = std::clamp(heatmap.values[i], 0.0, 1.0);
      const auto& color = cmap[static_cast<std::size_t>(std::lround(v * 255.0))];
      for (std::size_t c = 0; c < 3; ++c) {
        const double blended = (1.0 - alpha) * gray + alpha * (color[c] / 255.0);
        out.at(y, x, c) =
            static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 1.0) * 255.0));
      }
    }
  }
  return out;
}

std::string heatmap_csv(const Heatmap& heatmap) {
  std::ostringstream out;
  char buf[32];
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    for (std::size_t x = 0; x < heatmap.width; ++x) {
      std::snprintf(buf, sizeof buf, "%.9g", heatmap.at(y, x));
      out << (x == 0 ? "" : ",") << buf;
    }
    out << '\n';
  }
  return out.str();
}

json heatmap_sidecar(const Heatmap& heatmap, const std::string& class_name) {
  return {{"target_class", heatmap.target_class},
          {"class_name", class_name},
          {"layer", heatmap.source_layer},
          {"raw_max", heatmap.raw_max}};
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
      ++j;
    }
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      ranks[order[t]] = r;
    }
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("spearman inputs differ in length");
  }
  if (a.size() < 2) {
    return 0.0;
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace eyedex

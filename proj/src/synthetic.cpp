#include "eyedex/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "eyedex/errors.hpp"

namespace eyedex {

namespace fs = std::filesystem;

std::array<double, 3> blob_color(std::size_t index) {
  static constexpr std::array<std::array<double, 3>, 6> palette{{{0.9, 0.15, 0.1},
                                                                 {0.1, 0.8, 0.2},
                                                                 {0.15, 0.3, 0.95},
                                                                 {0.95, 0.85, 0.1},
                                                                 {0.8, 0.1, 0.85},
                                                                 {0.1, 0.85, 0.9}}};
  return palette[index % palette.size()];
}

Image make_blob_image(std::size_t class_index, Rng& rng, const BlobOptions& options) {
  if (options.size < 8) {
    throw ConfigError("blob images need size >= 8");
  }
  if (!(options.min_radius > 0.0 && options.max_radius >= options.min_radius &&
        2.0 * options.max_radius < static_cast<double>(options.size))) {
    throw ConfigError("blob radius range does not fit the image");
  }
  const double n = static_cast<double>(options.size);
  const double radius = uniform(rng, options.min_radius, options.max_radius);
  const double cy = uniform(rng, radius, n - radius);
  const double cx = uniform(rng, radius, n - radius);
  const auto color = blob_color(class_index);
  std::normal_distribution<double> noise(0.0, options.noise);

  Image img(options.size, options.size, 3);
  for (std::size_t y = 0; y < options.size; ++y) {
    for (std::size_t x = 0; x < options.size; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      // Soft one-pixel edge.
      const double inside = std::clamp(radius + 0.5 - std::sqrt(dy * dy + dx * dx), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = 0.5 + noise(rng);
        const double v = (1.0 - inside) * bg + inside * color[c];
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

std::size_t write_blob_dataset(const fs::path& root, const BlobOptions& options) {
  if (options.class_names.empty() || options.per_class == 0) {
    throw ConfigError("blob dataset needs at least one class and one image per class");
  }
  Rng rng(options.seed);
  std::size_t written = 0;
  char name[64];
  for (std::size_t c = 0; c < options.class_names.size(); ++c) {
    const fs::path dir = root / options.class_names[c];
    fs::create_directories(dir);
    for (std::size_t i = 0; i < options.per_class; ++i) {
      std::snprintf(name, sizeof name, "%04zu.png", i);
      write_png(dir / (options.class_names[c] + "_" + name), make_blob_image(c, rng, options));
      ++written;
    }
  }
  return written;
}

std::size_t write_count_tree(const fs::path& root, const std::vector<std::string>& names,
                             const std::vector<std::size_t>& counts) {
  if (names.size() != counts.size()) {
    throw ConfigError("write_count_tree: names and counts differ in length");
  }
  Image tiny(4, 4, 3);
  std::fill(tiny.pixels.begin(), tiny.pixels.end(), std::uint8_t{128});
  const auto bytes = encode_png(tiny);
  std::size_t written = 0;
  char name[32];
  for (std::size_t c = 0; c < names.size(); ++c) {
    const fs::path dir = root / names[c];
    fs::create_directories(dir);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      std::snprintf(name, sizeof name, "%05zu.png", i);
      write_bytes(dir / name, bytes);
      ++written;
    }
  }
  return written;
}

}  // namespace eyedex

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eyedex/image_io.hpp"
#include "eyedex/rng.hpp"

namespace eyedex {

/// Desk-scale stand-in for fundus images: one colored disc per image on a
/// noisy gray background; the disc color identifies the class.
struct BlobOptions {
  std::vector<std::string> class_names{"Glaucoma", "Healthy", "Myopia"};
  std::size_t per_class = 250;
  std::size_t size = 32;
  double noise = 0.08;  // std-dev of per-pixel background noise, in [0,1] units
  double min_radius = 4.0;
  double max_radius = 8.0;
  std::uint64_t seed = 0;
};

// Disc color of class `index` (cycles through a fixed palette).
std::array<double, 3> blob_color(std::size_t index);

Image make_blob_image(std::size_t class_index, Rng& rng, const BlobOptions& options);

/// Writes <root>/<class>/<class>_<nnnn>.png for every class. Returns the
/// number of files written.
std::size_t write_blob_dataset(const std::filesystem::path& root, const BlobOptions& options);

/// Writes counts[c] tiny PNG files under <root>/<names[c]>/; used to build
/// dataset trees whose only relevant property is the file count.
std::size_t write_count_tree(const std::filesystem::path& root,
                             const std::vector<std::string>& names,
                             const std::vector<std::size_t>& counts);

}  // namespace eyedex

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eyedex/augment.hpp"
#include "eyedex/image_io.hpp"
#include "eyedex/tensor.hpp"

namespace eyedex {

enum class Split { none, train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Sample {
  std::string path;  // relative to Manifest::root
  std::size_t class_index = 0;
  Split split = Split::none;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Dataset index: one entry per image, class names in sorted order.
struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  std::vector<std::size_t> counts;  // per class, all splits
  std::optional<std::uint64_t> seed;
  SplitFractions fractions;

  std::filesystem::path resolve(const Sample& sample) const { return root / sample.path; }
  std::vector<std::size_t> split_counts(Split split) const;  // per class
  std::size_t split_size(Split split) const;
};

// One subdirectory per class holding .png/.jpg/.jpeg files. Class names are
// the sorted subdirectory names; samples are ordered by (class, path). Empty
// class directories produce a warning and a zero count.
Manifest scan_dataset(const std::filesystem::path& root);

// Per class: n_val = floor(f_val * n), n_test = floor(f_test * n), the rest
// train; membership drawn by a seeded shuffle within each class. Classes with
// fewer than 3 samples go entirely to train (with a warning).
Manifest stratified_split(const Manifest& manifest, const SplitFractions& fractions,
                          std::uint64_t seed);

// CSV `path,class_index,class_name,split` plus a JSON sidecar next to it
// (same stem, .json) with class names, counts, seed, fractions, and root.
void write_manifest(const Manifest& manifest, const std::filesystem::path& csv_path);
Manifest read_manifest(const std::filesystem::path& csv_path);
std::filesystem::path manifest_sidecar(const std::filesystem::path& csv_path);

// Bilinear resize to size x size (half-pixel centers), then /255. Gray
// images are replicated to three channels. Output [3,size,size] in [0,1].
Tensor preprocess(const Image& image, std::size_t size = 224, DType dtype = DType::f32);

// Balanced inverse frequency: w_c = N / (K * n_c).
std::vector<double> class_weights(const std::vector<std::size_t>& counts,
                                  const std::vector<std::string>& class_names = {});

struct Batch {
  Tensor images;   // [B,3,S,S]
  Tensor onehot;   // [B,K]
  Tensor weights;  // [B]
  std::vector<std::size_t> labels;
  std::vector<std::size_t> sample_ids;  // indices into Manifest::samples
};

struct LoaderOptions {
  std::size_t batch_size = 64;
  std::size_t input_size = 224;
  std::uint64_t seed = 0;
  DType dtype = DType::f32;
  // Applied to the train split only.
  std::optional<AugmentParams> augment;
  // Per-class loss weights; empty means all ones.
  std::vector<double> class_weights;
  // Keep preprocessed tensors in memory when the split fits in this budget.
  std::size_t cache_bytes = std::size_t{1} << 30;
};

/// Seeded mini-batch iteration over one split.
///
/// The train split is reshuffled each epoch with seed + epoch and augmented
/// per sample from a stream derived from (seed + epoch, position); val/test
/// keep manifest order and are never augmented. The final partial batch is
/// emitted as-is. Undecodable images are skipped with a warning and counted.
class BatchLoader {
 public:
  BatchLoader(const Manifest& manifest, Split split, LoaderOptions options);

  std::size_t size() const { return ids_.size(); }
  std::size_t num_batches() const;
  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();
  // Images skipped in the current epoch.
  std::size_t skipped() const { return skipped_; }

 private:
  std::optional<Tensor> load(std::size_t sample_id);

  const Manifest* manifest_;
  Split split_;
  LoaderOptions options_;
  std::vector<std::size_t> ids_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t skipped_ = 0;
  bool use_cache_ = false;
  std::vector<std::optional<Tensor>> cache_;
  std::vector<bool> failed_;
};

}  // namespace eyedex

#include "eyedex/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "eyedex/log.hpp"
#include "eyedex/ops.hpp"

namespace eyedex {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::size_t floor_share(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
    case Split::none:
      break;
  }
  return "none";
}

Split parse_split(const std::string& name) {
  if (name == "train") {
    return Split::train;
  }
  if (name == "val") {
    return Split::val;
  }
  if (name == "test") {
    return Split::test;
  }
  if (name == "none" || name.empty()) {
    return Split::none;
  }
  throw ConfigError("unknown split '" + name + "' (expected train, val, test)");
}

std::vector<std::size_t> Manifest::split_counts(Split split) const {
  std::vector<std::size_t> out(class_names.size(), 0);
  for (const Sample& s : samples) {
    if (s.split == split) {
      ++out[s.class_index];
    }
  }
  return out;
}

std::size_t Manifest::split_size(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [split](const Sample& s) { return s.split == split; }));
}

Manifest scan_dataset(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw IoError("dataset root " + root.string() + " is not a directory");
  }
  Manifest m;
  m.root = root;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) {
      m.class_names.push_back(entry.path().filename().string());
    }
  }
  std::sort(m.class_names.begin(), m.class_names.end());
  if (m.class_names.empty()) {
    throw IoError("dataset root " + root.string() + " has no class subdirectories");
  }
  m.counts.assign(m.class_names.size(), 0);
  for (std::size_t k = 0; k < m.class_names.size(); ++k) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / m.class_names[k])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) {
        files.push_back(entry.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      log::warn("class '" + m.class_names[k] + "' has no images");
    }
    for (const auto& f : files) {
      m.samples.push_back({m.class_names[k] + "/" + f, k, Split::none});
    }
    m.counts[k] = files.size();
  }
  return m;
}

Manifest stratified_split(const Manifest& manifest, const SplitFractions& fractions,
                          std::uint64_t seed) {
  for (double f : {fractions.train, fractions.val, fractions.test}) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ConfigError("split fractions must lie in [0, 1]");
    }
  }
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  Manifest out = manifest;
  out.seed = seed;
  out.fractions = fractions;
  Rng rng(seed);
  for (std::size_t k = 0; k < out.class_names.size(); ++k) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      if (out.samples[i].class_index == k) {
        ids.push_back(i);
      }
    }
    if (ids.empty()) {
      log::warn("class '" + out.class_names[k] + "' is empty; nothing to split");
      continue;
    }
    if (ids.size() < 3) {
      log::warn("class '" + out.class_names[k] + "' has " + std::to_string(ids.size()) +
                " samples; assigning all to train");
      for (std::size_t i : ids) {
        out.samples[i].split = Split::train;
      }
      continue;
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_val = floor_share(fractions.val, ids.size());
    const std::size_t n_test = floor_share(fractions.test, ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      Split s = Split::train;
      if (r < n_val) {
        s = Split::val;
      } else if (r < n_val + n_test) {
        s = Split::test;
      }
      out.samples[ids[r]].split = s;
    }
  }
  return out;
}

fs::path manifest_sidecar(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void write_manifest(const Manifest& manifest, const fs::path& csv_path) {
  {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write manifest " + csv_path.string());
    }
    out << "path,class_index,class_name,split\n";
    for (const Sample& s : manifest.samples) {
      out << csv_field(s.path) << ',' << s.class_index << ','
          << csv_field(manifest.class_names.at(s.class_index)) << ',' << to_string(s.split)
          << '\n';
    }
    if (!out) {
      throw IoError("failed writing manifest " + csv_path.string());
    }
  }
  json split_counts = json::object();
  for (Split s : {Split::train, Split::val, Split::test}) {
    split_counts[to_string(s)] = manifest.split_counts(s);
  }
  // Stored absolute so the manifest resolves from any working directory.
  json sidecar = {{"root", fs::absolute(manifest.root).lexically_normal().string()},
                  {"class_names", manifest.class_names},
                  {"counts", manifest.counts},
                  {"seed", manifest.seed ? json(*manifest.seed) : json(nullptr)},
                  {"fractions",
                   {{"train", manifest.fractions.train},
                    {"val", manifest.fractions.val},
                    {"test", manifest.fractions.test}}},
                  {"split_counts", split_counts},
                  {"num_samples", manifest.samples.size()}};
  std::ofstream out(manifest_sidecar(csv_path), std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write manifest sidecar " + manifest_sidecar(csv_path).string());
  }
  out << sidecar.dump(2) << '\n';
}

Manifest read_manifest(const fs::path& csv_path) {
  Manifest m;
  {
    std::ifstream in(manifest_sidecar(csv_path));
    if (!in) {
      throw IoError("cannot open manifest sidecar " + manifest_sidecar(csv_path).string());
    }
    try {
      const json sidecar = json::parse(in);
      m.root = sidecar.at("root").get<std::string>();
      m.class_names = sidecar.at("class_names").get<std::vector<std::string>>();
      m.counts = sidecar.at("counts").get<std::vector<std::size_t>>();
      if (!sidecar.at("seed").is_null()) {
        m.seed = sidecar["seed"].get<std::uint64_t>();
      }
      m.fractions.train = sidecar.at("fractions").at("train").get<double>();
      m.fractions.val = sidecar.at("fractions").at("val").get<double>();
      m.fractions.test = sidecar.at("fractions").at("test").get<double>();
    } catch (const json::exception& e) {
      throw IoError("malformed manifest sidecar: " + std::string(e.what()));
    }
  }
  std::ifstream in(csv_path);
  if (!in) {
    throw IoError("cannot open manifest " + csv_path.string());
  }
  std::string line;
  std::getline(in, line);
  if (line.rfind("path,class_index,class_name,split", 0) != 0) {
    throw IoError("manifest " + csv_path.string() + " has an unexpected header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto fields = parse_csv_line(line);
    if (fields.size() != 4) {
      throw IoError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    Sample s;
    s.path = fields[0];
    try {
      s.class_index = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw IoError("manifest line " + std::to_string(line_no) + ": bad class index");
    }
    if (s.class_index >= m.class_names.size() || m.class_names[s.class_index] != fields[2]) {
      throw IoError("manifest line " + std::to_string(line_no) +
                    ": class index and name disagree with the sidecar");
    }
    s.split = parse_split(fields[3]);
    m.samples.push_back(std::move(s));
  }
  return m;
}

Tensor preprocess(const Image& image, std::size_t size, DType dtype) {
  if (image.width == 0 || image.height == 0) {
    throw DecodeError("image has a zero dimension");
  }
  if (image.channels != 1 && image.channels != 3) {
    throw DecodeError("unsupported channel count " + std::to_string(image.channels));
  }
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  Tensor planes({3, h, w}, DType::f64);
  auto p = planes.mutable_data<double>();
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        p[(c * h + y) * w + x] = static_cast<double>(image.at(y, x, src_c));
      }
    }
  }
  Tensor resized = ops::resize_bilinear(planes, size, size, ops::ResizeAlign::half_pixel);
  for (double& v : resized.mutable_data<double>()) {
    v = std::clamp(v / 255.0, 0.0, 1.0);
  }
  return resized.astype(dtype);
}

std::vector<double> class_weights(const std::vector<std::size_t>& counts,
                                  const std::vector<std::string>& class_names) {
  if (counts.empty()) {
    throw ConfigError("class_weights needs at least one class");
  }
  std::size_t total = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      const std::string name = k < class_names.size() ? class_names[k] : std::to_string(k);
      throw ConfigError("class '" + name + "' has zero samples; cannot weight it");
    }
    total += counts[k];
  }
  const double n = static_cast<double>(total);
  const double k = static_cast<double>(counts.size());
  std::vector<double> out(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    out[c] = n / (k * static_cast<double>(counts[c]));
  }
  return out;
}

BatchLoader::BatchLoader(const Manifest& manifest, Split split, LoaderOptions options)
    : manifest_(&manifest), split_(split), options_(std::move(options)) {
  if (options_.batch_size == 0) {
    throw ConfigError("batch_size must be positive");
  }
  if (options_.augment) {
    options_.augment->validate();
  }
  if (!options_.class_weights.empty() &&
      options_.class_weights.size() != manifest.class_names.size()) {
    throw ConfigError("class weight vector does not match the class count");
  }
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (manifest.samples[i].split == split) {
      ids_.push_back(i);
    }
  }
  const std::size_t elem = options_.dtype == DType::f64 ? 8 : 4;
  const std::size_t footprint = ids_.size() * 3 * options_.input_size * options_.input_size * elem;
  use_cache_ = footprint <= options_.cache_bytes;
  if (use_cache_) {
    cache_.resize(ids_.size());
  }
  failed_.assign(ids_.size(), false);
  start_epoch(0);
}

std::size_t BatchLoader::num_batches() const {
  return (ids_.size() + options_.batch_size - 1) / options_.batch_size;
}

void BatchLoader::start_epoch(std::size_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  skipped_ = 0;
  order_.resize(ids_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (split_ == Split::train) {
    Rng rng(options_.seed + epoch);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Tensor> BatchLoader::load(std::size_t local) {
  if (use_cache_ && cache_[local]) {
    return cache_[local];
  }
  if (failed_[local]) {
    return std::nullopt;
  }
  const Sample& s = manifest_->samples[ids_[local]];
  try {
    Tensor t = preprocess(read_image(manifest_->resolve(s)), options_.input_size, options_.dtype);
    if (use_cache_) {
      cache_[local] = t;
    }
    return t;
  } catch (const IoError& e) {
    failed_[local] = true;
    log::warn(std::string("skipping undecodable image: ") + e.what());
    return std::nullopt;
  }
}

std::optional<Batch> BatchLoader::next() {
  std::vector<std::pair<std::size_t, Tensor>> picked;
  while (cursor_ < order_.size() && picked.size() < options_.batch_size) {
    const std::size_t position = cursor_++;
    const std::size_t local = order_[position];
    std::optional<Tensor> img = load(local);
    if (!img) {
      ++skipped_;
      continue;
    }
    if (split_ == Split::train && options_.augment) {
      Rng rng(derive_seed(options_.seed + epoch_, position));
      img = augment(*img, *options_.augment, rng);
    }
    picked.emplace_back(local, std::move(*img));
  }
  if (picked.empty()) {
    return std::nullopt;
  }
  const std::size_t b = picked.size();
  const std::size_t s = options_.input_size;
  const std::size_t k = manifest_->class_names.size();
  Batch batch;
  batch.images = Tensor({b, 3, s, s}, options_.dtype);
  batch.onehot = Tensor({b, k}, options_.dtype);
  batch.weights = Tensor({b}, options_.dtype);
  visit_dtype(options_.dtype, [&](auto tag) {
    using T = decltype(tag);
    auto images = batch.images.mutable_data<T>();
    auto onehot = batch.onehot.mutable_data<T>();
    auto weights = batch.weights.mutable_data<T>();
    const std::size_t per = 3 * s * s;
    for (std::size_t i = 0; i < b; ++i) {
      const Sample& sample = manifest_->samples[ids_[picked[i].first]];
      auto src = picked[i].second.template data<T>();
      std::copy(src.begin(), src.end(), images.begin() + static_cast<std::ptrdiff_t>(i * per));
      onehot[i * k + sample.class_index] = T{1};
      weights[i] = options_.class_weights.empty()
                       ? T{1}
                       : static_cast<T>(options_.class_weights[sample.class_index]);
      batch.labels.push_back(sample.class_index);
      batch.sample_ids.push_back(ids_[picked[i].first]);
    }
  });
  if (cursor_ >= order_.size() && skipped_ > 0) {
    log::warn(to_string(split_) + " epoch " + std::to_string(epoch_) + ": skipped " +
              std::to_string(skipped_) + " undecodable image(s)");
  }
  return batch;
}

}  // namespace eyedex

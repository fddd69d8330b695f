#include "eyedex/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "eyedex/errors.hpp"

namespace eyedex {
namespace {

using json = nlohmann::json;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void uint(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void str(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const std::string& what) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + what);
    }
  }
  template <typename U>
  U uint(const std::string& what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return value;
  }
  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* raw(std::size_t n, const std::string& what) {
    need(n, what);
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

template <typename T>
void write_values(Writer& w, std::span<const T> values) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : values) {
    w.uint(std::bit_cast<U>(v));
  }
}

template <typename T>
void read_values(const std::uint8_t* src, std::span<T> dst) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      bits |= static_cast<U>(static_cast<U>(src[i * sizeof(U) + b]) << (8 * b));
    }
    dst[i] = std::bit_cast<T>(bits);
  }
}

json metadata_json(const Model& model, const CheckpointMetadata& meta) {
  const ModelSpec& spec = model.spec();
  json head = {{"dense_units", spec.head.dense_units},
               {"dropout_rate", spec.head.dropout_rate},
               {"l2_lambda", spec.head.l2_lambda}};
  json order = json::array();
  bool in_head = false;
  for (const Layer& layer : model.layers()) {
    in_head = in_head || std::holds_alternative<GlobalAvgPoolLayer>(layer);
    if (in_head) {
      order.push_back(kind_name(layer));
    }
  }
  head["order"] = order;
  json trainable = json::array();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    trainable.push_back(model.layer_trainable(i));
  }
  return {{"architecture", to_string(spec.variant)},
          {"num_classes", spec.num_classes},
          {"input_size", spec.input_size},
          {"head", head},
          {"class_names", spec.class_names},
          {"trainable", trainable},
          {"gradcam_layer", model.gradcam_layer()},
          {"dtype", to_string(model.dtype())},
          {"epoch", meta.epoch},
          {"val_metric", meta.val_metric ? json(*meta.val_metric) : json(nullptr)},
          {"extra", meta.extra}};
}

struct Record {
  std::string name;
  Tensor value;
};

struct Parsed {
  json meta;
  std::vector<Record> records;
};

Parsed parse(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kCheckpointMagic, 4)) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = r.uint<std::uint32_t>("metadata length");
  Parsed parsed;
  try {
    parsed.meta = json::parse(r.str(meta_len, "metadata"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  while (!r.done()) {
    Record rec;
    const auto name_len = r.uint<std::uint32_t>("tensor name length");
    rec.name = r.str(name_len, "tensor name");
    const std::string ctx = "tensor '" + rec.name + "'";
    const auto rank = r.uint<std::uint32_t>(ctx + " rank");
    if (rank == 0 || rank > 8) {
      throw CheckpointError(ctx + " has invalid rank " + std::to_string(rank));
    }
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.uint<std::uint64_t>(ctx + " dims");
      if (d == 0 || d > (std::uint64_t{1} << 40)) {
        throw CheckpointError(ctx + " has invalid dimension " + std::to_string(d));
      }
      shape.push_back(static_cast<std::size_t>(d));
    }
    const auto tag = r.uint<std::uint8_t>(ctx + " dtype");
    if (tag > 1) {
      throw CheckpointError(ctx + " has unknown dtype tag " + std::to_string(tag));
    }
    const DType dtype = tag == 0 ? DType::f32 : DType::f64;
    const std::size_t width = dtype == DType::f32 ? 4 : 8;
    const std::size_t count = numel(shape);
    if (count > (std::size_t{1} << 40) / width) {
      throw CheckpointError(ctx + " is implausibly large");
    }
    const std::uint8_t* raw = r.raw(count * width, ctx + " values");
    rec.value = Tensor(shape, dtype);
    visit_dtype(dtype, [&](auto t) {
      using T = decltype(t);
      read_values<T>(raw, rec.value.mutable_data<T>());
    });
    parsed.records.push_back(std::move(rec));
  }
  return parsed;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointMetadata metadata_from(const json& meta) {
  CheckpointMetadata out;
  out.epoch = meta.value("epoch", std::size_t{0});
  if (meta.contains("val_metric") && !meta["val_metric"].is_null()) {
    out.val_metric = meta["val_metric"].get<double>();
  }
  if (meta.contains("extra")) {
    out.extra = meta["extra"];
  }
  return out;
}

void apply_records(Model& model, const Parsed& parsed) {
  std::size_t matched = 0;
  for (const Record& rec : parsed.records) {
    if (!model.has_param(rec.name)) {
      throw CheckpointError("checkpoint tensor '" + rec.name + "' has no counterpart in the " +
                            to_string(model.spec().variant) + " model");
    }
    const Tensor& current = model.param(rec.name);
    if (current.shape() != rec.value.shape()) {
      throw CheckpointError("shape mismatch for tensor '" + rec.name + "': checkpoint has " +
                            to_string(rec.value.shape()) + ", model expects " +
                            to_string(current.shape()));
    }
    model.set_param(rec.name, rec.value);
    ++matched;
  }
  if (matched != model.param_names().size()) {
    for (const auto& name : model.param_names()) {
      bool found = false;
      for (const Record& rec : parsed.records) {
        found = found || rec.name == name;
      }
      if (!found) {
        throw CheckpointError("checkpoint is missing tensor '" + name + "'");
      }
    }
  }
  if (parsed.meta.contains("trainable")) {
    const auto& flags = parsed.meta["trainable"];
    if (flags.size() == model.layers().size()) {
      for (std::size_t i = 0; i < flags.size(); ++i) {
        model.set_layer_trainable(i, flags[i].get<bool>());
      }
    }
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const CheckpointMetadata& meta) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.uint(kCheckpointVersion);
  w.str(metadata_json(model, meta).dump());
  for (const auto& name : model.param_names()) {
    const Tensor& t = model.param(name);
    w.str(name);
    w.uint(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      w.uint(static_cast<std::uint64_t>(d));
    }
    w.uint(static_cast<std::uint8_t>(t.dtype()));
    visit_dtype(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      write_values<T>(w, t.data<T>());
    });
  }
  return w.take();
}

void save_checkpoint(const Model& model, const CheckpointMetadata& meta,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model, meta);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write checkpoint " + tmp.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      throw IoError("failed writing checkpoint " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
  }
}

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const Parsed parsed = parse(bytes);
  const json& meta = parsed.meta;
  try {
    HeadConfig head;
    head.dense_units = meta.at("head").at("dense_units").get<std::size_t>();
    head.dropout_rate = meta.at("head").at("dropout_rate").get<double>();
    head.l2_lambda = meta.at("head").at("l2_lambda").get<double>();
    const DType dtype = meta.at("dtype").get<std::string>() == "f64" ? DType::f64 : DType::f32;
    Model model = build_vgg(parse_variant(meta.at("architecture").get<std::string>()),
                            meta.at("num_classes").get<std::size_t>(), head,
                            meta.at("input_size").get<std::size_t>(), dtype);
    model.set_class_names(meta.at("class_names").get<std::vector<std::string>>());
    apply_records(model, parsed);
    if (meta.contains("gradcam_layer")) {
      model.set_gradcam_layer(meta["gradcam_layer"].get<std::string>());
    }
    return {std::move(model), metadata_from(meta)};
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

CheckpointMetadata load_weights_into(Model& model, const std::filesystem::path& path) {
  const Parsed parsed = parse(read_file(path));
  apply_records(model, parsed);
  return metadata_from(parsed.meta);
}

}  // namespace eyedex

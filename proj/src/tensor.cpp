#include "eyedex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace eyedex {

std::string to_string(DType dtype) { return dtype == DType::f64 ? "f64" : "f32"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32") {
    return DType::f32;
  }
  if (name == "f64") {
    return DType::f64;
  }
  throw ConfigError("unknown dtype '" + name + "' (expected f32 or f64)");
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "," : "") << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  for (std::size_t d : shape_) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
    }
  }
  const std::size_t n = eyedex::numel(shape_);
  if (dtype_ == DType::f64) {
    storage_ = std::make_shared<Storage>(std::vector<double>(n, 0.0));
  } else {
    storage_ = std::make_shared<Storage>(std::vector<float>(n, 0.0F));
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("shape " + to_string(t.shape()) + " holds " + std::to_string(t.numel()) +
                         " values, got " + std::to_string(values.size()));
  }
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.mutable_data<T>();
    std::transform(values.begin(), values.end(), d.begin(),
                   [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return from_values({1}, {value}, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::numel() const { return storage_ ? eyedex::numel(shape_) : 0; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() requires a single-element tensor, shape is " + to_string(shape_));
  }
  return at(0);
}

double Tensor::at(std::size_t flat_index) const {
  if (flat_index >= numel()) {
    throw DimensionError("flat index " + std::to_string(flat_index) + " out of range");
  }
  return visit_dtype(dtype_, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data<T>()[flat_index]);
  });
}

std::vector<double> Tensor::to_vector() const {
  if (!storage_) {
    return {};
  }
  return visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::astype(DType dtype) const {
  if (dtype == dtype_) {
    return *this;
  }
  Tensor out(shape_, dtype);
  out.requires_grad_ = requires_grad_;
  visit_dtype(dtype_, [&](auto src_tag) {
    using S = decltype(src_tag);
    visit_dtype(dtype, [&](auto dst_tag) {
      using D = decltype(dst_tag);
      auto src = data<S>();
      auto dst = out.mutable_data<D>();
      std::transform(src.begin(), src.end(), dst.begin(),
                     [](S v) { return static_cast<D>(v); });
    });
  });
  return out;
}

Tensor Tensor::reshape(Shape shape) const {
  if (eyedex::numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

Tensor Tensor::clone() const {
  Tensor out = *this;
  if (storage_) {
    out.storage_ = std::make_shared<Storage>(*storage_);
  }
  return out;
}

bool Tensor::all_finite() const {
  if (!storage_) {
    return true;
  }
  return visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto d = data<T>();
    return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(v); });
  });
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (defined() != other.defined()) {
    return false;
  }
  if (!defined()) {
    return true;
  }
  if (shape_ != other.shape_ || dtype_ != other.dtype_) {
    return false;
  }
  return visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  });
}

void Tensor::detach() {
  if (storage_ && storage_.use_count() > 1) {
    storage_ = std::make_shared<Storage>(*storage_);
  }
}

}  // namespace eyedex

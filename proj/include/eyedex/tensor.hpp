#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "eyedex/errors.hpp"

namespace eyedex {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);
std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Calls fn with a value-initialized float or double matching `dtype`.
// Usage: visit_dtype(t.dtype(), [&](auto tag) { using T = decltype(tag); ... });
template <typename Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f64) {
    return fn(double{});
  }
  return fn(float{});
}

/// Row-major n-dimensional array of float or double.
///
/// Storage is shared between copies and treated as immutable while shared:
/// `mutable_data()` detaches (copies) the buffer when another Tensor still
/// references it. A default-constructed Tensor is empty (rank 0, no storage)
/// and is used as the "no value" sentinel throughout the engine.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f32);

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, const std::vector<double>& values,
                            DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const { return dtype_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool value) {
    requires_grad_ = value;
    return *this;
  }

  template <typename T>
  std::span<const T> data() const {
    check_dtype<T>();
    const auto& values = std::get<std::vector<T>>(*storage_);
    return {values.data(), values.size()};
  }

  // Copy-on-write: detaches from other holders before handing out access.
  template <typename T>
  std::span<T> mutable_data() {
    check_dtype<T>();
    detach();
    auto& values = std::get<std::vector<T>>(*storage_);
    return {values.data(), values.size()};
  }

  double item() const;
  double at(std::size_t flat_index) const;
  std::vector<double> to_vector() const;

  Tensor astype(DType dtype) const;
  Tensor reshape(Shape shape) const;
  Tensor clone() const;

  bool all_finite() const;
  // Exact element-wise equality including dtype and shape.
  bool bitwise_equal(const Tensor& other) const;

 private:
  using Storage = std::variant<std::vector<float>, std::vector<double>>;

  template <typename T>
  void check_dtype() const {
    if (!storage_) {
      throw DimensionError("access to an empty tensor");
    }
    if (dtype_of<T>() != dtype_) {
      throw ConfigError("tensor dtype is " + to_string(dtype_) + ", requested " +
                        to_string(dtype_of<T>()));
    }
  }
  void detach();

  Shape shape_;
  DType dtype_ = DType::f32;
  std::shared_ptr<Storage> storage_;
  bool requires_grad_ = false;
};

}  // namespace eyedex

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace waiverlab {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Dense row-major f32 array. Extents are positive; numel() == data().size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor vector(std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& storage() const { return data_; }

  // Rank-2 accessors.
  float& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  // Bitwise equality of shape and payload (distinguishes -0.0 from +0.0).
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Kernels. Row loops run under OpenMP; each output element is reduced by a
// single thread in fixed order, so results do not depend on thread count.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// Softmax along the last axis with max subtraction. -inf is accepted as a
// mask sentinel; any other non-finite input or a fully masked slice throws.
Tensor softmax_rows(const Tensor& logits);

// Columns [begin, begin + count) of a rank-2 tensor.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
void set_cols(Tensor& dst, const Tensor& src, std::size_t begin);

double l1_norm(std::span<const float> v);
double l2_norm(std::span<const float> v);
double dot(std::span<const float> a, std::span<const float> b);
inline double l1_norm(const Tensor& v) { return l1_norm(v.data()); }
inline double l2_norm(const Tensor& v) { return l2_norm(v.data()); }

void require_finite(const Tensor& t, const char* what);

}  // namespace waiverlab

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace timely {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. An empty shape denotes a scalar holding one value.
class NdArray {
 public:
  NdArray() : data_(1, 0.0) {}
  explicit NdArray(Shape shape, double fill = 0.0);
  NdArray(Shape shape, std::vector<double> data);

  static NdArray scalar(double v) { return NdArray(Shape{}, std::vector<double>{v}); }
  static NdArray from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static NdArray identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  double item() const;
  bool is_scalar() const noexcept { return data_.size() == 1; }

  NdArray reshaped(Shape shape) const;
  void fill(double v);

  bool operator==(const NdArray& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-differentiable) kernels used by the autograd layer and by the
// retention and benchmark code paths.
namespace nd {

// Output shape of trailing-dimension broadcasting; throws DimensionError naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

NdArray add(const NdArray& a, const NdArray& b);
NdArray sub(const NdArray& a, const NdArray& b);
NdArray mul(const NdArray& a, const NdArray& b);
NdArray div(const NdArray& a, const NdArray& b);
NdArray scale(const NdArray& a, double s);

// Sums a broadcast result back down to `target` (inverse of broadcasting).
NdArray sum_to(const NdArray& grad, const Shape& target);

// [.. x n x k] x [.. x k x m] with broadcast leading dims.
NdArray matmul(const NdArray& a, const NdArray& b);

// c (n x m) (+)= op(a) * op(b) on raw row-major buffers.
void gemm(std::size_t n, std::size_t k, std::size_t m, const double* a, bool trans_a, const double* b,
          bool trans_b, double* c, bool accumulate);

NdArray transpose_last2(const NdArray& a);

double max_abs_diff(const NdArray& a, const NdArray& b);
double sum(const NdArray& a);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace nd
}  // namespace timely

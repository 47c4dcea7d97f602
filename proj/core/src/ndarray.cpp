#include "timely/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "timely/errors.hpp"

namespace timely {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
  }
}

}  // namespace

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(numel(shape_), fill);
}

NdArray::NdArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " values");
  }
}

NdArray NdArray::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& row : rows) {
    if (row.size() != m) throw DimensionError("ragged rows in from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return NdArray({n, m}, std::move(data));
}

NdArray NdArray::identity(std::size_t n) {
  NdArray out({n, n});
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = 1.0;
  return out;
}

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_str(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& NdArray::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double NdArray::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double NdArray::item() const {
  if (data_.size() != 1) throw ContractError("item() on non-scalar array " + shape_str(shape_));
  return data_[0];
}

NdArray NdArray::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return NdArray(std::move(shape), data_);
}

void NdArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

namespace nd {

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Strides of `s` viewed in the rank of `out`, zero on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    const std::size_t axis = i + (r - s.size());
    strides[axis] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

template <class F>
NdArray broadcast_binary(const NdArray& a, const NdArray& b, F f) {
  if (a.shape() == b.shape()) {
    NdArray out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  NdArray out(shape);
  // Suffix fast path: b's shape is a trailing block of a's (bias-style).
  if (shape == a.shape() && b.size() > 0 && a.size() % b.size() == 0 &&
      std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - b.shape().size())) {
    const std::size_t nb = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i % nb]);
    return out;
  }
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  const std::size_t r = shape.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = f(a[oa], b[ob]);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < shape[ax]) break;
      oa -= sa[ax] * idx[ax];
      ob -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace

NdArray add(const NdArray& a, const NdArray& b) { return broadcast_binary(a, b, std::plus<>{}); }
NdArray sub(const NdArray& a, const NdArray& b) { return broadcast_binary(a, b, std::minus<>{}); }
NdArray mul(const NdArray& a, const NdArray& b) { return broadcast_binary(a, b, std::multiplies<>{}); }
NdArray div(const NdArray& a, const NdArray& b) { return broadcast_binary(a, b, std::divides<>{}); }

NdArray scale(const NdArray& a, double s) {
  NdArray out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

NdArray sum_to(const NdArray& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  if (target.size() > grad.rank()) {
    throw DimensionError("cannot reduce " + shape_str(grad.shape()) + " to " + shape_str(target));
  }
  // Validates that target broadcasts to grad's shape.
  if (broadcast_shapes(grad.shape(), target) != grad.shape()) {
    throw DimensionError("cannot reduce " + shape_str(grad.shape()) + " to " + shape_str(target));
  }
  NdArray out(target);
  const Shape& shape = grad.shape();
  const auto st = broadcast_strides(target, shape);
  const std::size_t r = shape.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ot = 0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out[ot] += grad[i];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ot += st[ax];
      if (idx[ax] < shape[ax]) break;
      ot -= st[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

void gemm(std::size_t n, std::size_t k, std::size_t m, const double* a, bool trans_a, const double* b,
          bool trans_b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  if (!trans_a && !trans_b) {
    // a: n x k, b: k x m
    for (std::size_t i = 0; i < n; ++i) {
      double* crow = c + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // a: n x k, b stored m x k
    for (std::size_t i = 0; i < n; ++i) {
      const double* arow = a + i * k;
      for (std::size_t j = 0; j < m; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        c[i * m + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    // a stored k x n, b: k x m
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a + p * n;
      const double* brow = b + p * m;
      for (std::size_t i = 0; i < n; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + i * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    // a stored k x n, b stored m x k
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * b[j * k + p];
        c[i * m + j] += s;
      }
    }
  }
}

NdArray matmul(const NdArray& a, const NdArray& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t k2 = b.shape()[b.rank() - 2];
  const std::size_t m = b.shape()[b.rank() - 1];
  if (k != k2) {
    throw DimensionError("matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Shape la(a.shape().begin(), a.shape().end() - 2);
  const Shape lb(b.shape().begin(), b.shape().end() - 2);
  Shape lead;
  try {
    lead = broadcast_shapes(la, lb);
  } catch (const DimensionError&) {
    throw DimensionError("matmul leading dims not broadcastable: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Shape out_shape = lead;
  out_shape.push_back(n);
  out_shape.push_back(m);
  NdArray out(out_shape);

  // Common case: batched activations times a shared weight matrix.
  if (lb.empty()) {
    gemm(a.size() / k, k, m, a.raw(), false, b.raw(), false, out.raw(), false);
    return out;
  }
  const std::size_t batches = numel(lead);
  const auto sa = broadcast_strides(la, lead);
  const auto sb = broadcast_strides(lb, lead);
  const std::size_t r = lead.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t bi = 0; bi < batches; ++bi) {
    gemm(n, k, m, a.raw() + oa * n * k, false, b.raw() + ob * k * m, false, out.raw() + bi * n * m, false);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < lead[ax]) break;
      oa -= sa[ax] * idx[ax];
      ob -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

NdArray transpose_last2(const NdArray& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
  Shape s = a.shape();
  const std::size_t n = s[s.size() - 2];
  const std::size_t m = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  NdArray out(s);
  const std::size_t batches = a.size() / (n * m);
  for (std::size_t b = 0; b < batches; ++b) {
    const double* src = a.raw() + b * n * m;
    double* dst = out.raw() + b * n * m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) dst[j * n + i] = src[i * m + j];
  }
  return out;
}

double max_abs_diff(const NdArray& a, const NdArray& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const NdArray& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace nd

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kState: return "state";
    case ErrorKind::kTask: return "task";
    case ErrorKind::kCheckpoint: return "checkpoint";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kUsage: return "usage";
  }
  return "unknown";
}

}  // namespace timely

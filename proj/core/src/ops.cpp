#include "timely/ops.hpp"

#include <algorithm>
#include <cmath>

#include "timely/errors.hpp"

namespace timely {

namespace {

NdArray map(const NdArray& a, double (*f)(double)) {
  NdArray out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// outer x axis x inner decomposition of a shape.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::size_t rows_of(const Shape& s) {
  if (s.empty()) return 1;
  return numel(s) / s.back();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return make_op(nd::add(a.value(), b.value()), {a, b}, [a, b](const NdArray& g) {
    if (a.requires_grad()) accumulate_grad(a, nd::sum_to(g, a.shape()));
    if (b.requires_grad()) accumulate_grad(b, nd::sum_to(g, b.shape()));
  });
}

Var sub(const Var& a, const Var& b) {
  return make_op(nd::sub(a.value(), b.value()), {a, b}, [a, b](const NdArray& g) {
    if (a.requires_grad()) accumulate_grad(a, nd::sum_to(g, a.shape()));
    if (b.requires_grad()) accumulate_grad(b, nd::scale(nd::sum_to(g, b.shape()), -1.0));
  });
}

Var mul(const Var& a, const Var& b) {
  return make_op(nd::mul(a.value(), b.value()), {a, b}, [a, b](const NdArray& g) {
    if (a.requires_grad()) accumulate_grad(a, nd::sum_to(nd::mul(g, b.value()), a.shape()));
    if (b.requires_grad()) accumulate_grad(b, nd::sum_to(nd::mul(g, a.value()), b.shape()));
  });
}

Var div(const Var& a, const Var& b) {
  return make_op(nd::div(a.value(), b.value()), {a, b}, [a, b](const NdArray& g) {
    if (a.requires_grad()) accumulate_grad(a, nd::sum_to(nd::div(g, b.value()), a.shape()));
    if (b.requires_grad()) {
      // d(a/b)/db = -a / b^2
      NdArray t = nd::div(nd::mul(g, a.value()), nd::mul(b.value(), b.value()));
      accumulate_grad(b, nd::scale(nd::sum_to(t, b.shape()), -1.0));
    }
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  NdArray out = a.value();
  for (double& v : out.data()) v += s;
  return make_op(std::move(out), {a}, [a](const NdArray& g) { accumulate_grad(a, g); });
}

Var mul_scalar(const Var& a, double s) {
  return make_op(nd::scale(a.value(), s), {a}, [a, s](const NdArray& g) { accumulate_grad(a, nd::scale(g, s)); });
}

Var matmul(const Var& a, const Var& b) {
  NdArray out = nd::matmul(a.value(), b.value());
  return make_op(std::move(out), {a, b}, [a, b](const NdArray& g) {
    const NdArray& av = a.value();
    const NdArray& bv = b.value();
    const std::size_t k = av.shape().back();
    const std::size_t m = bv.shape().back();
    if (bv.rank() == 2) {
      const std::size_t rows = av.size() / k;
      if (a.requires_grad()) {
        NdArray ga(av.shape());
        nd::gemm(rows, m, k, g.raw(), false, bv.raw(), true, ga.raw(), false);
        accumulate_grad(a, ga);
      }
      if (b.requires_grad()) {
        NdArray gb(bv.shape());
        nd::gemm(k, rows, m, av.raw(), true, g.raw(), false, gb.raw(), false);
        accumulate_grad(b, gb);
      }
      return;
    }
    if (a.requires_grad()) accumulate_grad(a, nd::sum_to(nd::matmul(g, nd::transpose_last2(bv)), av.shape()));
    if (b.requires_grad()) accumulate_grad(b, nd::sum_to(nd::matmul(nd::transpose_last2(av), g), bv.shape()));
  });
}

Var exp(const Var& a) {
  NdArray out = map(a.value(), [](double x) { return std::exp(x); });
  NdArray saved = out;
  return make_op(std::move(out), {a}, [a, saved](const NdArray& g) { accumulate_grad(a, nd::mul(g, saved)); });
}

Var log(const Var& a) {
  return make_op(map(a.value(), [](double x) { return std::log(x); }), {a},
                 [a](const NdArray& g) { accumulate_grad(a, nd::div(g, a.value())); });
}

Var sigmoid(const Var& a) {
  NdArray out = map(a.value(), sigmoid_scalar);
  NdArray s = out;
  return make_op(std::move(out), {a}, [a, s](const NdArray& g) {
    NdArray d(s.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * s[i] * (1.0 - s[i]);
    accumulate_grad(a, d);
  });
}

Var swish(const Var& a) {
  const NdArray& x = a.value();
  NdArray s = map(x, sigmoid_scalar);
  NdArray out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s[i];
  return make_op(std::move(out), {a}, [a, s](const NdArray& g) {
    const NdArray& xv = a.value();
    NdArray d(xv.shape());
    // d/dx x*s(x) = s + x*s*(1-s)
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * (s[i] + xv[i] * s[i] * (1.0 - s[i]));
    accumulate_grad(a, d);
  });
}

Var square(const Var& a) {
  return make_op(nd::mul(a.value(), a.value()), {a},
                 [a](const NdArray& g) { accumulate_grad(a, nd::scale(nd::mul(g, a.value()), 2.0)); });
}

Var sum(const Var& a) {
  return make_op(NdArray::scalar(nd::sum(a.value())), {a},
                 [a](const NdArray& g) { accumulate_grad(a, NdArray(a.shape(), g[0])); });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_op(NdArray::scalar(nd::sum(a.value()) / n), {a},
                 [a, n](const NdArray& g) { accumulate_grad(a, NdArray(a.shape(), g[0] / n)); });
}

Var reshape(const Var& a, Shape shape) {
  return make_op(a.value().reshaped(std::move(shape)), {a},
                 [a](const NdArray& g) { accumulate_grad(a, g.reshaped(a.shape())); });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  NdArray out(out_shape);
  const std::size_t width = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = a.value().raw() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + width, out.raw() + o * width);
  }
  return make_op(std::move(out), {a}, [a, s, begin, width](const NdArray& g) {
    NdArray ga(a.shape());
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = g.raw() + o * width;
      double* dst = ga.raw() + (o * s.extent + begin) * s.inner;
      for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
    }
    accumulate_grad(a, ga);
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero arrays");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw DimensionError("concat axis out of range for " + shape_str(out_shape));
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw DimensionError("concat rank mismatch " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) {
        throw DimensionError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
      }
    }
    total += s[axis];
  }
  out_shape[axis] = total;
  NdArray out(out_shape);
  const AxisSplit so = split_axis(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.shape()[axis];
    const std::size_t width = ext * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      const double* src = p.value().raw() + o * width;
      std::copy(src, src + width, out.raw() + (o * so.extent + off) * so.inner);
    }
    off += ext;
  }
  return make_op(std::move(out), parts, [parts, offsets, so, axis](const NdArray& g) {
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const Var& p = parts[pi];
      if (!p.requires_grad()) continue;
      const std::size_t width = p.shape()[axis] * so.inner;
      NdArray gp(p.shape());
      for (std::size_t o = 0; o < so.outer; ++o) {
        const double* src = g.raw() + (o * so.extent + offsets[pi]) * so.inner;
        std::copy(src, src + width, gp.raw() + o * width);
      }
      accumulate_grad(p, gp);
    }
  });
}

Var apply_mask(const Var& a, const NdArray& mask) {
  return make_op(nd::mul(a.value(), mask), {a},
                 [a, mask](const NdArray& g) { accumulate_grad(a, nd::sum_to(nd::mul(g, mask), a.shape())); });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Shape& s = x.shape();
  const std::size_t c = s.empty() ? 1 : s.back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layer_norm affine params must be [" + std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t rows = rows_of(s);
  NdArray xhat(s);
  std::vector<double> inv_std(rows);
  NdArray out(s);
  const double* xv = x.value().raw();
  const double* gv = gamma.value().raw();
  const double* bv = beta.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, rows, c](const NdArray& g) {
    const double* gv = gamma.value().raw();
    if (x.requires_grad()) {
      NdArray gx(x.shape());
      std::vector<double> dh(c);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dh[j] = g[r * c + j] * gv[j];
          m1 += dh[j];
          m2 += dh[j] * xhat[r * c + j];
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = inv_std[r] * (dh[j] - m1 - xhat[r * c + j] * m2);
      }
      accumulate_grad(x, gx);
    }
    if (gamma.requires_grad() || beta.requires_grad()) {
      NdArray gg(Shape{c});
      NdArray gb(Shape{c});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) {
          gg[j] += g[r * c + j] * xhat[r * c + j];
          gb[j] += g[r * c + j];
        }
      }
      accumulate_grad(gamma, gg);
      accumulate_grad(beta, gb);
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training,
               const std::vector<double>& row_mask) {
  const Shape& s = x.shape();
  const std::size_t c = s.empty() ? 1 : s.back();
  const std::size_t rows = rows_of(s);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} || state.running_mean.shape() != Shape{c}) {
    throw DimensionError("batch_norm channel count mismatch for input " + shape_str(s));
  }
  if (!row_mask.empty() && row_mask.size() != rows) {
    throw DimensionError("batch_norm row mask has " + std::to_string(row_mask.size()) + " entries for " +
                         std::to_string(rows) + " rows");
  }
  const double* xv = x.value().raw();
  std::vector<double> mu(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  double count = 0.0;
  if (training) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && row_mask[r] == 0.0) continue;
      count += 1.0;
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    }
    if (count == 0.0) throw InputError("batch_norm training step with no valid rows");
    for (double& m : mu) m /= count;
    for (std::size_t r = 0; r < rows; ++r) {
      if (!row_mask.empty() && row_mask[r] == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) var[j] += (xv[r * c + j] - mu[j]) * (xv[r * c + j] - mu[j]);
    }
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= count;
      inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
      const double m = state.momentum;
      if (state.has_stats) {
        state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mu[j];
        state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j];
      } else {
        state.running_mean[j] = mu[j];
        state.running_var[j] = var[j];
      }
    }
    state.has_stats = true;
  } else {
    if (!state.has_stats) throw StateError("batch_norm evaluated before any training statistics were recorded");
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  NdArray xhat(s);
  NdArray out(s);
  const double* gv = gamma.value().raw();
  const double* bv = beta.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mu[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat, inv_std, rows, c, training, count, row_mask](const NdArray& g) {
                   const double* gv = gamma.value().raw();
                   if (x.requires_grad()) {
                     NdArray gx(x.shape());
                     if (training) {
                       std::vector<double> m1(c, 0.0);
                       std::vector<double> m2(c, 0.0);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           m1[j] += g[r * c + j];
                           m2[j] += g[r * c + j] * xhat[r * c + j];
                         }
                       }
                       for (std::size_t r = 0; r < rows; ++r) {
                         const bool valid = row_mask.empty() || row_mask[r] != 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           double d = g[r * c + j];
                           if (valid) d -= (m1[j] + xhat[r * c + j] * m2[j]) / count;
                           gx[r * c + j] = gv[j] * inv_std[j] * d;
                         }
                       }
                     } else {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = g[r * c + j] * gv[j] * inv_std[j];
                     }
                     accumulate_grad(x, gx);
                   }
                   if (gamma.requires_grad() || beta.requires_grad()) {
                     NdArray gg(Shape{c});
                     NdArray gb(Shape{c});
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t j = 0; j < c; ++j) {
                         gg[j] += g[r * c + j] * xhat[r * c + j];
                         gb[j] += g[r * c + j];
                       }
                     }
                     accumulate_grad(gamma, gg);
                     accumulate_grad(beta, gb);
                   }
                 });
}

Var mean_over_time(const Var& x, const std::vector<std::size_t>& begin, const std::vector<std::size_t>& end) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw DimensionError("mean_over_time expects [B x L x C], got " + shape_str(s));
  const std::size_t b = s[0];
  const std::size_t l = s[1];
  const std::size_t c = s[2];
  if (begin.size() != b || end.size() != b) throw DimensionError("mean_over_time range count != batch");
  NdArray out(Shape{b, c});
  for (std::size_t i = 0; i < b; ++i) {
    if (begin[i] >= end[i] || end[i] > l) throw InputError("empty or out-of-range pooling window");
    const double inv = 1.0 / static_cast<double>(end[i] - begin[i]);
    for (std::size_t t = begin[i]; t < end[i]; ++t)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += x.value()[(i * l + t) * c + j] * inv;
  }
  return make_op(std::move(out), {x}, [x, begin, end, b, l, c](const NdArray& g) {
    NdArray gx(x.shape());
    for (std::size_t i = 0; i < b; ++i) {
      const double inv = 1.0 / static_cast<double>(end[i] - begin[i]);
      for (std::size_t t = begin[i]; t < end[i]; ++t)
        for (std::size_t j = 0; j < c; ++j) gx[(i * l + t) * c + j] = g[i * c + j] * inv;
    }
    accumulate_grad(x, gx);
  });
}

Var mse_loss(const Var& pred, const NdArray& target, const std::vector<double>& row_weight) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shapes differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const std::size_t c = pred.shape().empty() ? 1 : pred.shape().back();
  const std::size_t rows = rows_of(pred.shape());
  if (!row_weight.empty() && row_weight.size() != rows) throw DimensionError("mse_loss row weight count mismatch");
  double total_w = 0.0;
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double w = row_weight.empty() ? 1.0 : row_weight[r];
    if (w == 0.0) continue;
    total_w += w * static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) {
      const double d = pred.value()[r * c + j] - target[r * c + j];
      acc += w * d * d;
    }
  }
  if (total_w == 0.0) throw InputError("mse_loss with no weighted rows");
  return make_op(NdArray::scalar(acc / total_w), {pred}, [pred, target, row_weight, rows, c, total_w](const NdArray& g) {
    NdArray gp(pred.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = row_weight.empty() ? 1.0 : row_weight[r];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j)
        gp[r * c + j] = g[0] * 2.0 * w * (pred.value()[r * c + j] - target[r * c + j]) / total_w;
    }
    accumulate_grad(pred, gp);
  });
}

NdArray softmax_rows(const NdArray& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.size() / c;
  NdArray p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.raw() + r * c;
    const double mx = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[r * c + j] = std::exp(z[j] - mx);
      s += p[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) p[r * c + j] /= s;
  }
  return p;
}

Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& targets, const std::vector<double>& row_weight) {
  if (logits.shape().size() != 2) throw DimensionError("cross_entropy expects [N x C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.shape()[0];
  const std::size_t c = logits.shape()[1];
  if (targets.size() != n) throw DimensionError("cross_entropy target count mismatch");
  if (!row_weight.empty() && row_weight.size() != n) throw DimensionError("cross_entropy row weight count mismatch");
  NdArray p = softmax_rows(logits.value());
  double total_w = 0.0;
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double w = row_weight.empty() ? 1.0 : row_weight[r];
    if (w == 0.0) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c) {
      throw InputError("target class " + std::to_string(targets[r]) + " outside [0, " + std::to_string(c) + ")");
    }
    const double* z = logits.value().raw() + r * c;
    const double mx = *std::max_element(z, z + c);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(z[j] - mx);
    acc += w * (mx + std::log(lse) - z[targets[r]]);
    total_w += w;
  }
  if (total_w == 0.0) throw InputError("cross_entropy with no weighted rows");
  return make_op(NdArray::scalar(acc / total_w), {logits}, [logits, targets, row_weight, p, n, c, total_w](const NdArray& g) {
    NdArray gl(logits.shape());
    for (std::size_t r = 0; r < n; ++r) {
      const double w = row_weight.empty() ? 1.0 : row_weight[r];
      if (w == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) gl[r * c + j] = g[0] * w * p[r * c + j] / total_w;
      gl[r * c + targets[r]] -= g[0] * w / total_w;
    }
    accumulate_grad(logits, gl);
  });
}

}  // namespace timely

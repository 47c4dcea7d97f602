#include "timely/positional.hpp"

#include <cmath>

#include "timely/errors.hpp"

namespace timely {

RotaryAngles RotaryAngles::make(std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rotary head dim must be even and positive, got " + std::to_string(head_dim));
  }
  if (!(base > 0.0)) throw ConfigError("rotary base must be positive");
  RotaryAngles a;
  a.head_dim = head_dim;
  a.base = base;
  a.thetas.resize(head_dim / 2);
  for (std::size_t i = 0; i < a.thetas.size(); ++i) {
    a.thetas[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  }
  return a;
}

RotaryAngles RotaryAngles::custom(std::size_t head_dim, std::vector<double> thetas) {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rotary head dim must be even and positive, got " + std::to_string(head_dim));
  }
  if (thetas.size() != head_dim / 2) throw ConfigError("need head_dim/2 rotation frequencies");
  RotaryAngles a;
  a.head_dim = head_dim;
  a.base = 0.0;
  a.thetas = std::move(thetas);
  return a;
}

DecaySchedule DecaySchedule::default_for(std::size_t heads) {
  DecaySchedule s;
  for (std::size_t h = 1; h <= heads; ++h) s.gammas.push_back(1.0 - std::ldexp(1.0, -static_cast<int>(5 + h)));
  return s;
}

DecaySchedule DecaySchedule::uniform(std::size_t heads, double gamma) {
  DecaySchedule s;
  s.gammas.assign(heads, gamma);
  s.validate();
  return s;
}

void DecaySchedule::validate() const {
  if (gammas.empty()) throw ConfigError("decay schedule has no heads");
  for (double g : gammas) {
    if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("decay gamma must lie in [0, 1], got " + std::to_string(g));
  }
}

namespace {

struct RotationTable {
  std::vector<double> cos;
  std::vector<double> sin;
  std::size_t pairs = 0;
};

RotationTable build_table(std::span<const std::int64_t> positions, const RotaryAngles& angles, double sign) {
  RotationTable t;
  t.pairs = angles.thetas.size();
  t.cos.resize(positions.size() * t.pairs);
  t.sin.resize(positions.size() * t.pairs);
  for (std::size_t n = 0; n < positions.size(); ++n) {
    for (std::size_t i = 0; i < t.pairs; ++i) {
      const double a = sign * static_cast<double>(positions[n]) * angles.thetas[i];
      t.cos[n * t.pairs + i] = std::cos(a);
      t.sin[n * t.pairs + i] = std::sin(a);
    }
  }
  return t;
}

void apply_rotation(const NdArray& x, NdArray& out, const RotationTable& t, std::size_t head_dim) {
  const Shape& s = x.shape();
  const std::size_t d = s.back();
  const std::size_t l = s[s.size() - 2];
  const std::size_t batches = x.size() / (l * d);
  const std::size_t heads = d / head_dim;
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t n = 0; n < l; ++n) {
      const double* src = x.raw() + (b * l + n) * d;
      double* dst = out.raw() + (b * l + n) * d;
      const double* c = t.cos.data() + n * t.pairs;
      const double* sn = t.sin.data() + n * t.pairs;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < t.pairs; ++i) {
          const std::size_t j = h * head_dim + 2 * i;
          const double x0 = src[j];
          const double x1 = src[j + 1];
          dst[j] = x0 * c[i] - x1 * sn[i];
          dst[j + 1] = x0 * sn[i] + x1 * c[i];
        }
      }
    }
  }
}

void check_rotate_shapes(const Shape& s, std::size_t n_pos, const RotaryAngles& angles) {
  if (angles.head_dim == 0 || angles.head_dim % 2 != 0) {
    throw ConfigError("rotary head dim must be even, got " + std::to_string(angles.head_dim));
  }
  if (s.size() < 2) throw DimensionError("rotate expects [.. x L x D], got " + shape_str(s));
  if (s.back() % angles.head_dim != 0) {
    throw DimensionError("feature dim " + std::to_string(s.back()) + " is not a multiple of head dim " +
                         std::to_string(angles.head_dim));
  }
  if (s[s.size() - 2] != n_pos) {
    throw DimensionError("rotate got " + std::to_string(n_pos) + " positions for " + shape_str(s));
  }
}

}  // namespace

NdArray rotate(const NdArray& x, std::span<const std::int64_t> positions, const RotaryAngles& angles) {
  check_rotate_shapes(x.shape(), positions.size(), angles);
  NdArray out(x.shape());
  apply_rotation(x, out, build_table(positions, angles, 1.0), angles.head_dim);
  return out;
}

Var rotate(const Var& x, std::span<const std::int64_t> positions, const RotaryAngles& angles) {
  check_rotate_shapes(x.shape(), positions.size(), angles);
  NdArray out(x.shape());
  apply_rotation(x.value(), out, build_table(positions, angles, 1.0), angles.head_dim);
  std::vector<std::int64_t> pos(positions.begin(), positions.end());
  return make_op(std::move(out), {x}, [x, pos, angles](const NdArray& g) {
    // Rotations are orthogonal: the adjoint turns by the negated angle.
    NdArray gx(g.shape());
    apply_rotation(g, gx, build_table(pos, angles, -1.0), angles.head_dim);
    accumulate_grad(x, gx);
  });
}

HeadQK xpos_qk(const NdArray& x, const NdArray& w_q, const NdArray& w_k, std::span<const std::int64_t> positions,
               const RotaryAngles& angles, const DecaySchedule& schedule) {
  schedule.validate();
  const std::size_t heads = schedule.heads();
  if (x.rank() != 2) throw DimensionError("xpos_qk expects X as [L x d_model], got " + shape_str(x.shape()));
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] <= positions[i - 1]) throw InputError("positions must be strictly increasing");
  }
  const NdArray q_all = nd::matmul(x, w_q);
  const NdArray k_all = nd::matmul(x, w_k);
  const std::size_t dq = q_all.shape()[1];
  if (dq != heads * angles.head_dim || k_all.shape()[1] != dq) {
    throw DimensionError("projected width " + std::to_string(dq) + " != heads x head_dim");
  }
  const NdArray q_rot = rotate(q_all, positions, angles);
  const NdArray k_rot = rotate(k_all, positions, angles);
  const std::size_t l = x.shape()[0];
  const std::size_t hd = angles.head_dim;
  HeadQK out;
  for (std::size_t h = 0; h < heads; ++h) {
    NdArray q({l, hd});
    NdArray k({l, hd});
    for (std::size_t n = 0; n < l; ++n) {
      for (std::size_t j = 0; j < hd; ++j) {
        q[n * hd + j] = q_rot[n * dq + h * hd + j];
        k[n * hd + j] = k_rot[n * dq + h * hd + j];
      }
    }
    out.q.push_back(std::move(q));
    out.k.push_back(std::move(k));
  }
  return out;
}

}  // namespace timely

#include "insertion/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace insertion::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using BlockMap = Eigen::Map<RowMat<T>, 0, Stride>;
template <typename T>
using ConstBlockMap = Eigen::Map<const RowMat<T>, 0, Stride>;

template <typename T>
ConstMatMap<T> view(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data().data(), t.rows(), t.cols());
}

template <typename T>
MatMap<T> view_mut(Tensor<T>& t) {
  return MatMap<T>(t.data().data(), t.rows(), t.cols());
}

template <typename T>
MatMap<T> grad_of(const Tensor<T>& t) {
  return MatMap<T>(t.grad().data(), t.rows(), t.cols());
}

template <typename T>
ConstMatMap<T> grad_view(const Tensor<T>& t) {
  return ConstMatMap<T>(t.grad_view().data(), t.rows(), t.cols());
}

template <typename T, typename... Ts>
bool tracked(const Tape<T>& tape, const Ts&... inputs) {
  return tape.recording() && (inputs.requires_grad() || ...);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value (shape " +
                         shape_string(t.shape()) + ")");
    }
  }
}

void require_matrix(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

void require_segments(const Segments& seg, std::size_t rows, const char* op) {
  if (seg.total() != rows) {
    throw DimensionError(std::string(op) + ": segments cover " + std::to_string(seg.total()) +
                         " rows but tensor has " + std::to_string(rows));
  }
}

}  // namespace

Segments Segments::from_lengths(std::span<const std::size_t> lengths) {
  Segments s;
  for (auto n : lengths) s.push(n);
  return s;
}

Segments Segments::single(std::size_t length) {
  Segments s;
  s.push(length);
  return s;
}

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const bool track = tracked(tape, a, b);
  Tensor<T> out({a.rows(), b.cols()}, track);
  view_mut(out).noalias() = view(a) * view(b);
  check_finite(out, "matmul");
  if (track) {
    tape.record(out, [a, b, out]() mutable {
      auto dc = grad_view(out);
      if (a.requires_grad()) grad_of(a).noalias() += dc * view(b).transpose();
      if (b.requires_grad()) grad_of(b).noalias() += view(a).transpose() * dc;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  const bool track = tracked(tape, a, b);
  Tensor<T> out(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  check_finite(out, "add");
  if (track) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad_view();
      for (const Tensor<T>* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto d = in->grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  const bool track = tracked(tape, a, b);
  Tensor<T> out(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  check_finite(out, "mul");
  if (track) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad_view();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto d = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto d = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  const bool track = tracked(tape, a);
  Tensor<T> out(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  check_finite(out, "scale");
  if (track) {
    tape.record(out, [a, out, factor]() mutable {
      auto g = out.grad_view();
      auto d = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_matrix(x.shape(), "add_bias");
  if (bias.size() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  const bool track = tracked(tape, x, bias);
  Tensor<T> out(x.shape(), track);
  const std::size_t n = x.rows(), c = x.cols();
  auto o = out.data();
  auto xi = x.data();
  auto bi = bias.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = xi[r * c + j] + bi[j];
  check_finite(out, "add_bias");
  if (track) {
    tape.record(out, [x, bias, out, n, c]() mutable {
      auto g = out.grad_view();
      if (x.requires_grad()) {
        auto d = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto d = bias.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_column(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& col) {
  require_matrix(x.shape(), "add_column");
  if (col.size() != x.rows()) {
    throw DimensionError("add_column: column " + shape_string(col.shape()) + " does not fit " +
                         shape_string(x.shape()));
  }
  const bool track = tracked(tape, x, col);
  Tensor<T> out(x.shape(), track);
  const std::size_t n = x.rows(), c = x.cols();
  auto o = out.data();
  auto xi = x.data();
  auto ci = col.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = xi[r * c + j] + ci[r];
  check_finite(out, "add_column");
  if (track) {
    tape.record(out, [x, col, out, n, c]() mutable {
      auto g = out.grad_view();
      if (x.requires_grad()) {
        auto d = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      if (col.requires_grad()) {
        auto d = col.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) d[r] += g[r * c + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
  const bool track = tracked(tape, a);
  Tensor<T> out(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  if (track) {
    tape.record(out, [a, out]() mutable {
      auto g = out.grad_view();
      auto x = a.data();
      auto d = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) d[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a) {
  const bool track = tracked(tape, a);
  Tensor<T> out(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
  check_finite(out, "tanh");
  if (track) {
    tape.record(out, [a, out]() mutable {
      auto g = out.grad_view();
      auto y = out.data();
      auto d = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  const bool track = tracked(tape, a);
  Tensor<T> out({1}, track);
  T total = 0;
  for (T v : a.data()) total += v;
  out[0] = total;
  check_finite(out, "sum");
  if (track) {
    tape.record(out, [a, out]() mutable {
      const T g = out.grad_view()[0];
      for (auto& d : a.grad()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& v, std::size_t axis) {
  if (v.rank() == 0 || v.rank() > 2 || axis >= v.rank()) {
    throw DimensionError("softmax: invalid axis " + std::to_string(axis) + " for shape " +
                         shape_string(v.shape()));
  }
  if (v.shape()[axis] == 0) {
    throw DimensionError("softmax: empty axis " + std::to_string(axis) + " in shape " +
                         shape_string(v.shape()));
  }
  // Group g covers entries base(g) + i*step for i < len.
  std::size_t groups, len, step, group_step;
  if (v.rank() == 1) {
    groups = 1, len = v.size(), step = 1, group_step = 0;
  } else if (axis == 1) {
    groups = v.rows(), len = v.cols(), step = 1, group_step = v.cols();
  } else {
    groups = v.cols(), len = v.rows(), step = v.cols(), group_step = 1;
  }
  const bool track = tracked(tape, v);
  Tensor<T> out(v.shape(), track);
  auto x = v.data();
  auto y = out.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * group_step;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * step]);
    T z = 0;
    for (std::size_t i = 0; i < len; ++i) {
      y[base + i * step] = std::exp(x[base + i * step] - mx);
      z += y[base + i * step];
    }
    for (std::size_t i = 0; i < len; ++i) y[base + i * step] /= z;
  }
  check_finite(out, "softmax");
  if (track) {
    tape.record(out, [v, out, groups, len, step, group_step]() mutable {
      auto g = out.grad_view();
      auto y = out.data();
      auto d = v.grad();
      for (std::size_t k = 0; k < groups; ++k) {
        const std::size_t base = k * group_step;
        T dot = 0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * step] * y[base + i * step];
        for (std::size_t i = 0; i < len; ++i)
          d[base + i * step] += y[base + i * step] * (g[base + i * step] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x, const Segments& segments,
                      Normalize mode) {
  require_matrix(x.shape(), "log_softmax");
  require_segments(segments, x.rows(), "log_softmax");
  const std::size_t c = x.cols();
  // Contiguous flat ranges, one per distribution.
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  if (mode == Normalize::kRow) {
    groups.reserve(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) groups.emplace_back(r * c, (r + 1) * c);
  } else {
    groups.reserve(segments.count());
    for (std::size_t s = 0; s < segments.count(); ++s)
      if (segments.length(s) > 0) groups.emplace_back(segments.begin(s) * c, segments.end(s) * c);
  }
  const bool track = tracked(tape, x);
  Tensor<T> out(x.shape(), track);
  auto in = x.data();
  auto o = out.data();
  for (auto [b, e] : groups) {
    if (b == e) continue;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = b; i < e; ++i) mx = std::max(mx, in[i]);
    T z = 0;
    for (std::size_t i = b; i < e; ++i) z += std::exp(in[i] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t i = b; i < e; ++i) o[i] = in[i] - lz;
  }
  check_finite(out, "log_softmax");
  if (track) {
    tape.record(out, [x, out, groups = std::move(groups)]() mutable {
      auto g = out.grad_view();
      auto y = out.data();
      auto d = x.grad();
      for (auto [b, e] : groups) {
        T total = 0;
        for (std::size_t i = b; i < e; ++i) total += g[i];
        for (std::size_t i = b; i < e; ++i) d[i] += g[i] - std::exp(y[i]) * total;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  require_matrix(x.shape(), "layer_norm");
  const std::size_t n = x.rows(), c = x.cols();
  if (gain.size() != c || bias.size() != c) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not fit " + shape_string(x.shape()));
  }
  const bool track = tracked(tape, x, gain, bias);
  Tensor<T> out(x.shape(), track);
  std::vector<T> xhat(n * c);
  std::vector<T> inv_std(n);
  auto in = x.data();
  auto o = out.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = in.data() + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * c + j] = h;
      o[r * c + j] = h * gv[j] + bv[j];
    }
  }
  check_finite(out, "layer_norm");
  if (track) {
    tape.record(out, [x, gain, bias, out, n, c, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)]() mutable {
      auto g = out.grad_view();
      auto gv = gain.data();
      if (gain.requires_grad()) {
        auto d = gain.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j] * xhat[r * c + j];
      }
      if (bias.requires_grad()) {
        auto d = bias.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j];
      }
      if (x.requires_grad()) {
        auto d = x.grad();
        for (std::size_t r = 0; r < n; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = g[r * c + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * c + j];
          }
          mean_dh /= T(c);
          mean_dh_h /= T(c);
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = g[r * c + j] * gv[j];
            d[r * c + j] += inv_std[r] * (dh - mean_dh - xhat[r * c + j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix(table.shape(), "embedding");
  const std::size_t v = table.rows(), c = table.cols();
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  for (auto id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DimensionError("embedding: id " + std::to_string(id) + " outside table of " +
                           std::to_string(v) + " rows");
    }
  }
  const bool track = tracked(tape, table);
  Tensor<T> out({rows.size(), c}, track);
  auto t = table.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(t.data() + rows[r] * c, c, o.data() + r * c);
  if (track) {
    tape.record(out, [table, out, c, rows = std::move(rows)]() mutable {
      auto g = out.grad_view();
      auto d = table.grad();
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < c; ++j) d[rows[r] * c + j] += g[r * c + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t num_heads, const Segments& q_segments,
                    const Segments& k_segments, const Tensor<T>* mask) {
  require_matrix(q.shape(), "attention");
  require_matrix(k.shape(), "attention");
  require_matrix(v.shape(), "attention");
  const std::size_t width = q.cols();
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows()) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_string(q.shape()) + ", " +
                         shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  if (num_heads == 0 || width % num_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible into " +
                         std::to_string(num_heads) + " heads");
  }
  require_segments(q_segments, q.rows(), "attention (queries)");
  require_segments(k_segments, k.rows(), "attention (keys)");
  if (q_segments.count() != k_segments.count()) {
    throw DimensionError("attention: " + std::to_string(q_segments.count()) +
                         " query segments vs " + std::to_string(k_segments.count()) +
                         " key segments");
  }
  if (mask && mask->shape() != Shape{q.rows(), k.rows()}) {
    throw DimensionError("attention: mask shape " + shape_string(mask->shape()) +
                         " does not match " + shape_string(Shape{q.rows(), k.rows()}));
  }
  const std::size_t dk = width / num_heads;
  const T scale_factor = T(1) / std::sqrt(T(dk));
  const bool track = tracked(tape, q, k, v);
  Tensor<T> out(q.shape(), track);
  const std::size_t segs = q_segments.count();
  std::vector<RowMat<T>> probs(segs * num_heads);

  auto qd = q.data().data();
  auto kd = k.data().data();
  auto vd = v.data().data();
  auto od = out.data().data();
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t qb = q_segments.begin(s), lq = q_segments.length(s);
    const std::size_t kb = k_segments.begin(s), lk = k_segments.length(s);
    if (lq == 0 || lk == 0) continue;
    for (std::size_t h = 0; h < num_heads; ++h) {
      ConstBlockMap<T> qs(qd + qb * width + h * dk, lq, dk, Stride(width));
      ConstBlockMap<T> ks(kd + kb * width + h * dk, lk, dk, Stride(width));
      ConstBlockMap<T> vs(vd + kb * width + h * dk, lk, dk, Stride(width));
      RowMat<T>& p = probs[s * num_heads + h];
      p.noalias() = (qs * ks.transpose()) * scale_factor;
      for (std::size_t i = 0; i < lq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          if (mask && (*mask)[(qb + i) * k.rows() + kb + j] == T(0)) {
            p(i, j) = -std::numeric_limits<T>::infinity();
          }
          mx = std::max(mx, p(i, j));
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
          p.row(i).setZero();
          continue;
        }
        T z = 0;
        for (std::size_t j = 0; j < lk; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        p.row(i) /= z;
      }
      BlockMap<T> os(od + qb * width + h * dk, lq, dk, Stride(width));
      os.noalias() = p * vs;
    }
  }
  check_finite(out, "attention");
  if (track) {
    tape.record(out, [q, k, v, out, num_heads, q_segments, k_segments, width, dk, scale_factor,
                      probs = std::move(probs)]() mutable {
      const T* gd = out.grad_view().data();
      T* dq = q.requires_grad() ? q.grad().data() : nullptr;
      T* dk_ = k.requires_grad() ? k.grad().data() : nullptr;
      T* dv = v.requires_grad() ? v.grad().data() : nullptr;
      const T* qd = q.data().data();
      const T* kd = k.data().data();
      const T* vd = v.data().data();
      RowMat<T> dp, ds;
      for (std::size_t s = 0; s < q_segments.count(); ++s) {
        const std::size_t qb = q_segments.begin(s), lq = q_segments.length(s);
        const std::size_t kb = k_segments.begin(s), lk = k_segments.length(s);
        if (lq == 0 || lk == 0) continue;
        for (std::size_t h = 0; h < num_heads; ++h) {
          const RowMat<T>& p = probs[s * num_heads + h];
          ConstBlockMap<T> go(gd + qb * width + h * dk, lq, dk, Stride(width));
          ConstBlockMap<T> qs(qd + qb * width + h * dk, lq, dk, Stride(width));
          ConstBlockMap<T> ks(kd + kb * width + h * dk, lk, dk, Stride(width));
          ConstBlockMap<T> vs(vd + kb * width + h * dk, lk, dk, Stride(width));
          if (dv) {
            BlockMap<T> gv(dv + kb * width + h * dk, lk, dk, Stride(width));
            gv.noalias() += p.transpose() * go;
          }
          if (!dq && !dk_) continue;
          dp.noalias() = go * vs.transpose();
          ds = p.cwiseProduct(dp);
          for (std::size_t i = 0; i < lq; ++i) {
            const T dot = ds.row(i).sum();
            ds.row(i) -= p.row(i) * dot;
          }
          if (dq) {
            BlockMap<T> gq(dq + qb * width + h * dk, lq, dk, Stride(width));
            gq.noalias() += (ds * ks) * scale_factor;
          }
          if (dk_) {
            BlockMap<T> gk(dk_ + kb * width + h * dk, lk, dk, Stride(width));
            gk.noalias() += (ds.transpose() * qs) * scale_factor;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t num_heads, const Tensor<T>* mask) {
  return attention(tape, q, k, v, num_heads, Segments::single(q.rows()),
                   Segments::single(k.rows()), mask);
}

template <typename T>
Tensor<T> adjacent_pairs(Tape<T>& tape, const Tensor<T>& x, const Segments& segments) {
  require_matrix(x.shape(), "adjacent_pairs");
  require_segments(segments, x.rows(), "adjacent_pairs");
  const std::size_t c = x.cols();
  std::vector<std::size_t> left;
  for (std::size_t s = 0; s < segments.count(); ++s)
    for (std::size_t p = segments.begin(s); p + 1 < segments.end(s); ++p) left.push_back(p);
  const bool track = tracked(tape, x);
  Tensor<T> out({left.size(), 2 * c}, track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < left.size(); ++r) {
    std::copy_n(in.data() + left[r] * c, 2 * c, o.data() + r * 2 * c);
  }
  if (track) {
    tape.record(out, [x, out, c, left = std::move(left)]() mutable {
      auto g = out.grad_view();
      auto d = x.grad();
      for (std::size_t r = 0; r < left.size(); ++r)
        for (std::size_t j = 0; j < 2 * c; ++j) d[left[r] * c + j] += g[r * 2 * c + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> segment_max(Tape<T>& tape, const Tensor<T>& x, const Segments& segments) {
  require_matrix(x.shape(), "segment_max");
  require_segments(segments, x.rows(), "segment_max");
  const std::size_t c = x.cols(), segs = segments.count();
  const bool track = tracked(tape, x);
  Tensor<T> out({segs, c}, track);
  std::vector<std::size_t> argmax(segs * c);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t s = 0; s < segs; ++s) {
    if (segments.length(s) == 0) {
      throw DimensionError("segment_max: segment " + std::to_string(s) + " is empty");
    }
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = segments.begin(s);
      for (std::size_t r = best + 1; r < segments.end(s); ++r)
        if (in[r * c + j] > in[best * c + j]) best = r;
      argmax[s * c + j] = best;
      o[s * c + j] = in[best * c + j];
    }
  }
  if (track) {
    tape.record(out, [x, out, c, argmax = std::move(argmax)]() mutable {
      auto g = out.grad_view();
      auto d = x.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) d[argmax[i] * c + i % c] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_segments(Tape<T>& tape, const Tensor<T>& x, const Segments& segments) {
  require_matrix(x.shape(), "broadcast_segments");
  if (x.rows() != segments.count()) {
    throw DimensionError("broadcast_segments: " + std::to_string(x.rows()) + " rows for " +
                         std::to_string(segments.count()) + " segments");
  }
  const std::size_t c = x.cols();
  const bool track = tracked(tape, x);
  Tensor<T> out({segments.total(), c}, track);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t s = 0; s < segments.count(); ++s)
    for (std::size_t r = segments.begin(s); r < segments.end(s); ++r)
      std::copy_n(in.data() + s * c, c, o.data() + r * c);
  if (track) {
    tape.record(out, [x, out, c, segments]() mutable {
      auto g = out.grad_view();
      auto d = x.grad();
      for (std::size_t s = 0; s < segments.count(); ++s)
        for (std::size_t r = segments.begin(s); r < segments.end(s); ++r)
          for (std::size_t j = 0; j < c; ++j) d[s * c + j] += g[r * c + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_mixture(Tape<T>& tape, const std::vector<Tensor<T>>& components,
                      const Tensor<T>& log_weights) {
  if (components.empty()) throw DimensionError("log_mixture: no components");
  const std::size_t kk = components.size();
  const Shape shape = components.front().shape();
  require_matrix(shape, "log_mixture");
  for (const auto& comp : components) require_same(shape, comp.shape(), "log_mixture");
  if (log_weights.shape() != Shape{shape[0], kk}) {
    throw DimensionError("log_mixture: weights " + shape_string(log_weights.shape()) +
                         " do not match " + std::to_string(kk) + " components of " +
                         shape_string(shape));
  }
  const std::size_t n = shape[0], c = shape[1];
  bool track = tracked(tape, log_weights);
  for (const auto& comp : components) track = track || tracked(tape, comp);
  Tensor<T> out(shape, track);
  auto o = out.data();
  auto lw = log_weights.data();
  std::vector<T> terms(kk);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t m = 0; m < kk; ++m) {
        terms[m] = lw[r * kk + m] + components[m][r * c + j];
        mx = std::max(mx, terms[m]);
      }
      T z = 0;
      for (std::size_t m = 0; m < kk; ++m) z += std::exp(terms[m] - mx);
      o[r * c + j] = mx + std::log(z);
    }
  }
  check_finite(out, "log_mixture");
  if (track) {
    tape.record(out, [components, log_weights, out, n, c, kk]() mutable {
      auto g = out.grad_view();
      auto o = out.data();
      auto lw = log_weights.data();
      T* dw = log_weights.requires_grad() ? log_weights.grad().data() : nullptr;
      for (std::size_t m = 0; m < kk; ++m) {
        auto& comp = components[m];
        T* dc = comp.requires_grad() ? comp.grad().data() : nullptr;
        auto cv = comp.data();
        for (std::size_t r = 0; r < n; ++r) {
          T acc = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            const T resp = std::exp(lw[r * kk + m] + cv[i] - o[i]);
            if (dc) dc[i] += g[i] * resp;
            acc += g[i] * resp;
          }
          if (dw) dw[r * kk + m] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_nll(Tape<T>& tape, const Tensor<T>& log_probs, std::span<const Pick> picks) {
  for (const auto& p : picks) {
    if (p.index >= log_probs.size()) {
      throw DimensionError("weighted_nll: index " + std::to_string(p.index) + " outside " +
                           shape_string(log_probs.shape()));
    }
  }
  const bool track = tracked(tape, log_probs);
  Tensor<T> out({1}, track);
  double total = 0;
  for (const auto& p : picks) total -= p.weight * static_cast<double>(log_probs[p.index]);
  out[0] = static_cast<T>(total);
  check_finite(out, "weighted_nll");
  if (track) {
    tape.record(out, [log_probs, out, picks = std::vector<Pick>(picks.begin(), picks.end())]() mutable {
      const T g = out.grad_view()[0];
      auto d = log_probs.grad();
      for (const auto& p : picks) d[p.index] -= static_cast<T>(p.weight) * g;
    });
  }
  return out;
}

#define INSERTION_NN_INSTANTIATE(T)                                                              \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> add_bias(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> add_column(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> tanh(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&, std::size_t);                          \
  template Tensor<T> log_softmax(Tape<T>&, const Tensor<T>&, const Segments&, Normalize);        \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);                                                             \
  template Tensor<T> embedding(Tape<T>&, const Tensor<T>&, std::span<const std::int32_t>);      \
  template Tensor<T> attention(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                               std::size_t, const Segments&, const Segments&,                   \
                               const Tensor<T>*);                                               \
  template Tensor<T> attention(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                               std::size_t, const Tensor<T>*);                                  \
  template Tensor<T> adjacent_pairs(Tape<T>&, const Tensor<T>&, const Segments&);               \
  template Tensor<T> segment_max(Tape<T>&, const Tensor<T>&, const Segments&);                  \
  template Tensor<T> broadcast_segments(Tape<T>&, const Tensor<T>&, const Segments&);           \
  template Tensor<T> log_mixture(Tape<T>&, const std::vector<Tensor<T>>&, const Tensor<T>&);    \
  template Tensor<T> weighted_nll(Tape<T>&, const Tensor<T>&, std::span<const Pick>);

INSERTION_NN_INSTANTIATE(float)
INSERTION_NN_INSTANTIATE(double)

#undef INSERTION_NN_INSTANTIATE

}  // namespace insertion::nn

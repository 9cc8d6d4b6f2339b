#pragma once

// Differentiable ops over BasicTensor. Shapes are checked up front and
// violations raise ShapeError naming the op and the offending shapes.
//
// Broadcasting is limited to add_bias (rank-1 over the last axis).

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lifelong/tensor.hpp"

namespace lifelong {

inline constexpr std::int32_t kIgnoreTarget = -1;
inline constexpr double kLayerNormEpsilon = 1e-5;

enum class AttentionMask : std::uint8_t { none, causal };

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

[[noreturn]] inline void shape_mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

[[noreturn]] inline void bad_shape(std::string_view op, const Shape& a, std::string_view why) {
  throw ShapeError(std::string(op) + ": invalid shape " + to_string(a) + " (" + std::string(why) + ")");
}

template <typename T>
BasicTensor<T> make_output(Shape shape) {
  return BasicTensor<T>(std::move(shape));
}

// tanh via a single exp; saturates cleanly to +-1 for large |u|
template <typename T>
T fast_tanh(T u) {
  return T(1) - T(2) / (T(1) + std::exp(T(2) * u));
}

template <typename T>
T gelu_tanh_term(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  return fast_tanh(k * (x + T(0.044715) * x * x * x));
}

template <typename T>
T gelu_derivative(T x, T t) {
  constexpr T k = T(0.7978845608028654);
  const T d_inner = k * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * d_inner;
}

}  // namespace detail

/// a[..., k] x b[k, n] -> [..., n]; with transpose_b, b is [n, k].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false) {
  if (a.rank() < 2 || b.rank() != 2) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t k = a.shape().back();
  const std::size_t m = a.numel() / k;
  const std::size_t bk = transpose_b ? b.size(1) : b.size(0);
  const std::size_t n = transpose_b ? b.size(0) : b.size(1);
  if (bk != k) detail::shape_mismatch("matmul", a.shape(), b.shape());

  Shape out_shape = a.shape();
  out_shape.back() = n;
  auto out = detail::make_output<T>(out_shape);
  using detail::ConstMatrixMap;
  using detail::MatrixMap;
  ConstMatrixMap<T> A(a.values().data(), m, k);
  ConstMatrixMap<T> B(b.values().data(), b.size(0), b.size(1));
  MatrixMap<T> C(out.values().data(), m, n);
  if (transpose_b) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A * B;
  }

  if (detail::any_requires_grad<T>({&a, &b})) {
    auto sa = a.storage();
    auto sb = b.storage();
    detail::attach<T>(out, OpKind::matmul, {sa, sb}, [sa, sb, m, k, n, transpose_b](const TensorStorage<T>& o) {
      ConstMatrixMap<T> dC(o.grad.data(), m, n);
      ConstMatrixMap<T> A(sa->data.data(), m, k);
      const std::size_t br = transpose_b ? n : k;
      const std::size_t bc = transpose_b ? k : n;
      ConstMatrixMap<T> B(sb->data.data(), br, bc);
      if (T* ga = detail::grad_target(sa)) {
        MatrixMap<T> dA(ga, m, k);
        if (transpose_b) {
          dA.noalias() += dC * B;
        } else {
          dA.noalias() += dC * B.transpose();
        }
      }
      if (T* gb = detail::grad_target(sb)) {
        MatrixMap<T> dB(gb, br, bc);
        if (transpose_b) {
          dB.noalias() += dC.transpose() * A;
        } else {
          dB.noalias() += A.transpose() * dC;
        }
      }
    });
  }
  return out;
}

/// Batched matmul: a[b, m, k] x b[b, k, n] -> [b, m, n]; transpose_b takes b as [b, n, k].
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.size(0) != b.size(0)) {
    detail::shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t batch = a.size(0), m = a.size(1), k = a.size(2);
  const std::size_t bk = transpose_b ? b.size(2) : b.size(1);
  const std::size_t n = transpose_b ? b.size(1) : b.size(2);
  if (bk != k) detail::shape_mismatch("bmm", a.shape(), b.shape());

  auto out = detail::make_output<T>({batch, m, n});
  using detail::ConstMatrixMap;
  using detail::MatrixMap;
  const std::size_t br = b.size(1), bc = b.size(2);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap<T> A(a.values().data() + i * m * k, m, k);
    ConstMatrixMap<T> B(b.values().data() + i * br * bc, br, bc);
    MatrixMap<T> C(out.values().data() + i * m * n, m, n);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }

  if (detail::any_requires_grad<T>({&a, &b})) {
    auto sa = a.storage();
    auto sb = b.storage();
    detail::attach<T>(out, OpKind::bmm, {sa, sb},
                      [sa, sb, batch, m, k, n, br, bc, transpose_b](const TensorStorage<T>& o) {
      T* ga = detail::grad_target(sa);
      T* gb = detail::grad_target(sb);
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMatrixMap<T> dC(o.grad.data() + i * m * n, m, n);
        ConstMatrixMap<T> A(sa->data.data() + i * m * k, m, k);
        ConstMatrixMap<T> B(sb->data.data() + i * br * bc, br, bc);
        if (ga) {
          MatrixMap<T> dA(ga + i * m * k, m, k);
          if (transpose_b) {
            dA.noalias() += dC * B;
          } else {
            dA.noalias() += dC * B.transpose();
          }
        }
        if (gb) {
          MatrixMap<T> dB(gb + i * br * bc, br, bc);
          if (transpose_b) {
            dB.noalias() += dC.transpose() * A;
          } else {
            dB.noalias() += A.transpose() * dC;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.shape(), b.shape());
  auto out = detail::make_output<T>(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::any_requires_grad<T>({&a, &b})) {
    auto sa = a.storage();
    auto sb = b.storage();
    detail::attach<T>(out, OpKind::add, {sa, sb}, [sa, sb](const TensorStorage<T>& o) {
      for (const auto& s : {sa, sb}) {
        if (T* g = detail::grad_target(s)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("mul", a.shape(), b.shape());
  auto out = detail::make_output<T>(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::any_requires_grad<T>({&a, &b})) {
    auto sa = a.storage();
    auto sb = b.storage();
    detail::attach<T>(out, OpKind::mul, {sa, sb}, [sa, sb](const TensorStorage<T>& o) {
      // Gradients are computed from the forward values before either buffer
      // is touched, so mul(x, x) accumulates 2x correctly.
      T* ga = detail::grad_target(sa);
      T* gb = detail::grad_target(sb);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const T da = o.grad[i] * sb->data[i];
        const T db = o.grad[i] * sa->data[i];
        if (ga) ga[i] += da;
        if (gb) gb[i] += db;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  auto out = detail::make_output<T>(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::scale, {sx}, [sx, factor](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
      }
    });
  }
  return out;
}

/// x[..., n] + bias[n].
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.size(0)) {
    detail::shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  const std::size_t n = bias.size(0);
  const std::size_t rows = x.numel() / n;
  auto out = detail::make_output<T>(x.shape());
  auto xv = x.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) ov[r * n + j] = xv[r * n + j] + bv[j];
  }
  if (detail::any_requires_grad<T>({&x, &bias})) {
    auto sx = x.storage();
    auto sb = bias.storage();
    detail::attach<T>(out, OpKind::add_bias, {sx, sb}, [sx, sb, rows, n](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (T* g = detail::grad_target(sb)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
        }
      }
    });
  }
  return out;
}

/// GELU, tanh approximation.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  auto out = detail::make_output<T>(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  std::vector<T> tanh_terms(ov.size());
  for (std::size_t i = 0; i < ov.size(); ++i) {
    tanh_terms[i] = detail::gelu_tanh_term(xv[i]);
    ov[i] = T(0.5) * xv[i] * (T(1) + tanh_terms[i]);
  }
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::gelu, {sx}, [sx, t = std::move(tanh_terms)](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          g[i] += o.grad[i] * detail::gelu_derivative(sx->data[i], t[i]);
        }
      }
    });
  }
  return out;
}

/// Softmax over the last axis. With a causal mask the input must end in a
/// square [.., s, s] block and entries above the diagonal get zero mass.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, AttentionMask mask = AttentionMask::none) {
  if (x.rank() == 0) detail::bad_shape("softmax", x.shape(), "rank 0");
  const std::size_t n = x.shape().back();
  if (mask == AttentionMask::causal && (x.rank() < 2 || x.size(x.rank() - 2) != n)) {
    detail::bad_shape("softmax", x.shape(), "causal mask needs a square trailing block");
  }
  const std::size_t rows = x.numel() / n;
  auto out = detail::make_output<T>(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t limit = mask == AttentionMask::causal ? (r % n) + 1 : n;
    const T* in = xv.data() + r * n;
    T* y = ov.data() + r * n;
    T peak = in[0];
    for (std::size_t j = 1; j < limit; ++j) peak = std::max(peak, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      y[j] = std::exp(in[j] - peak);
      total += static_cast<double>(y[j]);
    }
    const T inv = static_cast<T>(1.0 / total);
    for (std::size_t j = 0; j < limit; ++j) y[j] *= inv;
    for (std::size_t j = limit; j < n; ++j) y[j] = T(0);
  }
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::softmax, {sx}, [sx, rows, n](const TensorStorage<T>& o) {
      T* g = detail::grad_target(sx);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = o.data.data() + r * n;
        const T* dy = o.grad.data() + r * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

/// Layer normalization over the last axis followed by gain/bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, double epsilon = kLayerNormEpsilon) {
  if (x.rank() == 0 || gain.rank() != 1 || bias.shape() != gain.shape() ||
      x.shape().back() != gain.size(0)) {
    detail::shape_mismatch("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t n = gain.size(0);
  const std::size_t rows = x.numel() / n;
  auto out = detail::make_output<T>(x.shape());
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const T rstd = static_cast<T>(1.0 / std::sqrt(var + epsilon));
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < n; ++j) {
      const T xhat = static_cast<T>(in[j] - mean) * rstd;
      normalized[r * n + j] = xhat;
      ov[r * n + j] = xhat * gv[j] + bv[j];
    }
  }
  if (detail::any_requires_grad<T>({&x, &gain, &bias})) {
    auto sx = x.storage();
    auto sg = gain.storage();
    auto sb = bias.storage();
    detail::attach<T>(out, OpKind::layer_norm, {sx, sg, sb},
                      [sx, sg, sb, rows, n, normalized = std::move(normalized),
                       inv_std = std::move(inv_std)](const TensorStorage<T>& o) {
      T* gx = detail::grad_target(sx);
      T* gg = detail::grad_target(sg);
      T* gb = detail::grad_target(sb);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dy = o.grad.data() + r * n;
        const T* xhat = normalized.data() + r * n;
        if (gg || gb) {
          for (std::size_t j = 0; j < n; ++j) {
            if (gg) gg[j] += dy[j] * xhat[j];
            if (gb) gb[j] += dy[j];
          }
        }
        if (gx) {
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = dy[j] * sg->data[j];
            mean_d += d;
            mean_dx += d * xhat[j];
          }
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T d = dy[j] * sg->data[j];
            gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[j] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

/// Row lookup: table[V, D] gathered by ids -> leading_shape + [D].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids, Shape leading_shape) {
  if (table.rank() != 2) detail::bad_shape("embedding", table.shape(), "table must be rank 2");
  if (element_count(leading_shape) != ids.size()) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) + " ids do not fill " + to_string(leading_shape));
  }
  const std::size_t vocab = table.size(0), dim = table.size(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InvalidArgument("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
  Shape out_shape = std::move(leading_shape);
  out_shape.push_back(dim);
  auto out = detail::make_output<T>(out_shape);
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * dim, dim, ov.data() + i * dim);
  }
  if (detail::any_requires_grad<T>({&table})) {
    auto st = table.storage();
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    detail::attach<T>(out, OpKind::embedding, {st}, [st, dim, saved = std::move(saved)](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(st)) {
        for (std::size_t i = 0; i < saved.size(); ++i) {
          T* row = g + static_cast<std::size_t>(saved[i]) * dim;
          for (std::size_t j = 0; j < dim; ++j) row[j] += o.grad[i * dim + j];
        }
      }
    });
  }
  return out;
}

/// Mean softmax cross-entropy over positions whose target != kIgnoreTarget.
/// logits[..., V]; targets has one entry per row of logits.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets) {
  if (logits.rank() == 0) detail::bad_shape("cross_entropy", logits.shape(), "rank 0");
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     to_string(logits.shape()));
  }
  std::size_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw InvalidArgument("cross_entropy: target " + std::to_string(t) + " outside vocabulary");
    }
    ++count;
  }
  if (count == 0) throw InvalidArgument("cross_entropy: empty prediction set");

  auto lv = logits.values();
  std::vector<T> log_normalizer(rows, T(0));
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == kIgnoreTarget) continue;
    const T* z = lv.data() + r * vocab;
    T peak = z[0];
    for (std::size_t j = 1; j < vocab; ++j) peak = std::max(peak, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) s += std::exp(static_cast<double>(z[j] - peak));
    const double lse = static_cast<double>(peak) + std::log(s);
    log_normalizer[r] = static_cast<T>(lse);
    total += lse - static_cast<double>(z[targets[r]]);
  }
  auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
  if (detail::any_requires_grad<T>({&logits})) {
    auto sl = logits.storage();
    std::vector<std::int32_t> saved(targets.begin(), targets.end());
    detail::attach<T>(out, OpKind::cross_entropy, {sl},
                      [sl, vocab, rows, count, saved = std::move(saved),
                       log_normalizer = std::move(log_normalizer)](const TensorStorage<T>& o) {
      T* g = detail::grad_target(sl);
      if (!g) return;
      const T upstream = o.grad[0] / static_cast<T>(count);
      for (std::size_t r = 0; r < rows; ++r) {
        if (saved[r] == kIgnoreTarget) continue;
        const T* z = sl->data.data() + r * vocab;
        T* gr = g + r * vocab;
        for (std::size_t j = 0; j < vocab; ++j) gr[j] += upstream * std::exp(z[j] - log_normalizer[r]);
        gr[saved[r]] -= upstream;
      }
    });
  }
  return out;
}

/// Swaps two axes (materialized copy).
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x, std::size_t axis_a, std::size_t axis_b) {
  const std::size_t rank = x.rank();
  if (axis_a >= rank || axis_b >= rank) detail::bad_shape("transpose", x.shape(), "axis out of range");
  if (axis_a > axis_b) std::swap(axis_a, axis_b);
  const Shape& in = x.shape();
  Shape out_shape = in;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  // view as [outer, na, mid, nb, inner] -> [outer, nb, mid, na, inner]
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t d = 0; d < axis_a; ++d) outer *= in[d];
  for (std::size_t d = axis_a + 1; d < axis_b; ++d) mid *= in[d];
  for (std::size_t d = axis_b + 1; d < rank; ++d) inner *= in[d];
  const std::size_t na = in[axis_a], nb = in[axis_b];
  auto for_each_block = [=](auto&& copy) {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < nb; ++j) {
        for (std::size_t m = 0; m < mid; ++m) {
          for (std::size_t i = 0; i < na; ++i) {
            const std::size_t dst = (((o * nb + j) * mid + m) * na + i) * inner;
            const std::size_t src = (((o * na + i) * mid + m) * nb + j) * inner;
            copy(dst, src, inner);
          }
        }
      }
    }
  };
  auto out = detail::make_output<T>(out_shape);
  const T* xv = x.values().data();
  T* ov = out.values().data();
  for_each_block([&](std::size_t dst, std::size_t src, std::size_t n) { std::copy_n(xv + src, n, ov + dst); });
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::transpose, {sx}, [sx, for_each_block](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        const T* og = o.grad.data();
        for_each_block([&](std::size_t dst, std::size_t src, std::size_t n) {
          for (std::size_t e = 0; e < n; ++e) g[src + e] += og[dst + e];
        });
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (element_count(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  auto out = BasicTensor<T>(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::reshape, {sx}, [sx](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double total = 0.0;
  for (T v : x.values()) total += v;
  auto out = BasicTensor<T>::scalar(static_cast<T>(total));
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::sum, {sx}, [sx](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < sx->data.size(); ++i) g[i] += o.grad[0];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) detail::bad_shape("mean", x.shape(), "empty tensor");
  double total = 0.0;
  for (T v : x.values()) total += v;
  const std::size_t n = x.numel();
  auto out = BasicTensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::mean, {sx}, [sx, n](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        const T share = o.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) g[i] += share;
      }
    });
  }
  return out;
}

/// Inverted dropout: kept entries are scaled by 1/(1-p). p == 0 is the identity.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw InvalidArgument("dropout: rate must be in [0, 1)");
  if (p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  // 24-bit uniform draws; cheaper than a distribution object and stable.
  const auto threshold = static_cast<std::uint64_t>(p * double(1u << 24));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = (rng() >> 40) < threshold ? T(0) : keep_scale;
  auto out = detail::make_output<T>(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * mask[i];
  if (detail::any_requires_grad<T>({&x})) {
    auto sx = x.storage();
    detail::attach<T>(out, OpKind::dropout, {sx}, [sx, mask = std::move(mask)](const TensorStorage<T>& o) {
      if (T* g = detail::grad_target(sx)) {
        for (std::size_t i = 0; i < mask.size(); ++i) g[i] += o.grad[i] * mask[i];
      }
    });
  }
  return out;
}

/// Prepends one row per batch entry: x[B, S, D], rows[b] of shape [D] -> [B, S+1, D].
/// The same row tensor may appear for several batch entries; its gradient
/// accumulates over all of them.
template <typename T>
BasicTensor<T> prepend_rows(const BasicTensor<T>& x, std::span<const BasicTensor<T>> rows) {
  if (x.rank() != 3) detail::bad_shape("prepend_rows", x.shape(), "expected [batch, seq, dim]");
  const std::size_t batch = x.size(0), seq = x.size(1), dim = x.size(2);
  if (rows.size() != batch) {
    throw ShapeError("prepend_rows: " + std::to_string(rows.size()) + " rows for batch of " +
                     std::to_string(batch));
  }
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size(0) != dim) detail::shape_mismatch("prepend_rows", x.shape(), r.shape());
  }
  auto out = detail::make_output<T>({batch, seq + 1, dim});
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = ov.data() + b * (seq + 1) * dim;
    std::copy_n(rows[b].values().data(), dim, dst);
    std::copy_n(xv.data() + b * seq * dim, seq * dim, dst + dim);
  }
  bool tracked = detail::any_requires_grad<T>({&x});
  for (const auto& r : rows) tracked = tracked || detail::any_requires_grad<T>({&r});
  if (tracked) {
    auto sx = x.storage();
    std::vector<std::shared_ptr<TensorStorage<T>>> inputs{sx};
    std::vector<std::shared_ptr<TensorStorage<T>>> row_storage;
    for (const auto& r : rows) {
      inputs.push_back(r.storage());
      row_storage.push_back(r.storage());
    }
    detail::attach<T>(out, OpKind::prepend_rows, std::move(inputs),
                      [sx, row_storage = std::move(row_storage), batch, seq, dim](const TensorStorage<T>& o) {
      T* gx = detail::grad_target(sx);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = o.grad.data() + b * (seq + 1) * dim;
        if (T* gr = detail::grad_target(row_storage[b])) {
          for (std::size_t j = 0; j < dim; ++j) gr[j] += src[j];
        }
        if (gx) {
          T* dst = gx + b * seq * dim;
          for (std::size_t j = 0; j < seq * dim; ++j) dst[j] += src[dim + j];
        }
      }
    });
  }
  return out;
}

}  // namespace lifelong

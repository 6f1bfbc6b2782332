#pragma once
// Differentiable operations used by the matching network.
//
// Layout conventions: matrices are [rows, cols]; convolution inputs are
// channels-last ([H, W, C] for rank 2, [D, H, W, C] for rank 3) and
// filters are [k..., C_in, C_out].

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "storyline/autodiff/tensor.hpp"

namespace storyline::ad {

namespace detail {

template <class T>
bool is_scalar(const Tensor<T>& t) {
  return t.size() == 1;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

template <class T>
void require_matrix(const Tensor<T>& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " +
                             shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// a[m,k] * b[k,n], or a[m,k] * b[n,k]^T when transpose_b is set.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b,
                 bool transpose_b = false) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  detail::require(k == bk, "matmul: inner dimensions differ (" +
                               shape_str(a.shape()) + " x " +
                               shape_str(b.shape()) +
                               (transpose_b ? "^T)" : ")"));
  std::vector<T> out(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  if (transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
        out[i * n + j] = acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      T* row = out.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        const T* brow = B + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  }
  return make_result<T>(
      {m, n}, std::move(out), {&a, &b},
      [m, k, n, transpose_b](Node<T>& o) {
        const T* G = o.grad.data();
        const T* A = o.inputs[0]->value.data();
        const T* B = o.inputs[1]->value.data();
        if (T* dA = grad_of(o, 0)) {
          // dA[i,p] += sum_j G[i,j] * B(p,j)
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const T g = G[i * n + j];
              if (g == T(0)) continue;
              if (transpose_b) {
                for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
              } else {
                for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[p * n + j];
              }
            }
          }
        }
        if (T* dB = grad_of(o, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const T av = A[i * k + p];
              if (av == T(0)) continue;
              if (transpose_b) {
                for (std::size_t j = 0; j < n; ++j) dB[j * k + p] += av * G[i * n + j];
              } else {
                for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
              }
            }
          }
        }
      },
      "matmul");
}

// Row-wise cosine similarity; a zero row on either side gives 0.
template <class T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "cosine_matrix");
  detail::require_matrix(b, "cosine_matrix");
  detail::require(a.dim(1) == b.dim(1),
                  "cosine_matrix: feature dims differ " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  const T* A = a.data().data();
  const T* B = b.data().data();
  std::vector<T> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) {
    T s = 0;
    for (std::size_t p = 0; p < d; ++p) s += A[i * d + p] * A[i * d + p];
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < n; ++j) {
    T s = 0;
    for (std::size_t p = 0; p < d; ++p) s += B[j * d + p] * B[j * d + p];
    nb[j] = std::sqrt(s);
  }
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    if (na[i] == T(0)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (nb[j] == T(0)) continue;
      T dot = 0;
      for (std::size_t p = 0; p < d; ++p) dot += A[i * d + p] * B[j * d + p];
      T c = dot / (na[i] * nb[j]);
      out[i * n + j] = std::clamp(c, T(-1), T(1));
    }
  }
  return make_result<T>(
      {m, n}, std::move(out), {&a, &b},
      [m, n, d, na = std::move(na), nb = std::move(nb)](Node<T>& o) {
        const T* G = o.grad.data();
        const T* C = o.value.data();
        const T* A = o.inputs[0]->value.data();
        const T* B = o.inputs[1]->value.data();
        T* dA = grad_of(o, 0);
        T* dB = grad_of(o, 1);
        for (std::size_t i = 0; i < m; ++i) {
          if (na[i] == T(0)) continue;
          for (std::size_t j = 0; j < n; ++j) {
            if (nb[j] == T(0)) continue;
            const T g = G[i * n + j];
            if (g == T(0)) continue;
            const T c = C[i * n + j];
            const T inv = T(1) / (na[i] * nb[j]);
            const T ca = c / (na[i] * na[i]);
            const T cb = c / (nb[j] * nb[j]);
            for (std::size_t p = 0; p < d; ++p) {
              if (dA) dA[i * d + p] += g * (B[j * d + p] * inv - ca * A[i * d + p]);
              if (dB) dB[j * d + p] += g * (A[i * d + p] * inv - cb * B[j * d + p]);
            }
          }
        }
      },
      "cosine_matrix");
}

// ---------------------------------------------------------------------------
// Normalization

// Softmax over the last axis. `mask`, when given, has either one entry per
// column (shared by all rows) or one entry per element; masked entries get
// exactly 0.
template <class T>
Tensor<T> softmax_last(const Tensor<T>& x,
                       std::span<const std::uint8_t> mask = {}) {
  detail::require(x.rank() >= 1, "softmax_last: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.size() / n : 0;
  detail::require(mask.empty() || mask.size() == n || mask.size() == x.size(),
                  "softmax_last: mask size mismatch");
  const bool per_column = mask.size() == n && mask.size() != x.size();
  std::vector<T> out(x.size(), T(0));
  const T* X = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto keep = [&](std::size_t j) {
      if (mask.empty()) return true;
      return mask[per_column ? j : r * n + j] != 0;
    };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep(j)) mx = std::max(mx, X[r * n + j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      throw DegenerateRowError("softmax_last: row " + std::to_string(r) +
                               " has every entry masked");
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(j)) continue;
      const T e = std::exp(X[r * n + j] - mx);
      out[r * n + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] /= sum;
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x},
      [rows, n](Node<T>& o) {
        T* dX = grad_of(o, 0);
        const T* Y = o.value.data();
        const T* G = o.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += G[r * n + j] * Y[r * n + j];
          for (std::size_t j = 0; j < n; ++j)
            dX[r * n + j] += Y[r * n + j] * (G[r * n + j] - dot);
        }
      },
      "softmax_last");
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  detail::require(x.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  detail::require(d >= 1, "layer_norm: empty feature axis");
  detail::require(gain.size() == d && bias.size() == d,
                  "layer_norm: gain/bias must have " + std::to_string(d) +
                      " entries");
  const std::size_t rows = x.size() / d;
  const T* X = x.data().data();
  const T* Gn = gain.data().data();
  const T* Bs = bias.data().data();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += X[r * d + j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T c = X[r * d + j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (X[r * d + j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = Gn[j] * h + Bs[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](
          Node<T>& o) {
        const T* G = o.grad.data();
        const T* Gn = o.inputs[1]->value.data();
        T* dX = grad_of(o, 0);
        T* dGain = grad_of(o, 1);
        T* dBias = grad_of(o, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = G + r * d;
          const T* h = xhat.data() + r * d;
          if (dGain || dBias) {
            for (std::size_t j = 0; j < d; ++j) {
              if (dGain) dGain[j] += g[j] * h[j];
              if (dBias) dBias[j] += g[j];
            }
          }
          if (dX) {
            T mean_g = 0, mean_gh = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T gh = g[j] * Gn[j];
              mean_g += gh;
              mean_gh += gh * h[j];
            }
            mean_g /= T(d);
            mean_gh /= T(d);
            for (std::size_t j = 0; j < d; ++j) {
              dX[r * d + j] +=
                  inv_sigma[r] * (g[j] * Gn[j] - mean_g - h[j] * mean_gh);
            }
          }
        }
      },
      "layer_norm");
}

// ---------------------------------------------------------------------------
// Pointwise

namespace detail {

template <class T, class Fwd, class Bwd>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Bwd bwd, const char* op) {
  std::vector<T> out(x.size());
  const T* X = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(X[i]);
  return make_result<T>(
      x.shape(), std::move(out), {&x},
      [bwd](Node<T>& o) {
        T* dX = grad_of(o, 0);
        const T* X = o.inputs[0]->value.data();
        const T* Y = o.value.data();
        const T* G = o.grad.data();
        for (std::size_t i = 0; i < o.value.size(); ++i)
          if (G[i] != T(0)) dX[i] += G[i] * bwd(X[i], Y[i]);
      },
      op);
}

enum class Binary { add, sub, mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind,
                 const char* op) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.size() == 1;
  const bool b_scalar = !same && b.size() == 1;
  require(same || a_scalar || b_scalar,
          std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const T* A = a.data().data();
  const T* B = b.data().data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T av = A[a_scalar ? 0 : i];
    const T bv = B[b_scalar ? 0 : i];
    switch (kind) {
      case Binary::add: out[i] = av + bv; break;
      case Binary::sub: out[i] = av - bv; break;
      case Binary::mul: out[i] = av * bv; break;
    }
  }
  return make_result<T>(
      shape, std::move(out), {&a, &b},
      [n, kind, a_scalar, b_scalar](Node<T>& o) {
        const T* G = o.grad.data();
        const T* A = o.inputs[0]->value.data();
        const T* B = o.inputs[1]->value.data();
        T* dA = grad_of(o, 0);
        T* dB = grad_of(o, 1);
        for (std::size_t i = 0; i < n; ++i) {
          const T g = G[i];
          if (g == T(0)) continue;
          const std::size_t ia = a_scalar ? 0 : i;
          const std::size_t ib = b_scalar ? 0 : i;
          switch (kind) {
            case Binary::add:
              if (dA) dA[ia] += g;
              if (dB) dB[ib] += g;
              break;
            case Binary::sub:
              if (dA) dA[ia] += g;
              if (dB) dB[ib] -= g;
              break;
            case Binary::mul:
              if (dA) dA[ia] += g * B[ib];
              if (dB) dB[ib] += g * A[ia];
              break;
          }
        }
      },
      op);
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

// Clamp to [lo, hi]; the gradient is zero where the bound is active.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); }, "clamp");
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::Binary::add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::Binary::sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::Binary::mul, "mul");
}

// x[..., C] + bias[C] broadcast over every leading position.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require(x.rank() >= 1 && bias.size() == x.shape().back(),
                  "add_bias: bias length must equal last extent of " +
                      shape_str(x.shape()));
  const std::size_t c = bias.size();
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* Bs = bias.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += Bs[i % c];
  return make_result<T>(
      x.shape(), std::move(out), {&x, &bias},
      [c](Node<T>& o) {
        const T* G = o.grad.data();
        if (T* dX = grad_of(o, 0))
          for (std::size_t i = 0; i < o.value.size(); ++i) dX[i] += G[i];
        if (T* dB = grad_of(o, 1))
          for (std::size_t i = 0; i < o.value.size(); ++i) dB[i % c] += G[i];
      },
      "add_bias");
}

// Row k of x[n, d] multiplied by s[k].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
  detail::require_matrix(x, "scale_rows");
  detail::require(s.size() == x.dim(0), "scale_rows: need one factor per row of " +
                                            shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  const T* X = x.data().data();
  const T* S = s.data().data();
  std::vector<T> out(x.size());
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < d; ++j) out[k * d + j] = S[k] * X[k * d + j];
  return make_result<T>(
      x.shape(), std::move(out), {&x, &s},
      [n, d](Node<T>& o) {
        const T* G = o.grad.data();
        const T* X = o.inputs[0]->value.data();
        const T* S = o.inputs[1]->value.data();
        T* dX = grad_of(o, 0);
        T* dS = grad_of(o, 1);
        for (std::size_t k = 0; k < n; ++k) {
          for (std::size_t j = 0; j < d; ++j) {
            const T g = G[k * d + j];
            if (dX) dX[k * d + j] += g * S[k];
            if (dS) dS[k] += g * X[k * d + j];
          }
        }
      },
      "scale_rows");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>(
      {1}, {s}, {&x},
      [](Node<T>& o) {
        T* dX = grad_of(o, 0);
        const T g = o.grad[0];
        for (std::size_t i = 0; i < o.inputs[0]->value.size(); ++i) dX[i] += g;
      },
      "sum");
}

// Column sums of x[n, m] -> [m].
template <class T>
Tensor<T> sum_rows(const Tensor<T>& x) {
  detail::require_matrix(x, "sum_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  const T* X = x.data().data();
  std::vector<T> out(m, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < m; ++k) out[k] += X[j * m + k];
  return make_result<T>(
      {m}, std::move(out), {&x},
      [n, m](Node<T>& o) {
        T* dX = grad_of(o, 0);
        const T* G = o.grad.data();
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t k = 0; k < m; ++k) dX[j * m + k] += G[k];
      },
      "sum_rows");
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(shape_size(shape) == x.size(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(
      std::move(shape), std::move(out), {&x},
      [](Node<T>& o) {
        T* dX = grad_of(o, 0);
        for (std::size_t i = 0; i < o.value.size(); ++i) dX[i] += o.grad[i];
      },
      "reshape");
}

// table[V, d] rows selected by ids -> [len(ids), d].
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  detail::require_matrix(table, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  const T* E = table.data().data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw std::out_of_range("token id " + std::to_string(idx[i]) +
                              " outside vocabulary of size " + std::to_string(v));
    }
    std::copy_n(E + idx[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = idx.size();
  return make_result<T>(
      {n, d}, std::move(out), {&table},
      [d, idx = std::move(idx)](Node<T>& o) {
        T* dE = grad_of(o, 0);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) dE[idx[i] * d + j] += o.grad[i * d + j];
      },
      "gather_rows");
}

// Places x[m, n] into a zero [rows, cols] grid at (row_pos[i], col_pos[j]).
template <class T>
Tensor<T> scatter_grid(const Tensor<T>& x, std::span<const std::size_t> row_pos,
                       std::span<const std::size_t> col_pos, std::size_t rows,
                       std::size_t cols) {
  detail::require_matrix(x, "scatter_grid");
  detail::require(row_pos.size() == x.dim(0) && col_pos.size() == x.dim(1),
                  "scatter_grid: position lists do not match " + shape_str(x.shape()));
  std::vector<std::size_t> rp(row_pos.begin(), row_pos.end());
  std::vector<std::size_t> cp(col_pos.begin(), col_pos.end());
  for (auto r : rp) detail::require(r < rows, "scatter_grid: row out of range");
  for (auto c : cp) detail::require(c < cols, "scatter_grid: column out of range");
  const std::size_t m = rp.size(), n = cp.size();
  std::vector<T> out(rows * cols, T(0));
  const T* X = x.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[rp[i] * cols + cp[j]] = X[i * n + j];
  return make_result<T>(
      {rows, cols}, std::move(out), {&x},
      [cols, rp = std::move(rp), cp = std::move(cp)](Node<T>& o) {
        T* dX = grad_of(o, 0);
        const std::size_t n = cp.size();
        for (std::size_t i = 0; i < rp.size(); ++i)
          for (std::size_t j = 0; j < n; ++j) dX[i * n + j] += o.grad[rp[i] * cols + cp[j]];
      },
      "scatter_grid");
}

// Concatenation along the last axis; all leading extents must agree.
// 1-D inputs concatenate as plain vectors.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  detail::require(!first.empty(), "concat_channels: scalar input");
  Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    detail::require(s.size() == first.size() &&
                        std::equal(lead.begin(), lead.end(), s.begin()),
                    "concat_channels: spatial mismatch " + shape_str(first) +
                        " vs " + shape_str(s));
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t positions = shape_size(lead);
  std::vector<T> out(positions * total);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const T* P = parts[pi].data().data();
    const std::size_t w = widths[pi];
    for (std::size_t q = 0; q < positions; ++q)
      std::copy_n(P + q * w, w, out.data() + q * total + offset);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result<T>(
      std::move(shape), std::move(out), parts,
      [positions, total, widths = std::move(widths)](Node<T>& o) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
          const std::size_t w = widths[pi];
          if (T* dP = grad_of(o, pi)) {
            for (std::size_t q = 0; q < positions; ++q)
              for (std::size_t c = 0; c < w; ++c)
                dP[q * w + c] += o.grad[q * total + offset + c];
          }
          offset += w;
        }
      },
      "concat_channels");
}

// Stacks equally-shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "stack: no inputs");
  const Shape& first = parts[0].shape();
  for (const auto& p : parts)
    detail::require(p.shape() == first, "stack: shape mismatch " +
                                            shape_str(first) + " vs " +
                                            shape_str(p.shape()));
  const std::size_t each = parts[0].size();
  std::vector<T> out(each * parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy_n(parts[i].data().data(), each, out.data() + i * each);
  Shape shape{parts.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  return make_result<T>(
      std::move(shape), std::move(out), parts,
      [each](Node<T>& o) {
        for (std::size_t i = 0; i < o.inputs.size(); ++i)
          if (T* dP = grad_of(o, i))
            for (std::size_t q = 0; q < each; ++q) dP[q] += o.grad[i * each + q];
      },
      "stack");
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace detail {

// Rank-2 and rank-3 inputs share one code path with a unit depth axis.
struct Grid3 {
  std::size_t d, h, w;
  std::size_t count() const { return d * h * w; }
};

inline Grid3 spatial_of(const Shape& s, int rank) {
  if (rank == 2) return {1, s[0], s[1]};
  return {s[0], s[1], s[2]};
}

}  // namespace detail

// "Same" zero-padded convolution with stride 1. For a kernel extent k the
// padding before is (k-1)/2 and after is k/2.
template <class T>
Tensor<T> conv_nd(const Tensor<T>& x, const Tensor<T>& filters, int rank) {
  detail::require(rank == 2 || rank == 3, "conv_nd: rank must be 2 or 3");
  detail::require(x.rank() == static_cast<std::size_t>(rank) + 1,
                  "conv_nd: input " + shape_str(x.shape()) +
                      " is not rank-" + std::to_string(rank) + " channels-last");
  detail::require(filters.rank() == static_cast<std::size_t>(rank) + 2,
                  "conv_nd: filter bank " + shape_str(filters.shape()) +
                      " does not match rank " + std::to_string(rank));
  const std::size_t cin = x.shape().back();
  const std::size_t cout = filters.shape().back();
  detail::require(filters.shape()[rank] == cin,
                  "conv_nd: channel mismatch, input has " + std::to_string(cin) +
                      " channels, filters expect " +
                      std::to_string(filters.shape()[rank]));
  const detail::Grid3 g = detail::spatial_of(x.shape(), rank);
  const detail::Grid3 k = detail::spatial_of(filters.shape(), rank);
  const std::array<long, 3> pad{static_cast<long>((k.d - 1) / 2),
                                static_cast<long>((k.h - 1) / 2),
                                static_cast<long>((k.w - 1) / 2)};
  const T* X = x.data().data();
  const T* W = filters.data().data();

  // Input positions whose channel vector is entirely zero contribute nothing.
  std::vector<std::uint8_t> live(g.count(), 0);
  for (std::size_t p = 0; p < g.count(); ++p)
    for (std::size_t c = 0; c < cin; ++c)
      if (X[p * cin + c] != T(0)) {
        live[p] = 1;
        break;
      }

  std::vector<T> out(g.count() * cout, T(0));
  for (std::size_t od = 0; od < g.d; ++od)
    for (std::size_t oh = 0; oh < g.h; ++oh)
      for (std::size_t ow = 0; ow < g.w; ++ow) {
        T* acc = out.data() + ((od * g.h + oh) * g.w + ow) * cout;
        for (std::size_t kd = 0; kd < k.d; ++kd) {
          const long id = static_cast<long>(od + kd) - pad[0];
          if (id < 0 || id >= static_cast<long>(g.d)) continue;
          for (std::size_t kh = 0; kh < k.h; ++kh) {
            const long ih = static_cast<long>(oh + kh) - pad[1];
            if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
            for (std::size_t kw = 0; kw < k.w; ++kw) {
              const long iw = static_cast<long>(ow + kw) - pad[2];
              if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
              const std::size_t ip = (id * g.h + ih) * g.w + iw;
              if (!live[ip]) continue;
              const T* xin = X + ip * cin;
              const T* wk = W + ((kd * k.h + kh) * k.w + kw) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const T xv = xin[ci];
                if (xv == T(0)) continue;
                const T* wrow = wk + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) acc[co] += xv * wrow[co];
              }
            }
          }
        }
      }

  Shape shape = x.shape();
  shape.back() = cout;
  return make_result<T>(
      std::move(shape), std::move(out), {&x, &filters},
      [g, k, pad, cin, cout](Node<T>& o) {
        const T* X = o.inputs[0]->value.data();
        const T* W = o.inputs[1]->value.data();
        const T* G = o.grad.data();
        T* dX = grad_of(o, 0);
        T* dW = grad_of(o, 1);
        for (std::size_t od = 0; od < g.d; ++od)
          for (std::size_t oh = 0; oh < g.h; ++oh)
            for (std::size_t ow = 0; ow < g.w; ++ow) {
              const T* gy = G + ((od * g.h + oh) * g.w + ow) * cout;
              bool any = false;
              for (std::size_t co = 0; co < cout && !any; ++co) any = gy[co] != T(0);
              if (!any) continue;
              for (std::size_t kd = 0; kd < k.d; ++kd) {
                const long id = static_cast<long>(od + kd) - pad[0];
                if (id < 0 || id >= static_cast<long>(g.d)) continue;
                for (std::size_t kh = 0; kh < k.h; ++kh) {
                  const long ih = static_cast<long>(oh + kh) - pad[1];
                  if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                  for (std::size_t kw = 0; kw < k.w; ++kw) {
                    const long iw = static_cast<long>(ow + kw) - pad[2];
                    if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
                    const std::size_t ip = (id * g.h + ih) * g.w + iw;
                    const std::size_t wo = ((kd * k.h + kh) * k.w + kw) * cin * cout;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                      const T* wrow = W + wo + ci * cout;
                      if (dX) {
                        T s = 0;
                        for (std::size_t co = 0; co < cout; ++co) s += wrow[co] * gy[co];
                        dX[ip * cin + ci] += s;
                      }
                      const T xv = X[ip * cin + ci];
                      if (dW && xv != T(0)) {
                        T* dwrow = dW + wo + ci * cout;
                        for (std::size_t co = 0; co < cout; ++co) dwrow[co] += xv * gy[co];
                      }
                    }
                  }
                }
              }
            }
      },
      "conv_nd");
}

// Max pooling with stride equal to the window. The input is treated as
// zero-padded up to the next multiple of the window, so each output extent
// is ceil(in / window). Ties go to the first position in scan order.
template <class T>
Tensor<T> maxpool_nd(const Tensor<T>& x, const std::vector<std::size_t>& window,
                     int rank) {
  detail::require(rank == 2 || rank == 3, "maxpool_nd: rank must be 2 or 3");
  detail::require(window.size() == static_cast<std::size_t>(rank),
                  "maxpool_nd: window rank mismatch");
  detail::require(x.rank() == static_cast<std::size_t>(rank) + 1,
                  "maxpool_nd: input " + shape_str(x.shape()) +
                      " is not rank-" + std::to_string(rank) + " channels-last");
  for (auto w : window) detail::require(w >= 1, "maxpool_nd: zero window");
  const std::size_t c = x.shape().back();
  const detail::Grid3 g = detail::spatial_of(x.shape(), rank);
  const detail::Grid3 win =
      rank == 2 ? detail::Grid3{1, window[0], window[1]}
                : detail::Grid3{window[0], window[1], window[2]};
  auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  const detail::Grid3 og{ceil_div(g.d, win.d), ceil_div(g.h, win.h),
                         ceil_div(g.w, win.w)};
  const T* X = x.data().data();
  std::vector<T> out(og.count() * c);
  // Flat input index of each maximum, or -1 for a padding cell.
  std::vector<long> arg(og.count() * c);
  for (std::size_t od = 0; od < og.d; ++od)
    for (std::size_t oh = 0; oh < og.h; ++oh)
      for (std::size_t ow = 0; ow < og.w; ++ow)
        for (std::size_t ch = 0; ch < c; ++ch) {
          bool first = true;
          T best = 0;
          long best_at = -1;
          for (std::size_t kd = 0; kd < win.d; ++kd)
            for (std::size_t kh = 0; kh < win.h; ++kh)
              for (std::size_t kw = 0; kw < win.w; ++kw) {
                const std::size_t id = od * win.d + kd;
                const std::size_t ih = oh * win.h + kh;
                const std::size_t iw = ow * win.w + kw;
                T v = 0;
                long at = -1;
                if (id < g.d && ih < g.h && iw < g.w) {
                  at = static_cast<long>(((id * g.h + ih) * g.w + iw) * c + ch);
                  v = X[at];
                }
                if (first || v > best) {
                  best = v;
                  best_at = at;
                  first = false;
                }
              }
          const std::size_t oi = ((od * og.h + oh) * og.w + ow) * c + ch;
          out[oi] = best;
          arg[oi] = best_at;
        }
  Shape shape = rank == 2 ? Shape{og.h, og.w, c} : Shape{og.d, og.h, og.w, c};
  return make_result<T>(
      std::move(shape), std::move(out), {&x},
      [arg = std::move(arg)](Node<T>& o) {
        T* dX = grad_of(o, 0);
        for (std::size_t i = 0; i < arg.size(); ++i)
          if (arg[i] >= 0) dX[arg[i]] += o.grad[i];
      },
      "maxpool_nd");
}

// ---------------------------------------------------------------------------
// Loss

// Mean binary cross-entropy; probabilities are clipped to [eps, 1-eps].
template <class T>
Tensor<T> binary_cross_entropy(const Tensor<T>& g, const Tensor<T>& y,
                               T eps = T(1e-7)) {
  detail::require(g.size() == y.size() && g.size() > 0,
                  "binary_cross_entropy: prediction/label size mismatch");
  const std::size_t n = g.size();
  const T* Gp = g.data().data();
  std::vector<T> labels(y.data().begin(), y.data().end());
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != T(0) && labels[i] != T(1)) {
      throw std::invalid_argument("binary_cross_entropy: label " +
                                  std::to_string(labels[i]) + " is not 0 or 1");
    }
    const T p = std::clamp(Gp[i], eps, T(1) - eps);
    total -= labels[i] * std::log(p) + (T(1) - labels[i]) * std::log(T(1) - p);
  }
  return make_result<T>(
      {1}, {total / T(n)}, {&g},
      [n, eps, labels = std::move(labels)](Node<T>& o) {
        T* dG = grad_of(o, 0);
        const T* Gp = o.inputs[0]->value.data();
        const T up = o.grad[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) {
          const T p = Gp[i];
          if (p <= eps || p >= T(1) - eps) continue;
          dG[i] += up * (labels[i] == T(1) ? -T(1) / p : T(1) / (T(1) - p));
        }
      },
      "binary_cross_entropy");
}

}  // namespace storyline::ad

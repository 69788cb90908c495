#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rt/kernels.hpp"
#include "rt/tape.hpp"

// Differentiable ops. Forward kernels run through rt::kernels so that large
// instances parallelize; desk-scale tensors stay on the serial path and the
// result is bit-identical either way.

namespace rt {

namespace detail {

template <class T>
void check_same_shape(const Tape<T>& t, Var a, Var b, const char* op) {
  if (!t.val(a).same_shape(t.val(b)))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(t.val(a).shape()) +
                                " vs " + shape_str(t.val(b).shape()));
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::check_same_shape(t, a, b, "add");
  const auto& x = t.val(a);
  const auto& y = t.val(b);
  Tensor<T> out(x.shape());
  kernels::apply_binary(x.data(), y.data(), out.data(), out.numel(), [](T u, T v) { return u + v; });
  return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    for (Var p : {a, b})
      if (tp.needs_grad(p)) {
        auto& gp = tp.grad(p);
        for (std::size_t i = 0; i < g.numel(); ++i) gp[i] += g[i];
      }
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  detail::check_same_shape(t, a, b, "sub");
  const auto& x = t.val(a);
  const auto& y = t.val(b);
  Tensor<T> out(x.shape());
  kernels::apply_binary(x.data(), y.data(), out.data(), out.numel(), [](T u, T v) { return u - v; });
  return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  detail::check_same_shape(t, a, b, "mul");
  const auto& x = t.val(a);
  const auto& y = t.val(b);
  Tensor<T> out(x.shape());
  kernels::apply_binary(x.data(), y.data(), out.data(), out.numel(), [](T u, T v) { return u * v; });
  return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.val(a);
    const auto& y = tp.val(b);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <class T>
Var div(Tape<T>& t, Var a, Var b) {
  detail::check_same_shape(t, a, b, "div");
  const auto& x = t.val(a);
  const auto& y = t.val(b);
  Tensor<T> out(x.shape());
  kernels::apply_binary(x.data(), y.data(), out.data(), out.numel(), [](T u, T v) { return u / v; });
  return t.push(std::move(out), {a, b}, [a, b](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.val(a);
    const auto& y = tp.val(b);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / y[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i] * x[i] / (y[i] * y[i]);
    }
  });
}

/// y = k*x + c, with constant k and c.
template <class T>
Var affine(Tape<T>& t, Var a, double k, double c) {
  const auto& x = t.val(a);
  Tensor<T> out(x.shape());
  const T tk = static_cast<T>(k), tc = static_cast<T>(c);
  kernels::apply_unary(x.data(), out.data(), out.numel(), [tk, tc](T u) { return tk * u + tc; });
  return t.push(std::move(out), {a}, [a, tk](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += tk * g[i];
  });
}

template <class T>
Var neg(Tape<T>& t, Var a) {
  return affine(t, a, -1.0, 0.0);
}

namespace detail {

template <class T, class F, class D>
Var map_unary(Tape<T>& t, Var a, F fwd, D dfdx) {
  const auto& x = t.val(a);
  Tensor<T> out(x.shape());
  kernels::apply_unary(x.data(), out.data(), out.numel(), fwd);
  return t.push(std::move(out), {a}, [a, dfdx](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.val(a);
    const auto& y = tp.val(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += dfdx(x[i], y[i]) * g[i];
  });
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T softplus_scalar(T x) {
  // log(1 + e^x) without overflow: for large x the correction vanishes.
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace detail

template <class T>
Var sigmoid(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return detail::sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var relu(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var softplus(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return detail::softplus_scalar(x); },
      [](T x, T) { return detail::sigmoid_scalar(x); });
}

template <class T>
Var log_(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var sqrt_(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Var square(Tape<T>& t, Var a) {
  return detail::map_unary(
      t, a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Clamp to [lo, hi]; gradient passes only where the input is strictly
/// inside the interval.
template <class T>
Var clamp(Tape<T>& t, Var a, double lo, double hi) {
  const T tlo = static_cast<T>(lo), thi = static_cast<T>(hi);
  return detail::map_unary(
      t, a, [tlo, thi](T x) { return std::min(std::max(x, tlo), thi); },
      [tlo, thi](T x, T) { return (x > tlo && x < thi) ? T(1) : T(0); });
}

// ---- linear algebra ---------------------------------------------------------

/// C[m x n] = A[m x k] * B[k x n].
template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
          "matmul: incompatible shapes " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out({m, n});
  kernels::matmul(A.data(), B.data(), out.data(), m, k, n);
  return t.push(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(a)) {
      // dA += g * B^T
      Tensor<T> da({m, k});
      kernels::matmul_nt(g.data(), tp.val(b).data(), da.data(), m, n, k);
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += da[i];
    }
    if (tp.needs_grad(b)) {
      // dB += A^T * g
      kernels::matmul_tn(tp.val(a).data(), g.data(), tp.grad(b).data(), k, m, n, true);
    }
  });
}

/// y[h] = sum_d W[h,d] x[d] + b[h]; the b handle may be invalid for no bias.
template <class T>
Var dense(Tape<T>& t, Var x, Var w, Var b) {
  const auto& xv = t.val(x);
  const auto& wv = t.val(w);
  require(xv.rank() == 1 && wv.rank() == 2 && wv.dim(1) == xv.dim(0),
          "dense: incompatible shapes W" + shape_str(wv.shape()) + " x" + shape_str(xv.shape()));
  const std::size_t h = wv.dim(0), d = wv.dim(1);
  if (b.valid())
    require(t.val(b).rank() == 1 && t.val(b).dim(0) == h,
            "dense: bias shape " + shape_str(t.val(b).shape()) + " does not match rows " +
                std::to_string(h));
  Tensor<T> out({h});
  kernels::matmul(wv.data(), xv.data(), out.data(), h, d, 1);
  if (b.valid()) {
    const auto& bv = t.val(b);
    for (std::size_t i = 0; i < h; ++i) out[i] += bv[i];
  }
  return t.push(std::move(out), b.valid() ? std::initializer_list<Var>{x, w, b}
                                          : std::initializer_list<Var>{x, w},
                [x, w, b, h, d](Tape<T>& tp, Var self) {
                  const auto& g = tp.grad(self);
                  if (tp.needs_grad(x)) {
                    // dx += W^T g
                    kernels::matmul_tn(tp.val(w).data(), g.data(), tp.grad(x).data(), d, h, 1, true);
                  }
                  if (tp.needs_grad(w)) {
                    // dW += g x^T
                    const auto& xv = tp.val(x);
                    auto& gw = tp.grad(w);
                    for (std::size_t i = 0; i < h; ++i)
                      for (std::size_t j = 0; j < d; ++j) gw(i, j) += g[i] * xv[j];
                  }
                  if (b.valid() && tp.needs_grad(b)) {
                    auto& gb = tp.grad(b);
                    for (std::size_t i = 0; i < h; ++i) gb[i] += g[i];
                  }
                });
}

/// Y[t,h] = sum_d X[t,d] W[h,d] + b[h], the per-row projection used by the
/// recurrent layers. b may be invalid.
template <class T>
Var linear_rows(Tape<T>& t, Var x, Var w, Var b) {
  const auto& X = t.val(x);
  const auto& W = t.val(w);
  require(X.rank() == 2 && W.rank() == 2 && W.dim(1) == X.dim(1),
          "linear_rows: incompatible shapes X" + shape_str(X.shape()) + " W" + shape_str(W.shape()));
  const std::size_t rows = X.dim(0), d = X.dim(1), h = W.dim(0);
  Tensor<T> out({rows, h});
  kernels::matmul_nt(X.data(), W.data(), out.data(), rows, d, h);
  if (b.valid()) {
    const auto& bv = t.val(b);
    require(bv.numel() == h, "linear_rows: bias size mismatch");
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < h; ++j) out(i, j) += bv[j];
  }
  return t.push(std::move(out), b.valid() ? std::initializer_list<Var>{x, w, b}
                                          : std::initializer_list<Var>{x, w},
                [x, w, b, rows, d, h](Tape<T>& tp, Var self) {
                  const auto& g = tp.grad(self);  // [rows x h]
                  if (tp.needs_grad(x)) {
                    // dX += g W
                    Tensor<T> dx({rows, d});
                    kernels::matmul(g.data(), tp.val(w).data(), dx.data(), rows, h, d);
                    auto& gx = tp.grad(x);
                    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += dx[i];
                  }
                  if (tp.needs_grad(w)) {
                    // dW += g^T X
                    kernels::matmul_tn(g.data(), tp.val(x).data(), tp.grad(w).data(), h, rows, d,
                                       true);
                  }
                  if (b.valid() && tp.needs_grad(b)) {
                    auto& gb = tp.grad(b);
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < h; ++j) gb[j] += g(i, j);
                  }
                });
}

// ---- shape ops --------------------------------------------------------------

template <class T>
Var concat(Tape<T>& t, Var a, Var b) {
  const auto& x = t.val(a);
  const auto& y = t.val(b);
  require(x.rank() == 1 && y.rank() == 1, "concat: expects vectors");
  Tensor<T> out({x.numel() + y.numel()});
  std::copy(x.data(), x.data() + x.numel(), out.data());
  std::copy(y.data(), y.data() + y.numel(), out.data() + x.numel());
  const std::size_t na = x.numel();
  return t.push(std::move(out), {a, b}, [a, b, na](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(a)) {
      auto& ga = tp.grad(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(b)) {
      auto& gb = tp.grad(b);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[na + i];
    }
  });
}

/// Appends the vector e to every row of X: out[t] = [X[t], e].
template <class T>
Var concat_rows(Tape<T>& t, Var x, Var e) {
  const auto& X = t.val(x);
  const auto& ev = t.val(e);
  require(X.rank() == 2 && ev.rank() == 1, "concat_rows: expects matrix and vector");
  const std::size_t rows = X.dim(0), d = X.dim(1), k = ev.numel();
  Tensor<T> out({rows, d + k});
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(&X(i, 0), &X(i, 0) + d, &out(i, 0));
    std::copy(ev.data(), ev.data() + k, &out(i, d));
  }
  return t.push(std::move(out), {x, e}, [x, e, rows, d, k](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(x)) {
      auto& gx = tp.grad(x);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d; ++j) gx(i, j) += g(i, j);
    }
    if (tp.needs_grad(e)) {
      auto& ge = tp.grad(e);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < k; ++j) ge[j] += g(i, d + j);
    }
  });
}

/// Vector slice [i0, i1).
template <class T>
Var slice(Tape<T>& t, Var a, std::size_t i0, std::size_t i1) {
  const auto& x = t.val(a);
  require(x.rank() == 1 && i0 < i1 && i1 <= x.numel(), "slice: bad range");
  Tensor<T> out({i1 - i0});
  std::copy(x.data() + i0, x.data() + i1, out.data());
  return t.push(std::move(out), {a}, [a, i0](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i0 + i] += g[i];
  });
}

// ---- reductions and row ops -------------------------------------------------

template <class T>
Var sum(Tape<T>& t, Var a) {
  const auto& x = t.val(a);
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  return t.push(Tensor<T>::scalar(acc), {a}, [a](Tape<T>& tp, Var self) {
    const T g = tp.grad(self)[0];
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

template <class T>
Var mean(Tape<T>& t, Var a) {
  const std::size_t n = t.val(a).numel();
  return affine(t, sum(t, a), 1.0 / static_cast<double>(n), 0.0);
}

/// Column-wise max over the rows of X[t x h]: out[h] = max_t X[t,h]. The
/// gradient routes to the first maximizing row.
template <class T>
Var max_rows(Tape<T>& t, Var a) {
  const auto& X = t.val(a);
  require(X.rank() == 2 && X.dim(0) >= 1, "max_rows: expects a nonempty matrix");
  const std::size_t rows = X.dim(0), h = X.dim(1);
  Tensor<T> out({h});
  std::vector<std::size_t> arg(h, 0);
  for (std::size_t j = 0; j < h; ++j) {
    T best = X(0, j);
    for (std::size_t i = 1; i < rows; ++i)
      if (X(i, j) > best) {
        best = X(i, j);
        arg[j] = i;
      }
    out[j] = best;
  }
  return t.push(std::move(out), {a}, [a, arg = std::move(arg)](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t j = 0; j < g.numel(); ++j) ga(arg[j], j) += g[j];
  });
}

template <class T>
Var softmax_rows(Tape<T>& t, Var a) {
  const auto& X = t.val(a);
  require(X.rank() == 2, "softmax_rows: expects a matrix");
  const std::size_t rows = X.dim(0), c = X.dim(1);
  Tensor<T> out({rows, c});
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = X(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, X(i, j));
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += (out(i, j) = std::exp(X(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  return t.push(std::move(out), {a}, [a, rows, c](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.val(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < rows; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

template <class T>
Var log_softmax_rows(Tape<T>& t, Var a) {
  const auto& X = t.val(a);
  require(X.rank() == 2, "log_softmax_rows: expects a matrix");
  const std::size_t rows = X.dim(0), c = X.dim(1);
  Tensor<T> out({rows, c});
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = X(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, X(i, j));
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) z += std::exp(X(i, j) - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = X(i, j) - lse;
  }
  return t.push(std::move(out), {a}, [a, rows, c](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.val(self);  // log-probabilities
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < rows; ++i) {
      T gsum = T(0);
      for (std::size_t j = 0; j < c; ++j) gsum += g(i, j);
      for (std::size_t j = 0; j < c; ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
    }
  });
}

/// out[t] = X[t, idx[t]].
template <class T>
Var pick_rows(Tape<T>& t, Var a, std::vector<int> idx) {
  const auto& X = t.val(a);
  require(X.rank() == 2 && idx.size() == X.dim(0), "pick_rows: one index per row required");
  for (int j : idx)
    require(j >= 0 && static_cast<std::size_t>(j) < X.dim(1),
            "pick_rows: index " + std::to_string(j) + " out of range [0," +
                std::to_string(X.dim(1)) + ")");
  Tensor<T> out({X.dim(0)});
  for (std::size_t i = 0; i < X.dim(0); ++i) out[i] = X(i, static_cast<std::size_t>(idx[i]));
  return t.push(std::move(out), {a}, [a, idx = std::move(idx)](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.numel(); ++i) ga(i, static_cast<std::size_t>(idx[i])) += g[i];
  });
}

/// s * v for scalar s (shape [1]) and any v.
template <class T>
Var scale_by(Tape<T>& t, Var s, Var v) {
  const auto& sv = t.val(s);
  require(sv.numel() == 1, "scale_by: scale must be scalar");
  const auto& x = t.val(v);
  Tensor<T> out(x.shape());
  const T sc = sv[0];
  kernels::apply_unary(x.data(), out.data(), out.numel(), [sc](T u) { return sc * u; });
  return t.push(std::move(out), {s, v}, [s, v](Tape<T>& tp, Var self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.val(v);
    if (tp.needs_grad(s)) {
      T acc = T(0);
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * x[i];
      tp.grad(s)[0] += acc;
    }
    if (tp.needs_grad(v)) {
      const T sc = tp.val(s)[0];
      auto& gv = tp.grad(v);
      for (std::size_t i = 0; i < g.numel(); ++i) gv[i] += sc * g[i];
    }
  });
}

}  // namespace rt

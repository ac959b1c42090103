#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "motif/core/rng.hpp"
#include "motif/core/tape.hpp"

namespace motif {

namespace detail {

template <class T>
bool rg2(Var<T> a, Var<T> b) {
  return a.tape->requires_grad(a.id) || b.tape->requires_grad(b.id);
}

template <class T>
bool rg1(Var<T> a) {
  return a.tape->requires_grad(a.id);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() += b.val().arr();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai)) tp.grad(ai).arr() += g.arr();
      if (tp.requires_grad(bi)) tp.grad(bi).arr() += g.arr();
    });
  return out;
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() -= b.val().arr();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai)) tp.grad(ai).arr() += g.arr();
      if (tp.requires_grad(bi)) tp.grad(bi).arr() -= g.arr();
    });
  return out;
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() *= b.val().arr();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai)) tp.grad(ai).arr() += g.arr() * tp.value(bi).arr();
      if (tp.requires_grad(bi)) tp.grad(bi).arr() += g.arr() * tp.value(ai).arr();
    });
  return out;
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() *= c;
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, c] {
      tp.grad(ai).arr() += tp.grad(oi).arr() * c;
    });
  return out;
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() += c;
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id,
                    [&tp, ai = a.id, oi = out.id] { tp.grad(ai).arr() += tp.grad(oi).arr(); });
  return out;
}

/// a viewed as (R,C) plus a length-C row vector (bias add).
template <class T>
Var<T> add_rowvec(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const long C = a.val().cols();
  assert(b.val().numel() == C);
  Tensor<T> v = a.val();
  {
    auto m = v.mat();
    auto bv = b.val();
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bv.data(), C);
    m.rowwise() += bm;
  }
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai)) tp.grad(ai).arr() += g.arr();
      if (tp.requires_grad(bi)) {
        auto gm = g.mat();
        Tensor<T>& gb = tp.grad(bi);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(gb.data(), gb.numel());
        bm += gm.colwise().sum();
      }
    });
  return out;
}

/// x: (B,Tk,C), v: (B,C); adds v[b] to every token of sample b.
template <class T>
Var<T> add_tokenvec(Var<T> x, Var<T> v) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  assert(v.val().dim(0) == B && v.val().dim(1) == C);
  Tensor<T> o = x.val();
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t)
      for (long c = 0; c < C; ++c) o[(b * Tk + t) * C + c] += v.val()[b * C + c];
  bool rg = detail::rg2(x, v);
  Var<T> out = tp.record(std::move(o), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, vi = v.id, oi = out.id, B, Tk, C] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(xi)) tp.grad(xi).arr() += g.arr();
      if (tp.requires_grad(vi)) {
        Tensor<T>& gv = tp.grad(vi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c) gv[b * C + c] += g[(b * Tk + t) * C + c];
      }
    });
  return out;
}

/// Elementwise product with a constant tensor (no gradient to the mask).
template <class T>
Var<T> mul_const(Var<T> a, Tensor<T> m) {
  assert(a.val().same_shape(m));
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() *= m.arr();
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, m = std::move(m)] {
      tp.grad(ai).arr() += tp.grad(oi).arr() * m.arr();
    });
  return out;
}

/// a: (R,C) minus per-row constants v: (R).
template <class T>
Var<T> sub_colvec_const(Var<T> a, const Tensor<T>& cv) {
  Tape<T>& tp = *a.tape;
  const long R = a.val().rows(), C = a.val().cols();
  assert(cv.numel() == R);
  Tensor<T> v = a.val();
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) v[r * C + c] -= cv[r];
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id,
                    [&tp, ai = a.id, oi = out.id] { tp.grad(ai).arr() += tp.grad(oi).arr(); });
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
Var<T> relu(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() = v.arr().max(T(0));
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id] {
      const Tensor<T>& y = tp.value(oi);
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      for (long i = 0; i < g.numel(); ++i)
        if (y[i] > T(0)) ga[i] += g[i];
    });
  return out;
}

/// Exact GELU: x * Phi(x) with the Gaussian CDF.
template <class T>
Var<T> gelu(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v(a.val().shape());
  const Tensor<T>& x = a.val();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (long i = 0; i < x.numel(); ++i) {
    double xi = static_cast<double>(x[i]);
    v[i] = static_cast<T>(xi * 0.5 * (1.0 + std::erf(xi * inv_sqrt2)));
  }
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id] {
      const Tensor<T>& x = tp.value(ai);
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (long i = 0; i < g.numel(); ++i) {
        double xi = static_cast<double>(x[i]);
        double phi = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
        ga[i] += g[i] * static_cast<T>(phi + xi * pdf);
      }
    });
  return out;
}

template <class T>
Var<T> exp_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() = v.arr().exp();
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id] {
      tp.grad(ai).arr() += tp.grad(oi).arr() * tp.value(oi).arr();
    });
  return out;
}

template <class T>
Var<T> log_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val();
  v.arr() = v.arr().log();
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id] {
      tp.grad(ai).arr() += tp.grad(oi).arr() / tp.value(ai).arr();
    });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// a: (..., K) x b: (K, N) -> (..., N).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const long K = a.val().cols(), R = a.val().rows();
  assert(b.val().ndim() == 2 && b.val().dim(0) == K);
  const long N = b.val().dim(1);
  Shape oshape = a.val().shape();
  oshape.back() = N;
  Tensor<T> v(oshape);
  v.mat2(R, N).noalias() = a.val().mat2(R, K) * b.val().mat();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id, R, K, N] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai))
        tp.grad(ai).mat2(R, K).noalias() += g.mat2(R, N) * tp.value(bi).mat().transpose();
      if (tp.requires_grad(bi))
        tp.grad(bi).mat().noalias() += tp.value(ai).mat2(R, K).transpose() * g.mat2(R, N);
    });
  return out;
}

/// a: (..., K) x b: (N, K) -> (..., N), i.e. a * b^T.
template <class T>
Var<T> matmul_tB(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const long K = a.val().cols(), R = a.val().rows();
  assert(b.val().ndim() == 2 && b.val().dim(1) == K);
  const long N = b.val().dim(0);
  Shape oshape = a.val().shape();
  oshape.back() = N;
  Tensor<T> v(oshape);
  v.mat2(R, N).noalias() = a.val().mat2(R, K) * b.val().mat().transpose();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id, R, K, N] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(ai))
        tp.grad(ai).mat2(R, K).noalias() += g.mat2(R, N) * tp.value(bi).mat();
      if (tp.requires_grad(bi))
        tp.grad(bi).mat().noalias() += g.mat2(R, N).transpose() * tp.value(ai).mat2(R, K);
    });
  return out;
}

namespace detail {
template <class T>
Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bmat(
    const Tensor<T>& t, long n, long r, long c) {
  return {t.data() + n * r * c, r, c};
}
template <class T>
Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bmat(Tensor<T>& t,
                                                                                   long n, long r,
                                                                                   long c) {
  return {t.data() + n * r * c, r, c};
}
}  // namespace detail

/// Batched matmul: (N,M,K) x (N,K,P) -> (N,M,P).
template <class T>
Var<T> bmm(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const long N = a.val().dim(0), M = a.val().dim(1), K = a.val().dim(2);
  assert(b.val().dim(0) == N && b.val().dim(1) == K);
  const long P = b.val().dim(2);
  Tensor<T> v({N, M, P});
  for (long n = 0; n < N; ++n)
    detail::bmat(v, n, M, P).noalias() =
        detail::bmat(a.val(), n, M, K) * detail::bmat(b.val(), n, K, P);
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id, N, M, K, P] {
      const Tensor<T>& g = tp.grad(oi);
      for (long n = 0; n < N; ++n) {
        auto gm = detail::bmat(g, n, M, P);
        if (tp.requires_grad(ai))
          detail::bmat(tp.grad(ai), n, M, K).noalias() +=
              gm * detail::bmat(tp.value(bi), n, K, P).transpose();
        if (tp.requires_grad(bi))
          detail::bmat(tp.grad(bi), n, K, P).noalias() +=
              detail::bmat(tp.value(ai), n, M, K).transpose() * gm;
      }
    });
  return out;
}

/// Batched matmul with transposed B: (N,M,K) x (N,P,K) -> (N,M,P).
template <class T>
Var<T> bmm_tB(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const long N = a.val().dim(0), M = a.val().dim(1), K = a.val().dim(2);
  assert(b.val().dim(0) == N && b.val().dim(2) == K);
  const long P = b.val().dim(1);
  Tensor<T> v({N, M, P});
  for (long n = 0; n < N; ++n)
    detail::bmat(v, n, M, P).noalias() =
        detail::bmat(a.val(), n, M, K) * detail::bmat(b.val(), n, P, K).transpose();
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id, N, M, K, P] {
      const Tensor<T>& g = tp.grad(oi);
      for (long n = 0; n < N; ++n) {
        auto gm = detail::bmat(g, n, M, P);
        if (tp.requires_grad(ai))
          detail::bmat(tp.grad(ai), n, M, K).noalias() += gm * detail::bmat(tp.value(bi), n, P, K);
        if (tp.requires_grad(bi))
          detail::bmat(tp.grad(bi), n, P, K).noalias() +=
              gm.transpose() * detail::bmat(tp.value(ai), n, M, K);
      }
    });
  return out;
}

/// (B,T,H,D) -> (B,H,T,D).
template <class T>
Var<T> perm0213(Var<T> x, long B, long Tk, long H, long D) {
  Tape<T>& tp = *x.tape;
  assert(x.val().numel() == B * Tk * H * D);
  Tensor<T> v({B, H, Tk, D});
  const Tensor<T>& in = x.val();
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t)
      for (long h = 0; h < H; ++h)
        std::copy_n(in.data() + ((b * Tk + t) * H + h) * D, D,
                    v.data() + ((b * H + h) * Tk + t) * D);
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, B, Tk, H, D] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long b = 0; b < B; ++b)
        for (long h = 0; h < H; ++h)
          for (long t = 0; t < Tk; ++t) {
            const T* src = g.data() + ((b * H + h) * Tk + t) * D;
            T* dst = gx.data() + ((b * Tk + t) * H + h) * D;
            for (long d = 0; d < D; ++d) dst[d] += src[d];
          }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

/// Softmax over the last dim. Optional additive mask of shape (Tm, C):
/// row r of the flattened input uses mask row (r mod Tm).
template <class T>
Var<T> softmax_lastdim(Var<T> a, const Tensor<T>* addmask = nullptr) {
  Tape<T>& tp = *a.tape;
  const long R = a.val().rows(), C = a.val().cols();
  Tensor<T> v = a.val();
  long Tm = addmask ? addmask->rows() : 0;
  for (long r = 0; r < R; ++r) {
    T* row = v.data() + r * C;
    if (addmask) {
      const T* mrow = addmask->data() + (r % Tm) * C;
      for (long c = 0; c < C; ++c) row[c] += mrow[c];
    }
    T mx = *std::max_element(row, row + C);
    T s = T(0);
    for (long c = 0; c < C; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    for (long c = 0; c < C; ++c) row[c] /= s;
  }
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, R, C] {
      const Tensor<T>& y = tp.value(oi);
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      for (long r = 0; r < R; ++r) {
        const T* yr = y.data() + r * C;
        const T* gr = g.data() + r * C;
        T dot = T(0);
        for (long c = 0; c < C; ++c) dot += yr[c] * gr[c];
        T* gar = ga.data() + r * C;
        for (long c = 0; c < C; ++c) gar[c] += yr[c] * (gr[c] - dot);
      }
    });
  return out;
}

namespace detail {
template <class T>
void layernorm_backward(Tape<T>& tp, int xi, int oi, const Tensor<T>& xhat, const T* gamma,
                        const std::vector<T>& inv_sigma, long R, long C, Tensor<T>* ggamma,
                        Tensor<T>* gbeta) {
  const Tensor<T>& g = tp.grad(oi);
  Tensor<T>& gx = tp.grad(xi);
  for (long r = 0; r < R; ++r) {
    const T* gr = g.data() + r * C;
    const T* xh = xhat.data() + r * C;
    T m1 = T(0), m2 = T(0);
    for (long c = 0; c < C; ++c) {
      T dxh = gamma ? gr[c] * gamma[c] : gr[c];
      m1 += dxh;
      m2 += dxh * xh[c];
    }
    m1 /= T(C);
    m2 /= T(C);
    T* gxr = gx.data() + r * C;
    for (long c = 0; c < C; ++c) {
      T dxh = gamma ? gr[c] * gamma[c] : gr[c];
      gxr[c] += inv_sigma[static_cast<size_t>(r)] * (dxh - m1 - xh[c] * m2);
    }
    if (ggamma)
      for (long c = 0; c < C; ++c) (*ggamma)[c] += gr[c] * xh[c];
    if (gbeta)
      for (long c = 0; c < C; ++c) (*gbeta)[c] += gr[c];
  }
}
}  // namespace detail

/// Layer normalization over the last dim with affine parameters.
template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  Tape<T>& tp = *x.tape;
  const long R = x.val().rows(), C = x.val().cols();
  assert(gamma.val().numel() == C && beta.val().numel() == C);
  Tensor<T> xhat(x.val().shape());
  Tensor<T> v(x.val().shape());
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
  for (long r = 0; r < R; ++r) {
    const T* xr = x.val().data() + r * C;
    T mu = T(0);
    for (long c = 0; c < C; ++c) mu += xr[c];
    mu /= T(C);
    T var = T(0);
    for (long c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= T(C);
    T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    T* xh = xhat.data() + r * C;
    T* vr = v.data() + r * C;
    for (long c = 0; c < C; ++c) {
      xh[c] = (xr[c] - mu) * is;
      vr[c] = gamma.val()[c] * xh[c] + beta.val()[c];
    }
  }
  bool rg = detail::rg1(x) || detail::rg1(gamma) || detail::rg1(beta);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, gi = gamma.id, bi = beta.id, oi = out.id,
                             xhat = std::move(xhat), inv_sigma, R, C] {
      Tensor<T>* gg = tp.requires_grad(gi) ? &tp.grad(gi) : nullptr;
      Tensor<T>* gb = tp.requires_grad(bi) ? &tp.grad(bi) : nullptr;
      detail::layernorm_backward(tp, xi, oi, xhat, tp.value(gi).data(), *inv_sigma, R, C, gg, gb);
    });
  return out;
}

/// Layer normalization without affine parameters (modulated externally).
template <class T>
Var<T> layernorm_plain(Var<T> x, T eps = T(1e-5)) {
  Tape<T>& tp = *x.tape;
  const long R = x.val().rows(), C = x.val().cols();
  Tensor<T> v(x.val().shape());
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
  for (long r = 0; r < R; ++r) {
    const T* xr = x.val().data() + r * C;
    T mu = T(0);
    for (long c = 0; c < C; ++c) mu += xr[c];
    mu /= T(C);
    T var = T(0);
    for (long c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= T(C);
    T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    T* vr = v.data() + r * C;
    for (long c = 0; c < C; ++c) vr[c] = (xr[c] - mu) * is;
  }
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, inv_sigma, R, C] {
      // xhat equals the stored output here.
      detail::layernorm_backward<T>(tp, xi, oi, tp.value(oi), nullptr, *inv_sigma, R, C, nullptr,
                                    nullptr);
    });
  return out;
}

/// Rows scaled to unit L2 norm. Rows with norm <= eps are scaled by 1/eps.
template <class T>
Var<T> l2norm_rows(Var<T> x, T eps = T(1e-12)) {
  Tape<T>& tp = *x.tape;
  const long R = x.val().rows(), C = x.val().cols();
  Tensor<T> v(x.val().shape());
  auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
  for (long r = 0; r < R; ++r) {
    const T* xr = x.val().data() + r * C;
    T n = T(0);
    for (long c = 0; c < C; ++c) n += xr[c] * xr[c];
    n = std::sqrt(n);
    (*norms)[static_cast<size_t>(r)] = n;
    T d = std::max(n, eps);
    T* vr = v.data() + r * C;
    for (long c = 0; c < C; ++c) vr[c] = xr[c] / d;
  }
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, norms, eps, R, C] {
      const Tensor<T>& y = tp.value(oi);
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long r = 0; r < R; ++r) {
        T n = (*norms)[static_cast<size_t>(r)];
        const T* gr = g.data() + r * C;
        T* gxr = gx.data() + r * C;
        if (n > eps) {
          const T* yr = y.data() + r * C;
          T dot = T(0);
          for (long c = 0; c < C; ++c) dot += gr[c] * yr[c];
          for (long c = 0; c < C; ++c) gxr[c] += (gr[c] - yr[c] * dot) / n;
        } else {
          for (long c = 0; c < C; ++c) gxr[c] += gr[c] / eps;
        }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tp = *a.tape;
  T s = T(0);
  for (long i = 0; i < a.numel(); ++i) s += a.val()[i];
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(Tensor<T>::scalar(s), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id] {
      tp.grad(ai).arr() += tp.grad(oi)[0];
    });
  return out;
}

template <class T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

/// (R,C) -> (R): sum over the last dim.
template <class T>
Var<T> rowsum(Var<T> a) {
  Tape<T>& tp = *a.tape;
  const long R = a.val().rows(), C = a.val().cols();
  Tensor<T> v({R});
  for (long r = 0; r < R; ++r) {
    T s = T(0);
    const T* ar = a.val().data() + r * C;
    for (long c = 0; c < C; ++c) s += ar[c];
    v[r] = s;
  }
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, R, C] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      for (long r = 0; r < R; ++r)
        for (long c = 0; c < C; ++c) ga[r * C + c] += g[r];
    });
  return out;
}

/// (B,Tk,C) -> (B,C): mean over tokens.
template <class T>
Var<T> mean_tokens(Var<T> x) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  Tensor<T> v({B, C});
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t)
      for (long c = 0; c < C; ++c) v[b * C + c] += x.val()[(b * Tk + t) * C + c] / T(Tk);
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, B, Tk, C] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long b = 0; b < B; ++b)
        for (long t = 0; t < Tk; ++t)
          for (long c = 0; c < C; ++c) gx[(b * Tk + t) * C + c] += g[b * C + c] / T(Tk);
    });
  return out;
}

/// Scalar sum(a * c) with a constant weight tensor.
template <class T>
Var<T> dot_const(Var<T> a, Tensor<T> c) {
  assert(a.val().same_shape(c));
  Tape<T>& tp = *a.tape;
  T s = T(0);
  for (long i = 0; i < a.numel(); ++i) s += a.val()[i] * c[i];
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(Tensor<T>::scalar(s), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, c = std::move(c)] {
      tp.grad(ai).arr() += tp.grad(oi)[0] * c.arr();
    });
  return out;
}

/// Mean squared error over all elements.
template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  assert(a.val().same_shape(b.val()));
  Tape<T>& tp = *a.tape;
  const long N = a.numel();
  T s = T(0);
  for (long i = 0; i < N; ++i) {
    T d = a.val()[i] - b.val()[i];
    s += d * d;
  }
  bool rg = detail::rg2(a, b);
  Var<T> out = tp.record(Tensor<T>::scalar(s / static_cast<T>(N)), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, bi = b.id, oi = out.id, N] {
      T c = tp.grad(oi)[0] * T(2) / static_cast<T>(N);
      const Tensor<T>& av = tp.value(ai);
      const Tensor<T>& bv = tp.value(bi);
      if (tp.requires_grad(ai)) {
        Tensor<T>& ga = tp.grad(ai);
        for (long i = 0; i < N; ++i) ga[i] += c * (av[i] - bv[i]);
      }
      if (tp.requires_grad(bi)) {
        Tensor<T>& gb = tp.grad(bi);
        for (long i = 0; i < N; ++i) gb[i] -= c * (av[i] - bv[i]);
      }
    });
  return out;
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, std::vector<long> labels) {
  Tape<T>& tp = *logits.tape;
  const long R = logits.val().rows(), C = logits.val().cols();
  assert(static_cast<long>(labels.size()) == R);
  auto probs = std::make_shared<Tensor<T>>(logits.val());
  T loss = T(0);
  for (long r = 0; r < R; ++r) {
    T* row = probs->data() + r * C;
    T mx = *std::max_element(row, row + C);
    T s = T(0);
    for (long c = 0; c < C; ++c) {
      row[c] = std::exp(row[c] - mx);
      s += row[c];
    }
    for (long c = 0; c < C; ++c) row[c] /= s;
    loss -= std::log(std::max(row[labels[static_cast<size_t>(r)]], T(1e-30)));
  }
  bool rg = detail::rg1(logits);
  Var<T> out = tp.record(Tensor<T>::scalar(loss / static_cast<T>(R)), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, li = logits.id, oi = out.id, probs,
                             labels = std::move(labels), R, C] {
      T c0 = tp.grad(oi)[0] / static_cast<T>(R);
      Tensor<T>& gl = tp.grad(li);
      for (long r = 0; r < R; ++r) {
        const T* pr = probs->data() + r * C;
        T* gr = gl.data() + r * C;
        for (long c = 0; c < C; ++c) gr[c] += c0 * pr[c];
        gr[labels[static_cast<size_t>(r)]] -= c0;
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tp = *a.tape;
  Tensor<T> v = a.val().reshaped(shape);
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id,
                    [&tp, ai = a.id, oi = out.id] { tp.grad(ai).arr() += tp.grad(oi).arr(); });
  return out;
}

/// Slice [start, start+len) of the last dim.
template <class T>
Var<T> slice_lastdim(Var<T> a, long start, long len) {
  Tape<T>& tp = *a.tape;
  const long R = a.val().rows(), C = a.val().cols();
  Shape oshape = a.val().shape();
  oshape.back() = len;
  Tensor<T> v(oshape);
  for (long r = 0; r < R; ++r)
    std::copy_n(a.val().data() + r * C + start, len, v.data() + r * len);
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, R, C, start, len] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      for (long r = 0; r < R; ++r)
        for (long c = 0; c < len; ++c) ga[r * C + start + c] += g[r * len + c];
    });
  return out;
}

/// Slice [start, start+len) tokens of a (B,Tk,C) sequence.
template <class T>
Var<T> slice_tokens(Var<T> x, long start, long len) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  Tensor<T> v({B, len, C});
  for (long b = 0; b < B; ++b)
    std::copy_n(x.val().data() + (b * Tk + start) * C, len * C, v.data() + b * len * C);
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, B, Tk, C, start, len] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long b = 0; b < B; ++b) {
        const T* src = g.data() + b * len * C;
        T* dst = gx.data() + (b * Tk + start) * C;
        for (long i = 0; i < len * C; ++i) dst[i] += src[i];
      }
    });
  return out;
}

/// Concatenate (B,Ti,C) sequences along the token axis.
template <class T>
Var<T> concat_tokens(const std::vector<Var<T>>& parts) {
  assert(!parts.empty());
  Tape<T>& tp = *parts[0].tape;
  const long B = parts[0].val().dim(0), C = parts[0].val().dim(2);
  long Ttot = 0;
  bool rg = false;
  for (auto& p : parts) {
    assert(p.val().dim(0) == B && p.val().dim(2) == C);
    Ttot += p.val().dim(1);
    rg = rg || detail::rg1(p);
  }
  Tensor<T> v({B, Ttot, C});
  long off = 0;
  for (auto& p : parts) {
    const long Ti = p.val().dim(1);
    for (long b = 0; b < B; ++b)
      std::copy_n(p.val().data() + b * Ti * C, Ti * C, v.data() + (b * Ttot + off) * C);
    off += Ti;
  }
  std::vector<int> ids;
  std::vector<long> lens;
  for (auto& p : parts) {
    ids.push_back(p.id);
    lens.push_back(p.val().dim(1));
  }
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ids = std::move(ids), lens = std::move(lens), oi = out.id, B, C,
                             Ttot] {
      const Tensor<T>& g = tp.grad(oi);
      long off = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        const long Ti = lens[k];
        if (tp.requires_grad(ids[k])) {
          Tensor<T>& gp = tp.grad(ids[k]);
          for (long b = 0; b < B; ++b) {
            const T* src = g.data() + (b * Ttot + off) * C;
            T* dst = gp.data() + b * Ti * C;
            for (long i = 0; i < Ti * C; ++i) dst[i] += src[i];
          }
        }
        off += Ti;
      }
    });
  return out;
}

/// Row gather from a table (embedding lookup); gradient scatter-adds.
template <class T>
Var<T> gather_rows(Var<T> table, std::vector<long> idx) {
  Tape<T>& tp = *table.tape;
  const long C = table.val().cols();
  const long n = static_cast<long>(idx.size());
  Tensor<T> v({n, C});
  for (long i = 0; i < n; ++i)
    std::copy_n(table.val().data() + idx[static_cast<size_t>(i)] * C, C, v.data() + i * C);
  bool rg = detail::rg1(table);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ti = table.id, oi = out.id, idx = std::move(idx), C] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gt = tp.grad(ti);
      for (size_t i = 0; i < idx.size(); ++i) {
        const T* src = g.data() + static_cast<long>(i) * C;
        T* dst = gt.data() + idx[i] * C;
        for (long c = 0; c < C; ++c) dst[c] += src[c];
      }
    });
  return out;
}

/// Inverted dropout; identity when not training.
template <class T>
Var<T> dropout(Var<T> a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  Tape<T>& tp = *a.tape;
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(a.numel()));
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> v = a.val();
  for (long i = 0; i < v.numel(); ++i) {
    bool drop = rng.uniform() < p;
    (*mask)[static_cast<size_t>(i)] = drop ? 0 : 1;
    v[i] = drop ? T(0) : v[i] * keep;
  }
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, mask, keep] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& ga = tp.grad(ai);
      for (long i = 0; i < g.numel(); ++i)
        if ((*mask)[static_cast<size_t>(i)]) ga[i] += g[i] * keep;
    });
  return out;
}

/// Identity forward; backward multiplies the gradient by -lambda.
template <class T>
Var<T> grad_reverse(Var<T> a, T lambda) {
  Tape<T>& tp = *a.tape;
  bool rg = detail::rg1(a);
  Var<T> out = tp.record(a.val(), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, ai = a.id, oi = out.id, lambda] {
      tp.grad(ai).arr() -= lambda * tp.grad(oi).arr();
    });
  return out;
}

/// Stops gradient flow.
template <class T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.val());
}

// ---------------------------------------------------------------------------
// Temporal ops (token axis = time)
// ---------------------------------------------------------------------------

/// 1-D convolution over the token axis. x: (B,Tin,Cin), w: (K*Cin,Cout),
/// b: (Cout). Tout = (Tin + 2*pad - K)/stride + 1.
template <class T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias, long K, long stride, long pad) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tin = x.val().dim(1), Cin = x.val().dim(2);
  const long Cout = w.val().dim(1);
  assert(w.val().dim(0) == K * Cin);
  const long Tout = (Tin + 2 * pad - K) / stride + 1;
  auto col = std::make_shared<Tensor<T>>(Shape{B * Tout, K * Cin});
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tout; ++t) {
      T* dst = col->data() + (b * Tout + t) * K * Cin;
      for (long k = 0; k < K; ++k) {
        long src_t = t * stride + k - pad;
        if (src_t >= 0 && src_t < Tin)
          std::copy_n(x.val().data() + (b * Tin + src_t) * Cin, Cin, dst + k * Cin);
        else
          std::fill_n(dst + k * Cin, Cin, T(0));
      }
    }
  Tensor<T> v({B, Tout, Cout});
  v.mat2(B * Tout, Cout).noalias() = col->mat() * w.val().mat();
  {
    auto m = v.mat2(B * Tout, Cout);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias.val().data(), Cout);
    m.rowwise() += bm;
  }
  bool rg = detail::rg1(x) || detail::rg1(w) || detail::rg1(bias);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, wi = w.id, bi = bias.id, oi = out.id, col, B, Tin,
                             Cin, Tout, Cout, K, stride, pad] {
      const Tensor<T>& g = tp.grad(oi);
      auto gm = g.mat2(B * Tout, Cout);
      if (tp.requires_grad(wi)) tp.grad(wi).mat().noalias() += col->mat().transpose() * gm;
      if (tp.requires_grad(bi)) {
        Tensor<T>& gb = tp.grad(bi);
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(gb.data(), Cout);
        bm += gm.colwise().sum();
      }
      if (tp.requires_grad(xi)) {
        Tensor<T> dcol({B * Tout, K * Cin});
        dcol.mat().noalias() = gm * tp.value(wi).mat().transpose();
        Tensor<T>& gx = tp.grad(xi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tout; ++t) {
            const T* src = dcol.data() + (b * Tout + t) * K * Cin;
            for (long k = 0; k < K; ++k) {
              long dst_t = t * stride + k - pad;
              if (dst_t < 0 || dst_t >= Tin) continue;
              T* dst = gx.data() + (b * Tin + dst_t) * Cin;
              for (long c = 0; c < Cin; ++c) dst[c] += src[k * Cin + c];
            }
          }
      }
    });
  return out;
}

/// Nearest-neighbor temporal upsampling by 2: (B,Tk,C) -> (B,2Tk,C).
template <class T>
Var<T> upsample2_tokens(Var<T> x) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  Tensor<T> v({B, 2 * Tk, C});
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t) {
      const T* src = x.val().data() + (b * Tk + t) * C;
      std::copy_n(src, C, v.data() + (b * 2 * Tk + 2 * t) * C);
      std::copy_n(src, C, v.data() + (b * 2 * Tk + 2 * t + 1) * C);
    }
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, B, Tk, C] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long b = 0; b < B; ++b)
        for (long t = 0; t < Tk; ++t)
          for (long c = 0; c < C; ++c)
            gx[(b * Tk + t) * C + c] +=
                g[(b * 2 * Tk + 2 * t) * C + c] + g[(b * 2 * Tk + 2 * t + 1) * C + c];
    });
  return out;
}

/// Adaptive average pooling over tokens to exactly M bins.
template <class T>
Var<T> avgpool_tokens(Var<T> x, long M) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  if (Tk == M) return x;
  Tensor<T> v({B, M, C});
  auto bin_lo = [&](long m) { return m * Tk / M; };
  auto bin_hi = [&](long m) { return (m + 1) * Tk / M; };
  for (long b = 0; b < B; ++b)
    for (long m = 0; m < M; ++m) {
      long lo = bin_lo(m), hi = bin_hi(m);
      T* dst = v.data() + (b * M + m) * C;
      for (long t = lo; t < hi; ++t) {
        const T* src = x.val().data() + (b * Tk + t) * C;
        for (long c = 0; c < C; ++c) dst[c] += src[c] / static_cast<T>(hi - lo);
      }
    }
  bool rg = detail::rg1(x);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, oi = out.id, B, Tk, C, M] {
      const Tensor<T>& g = tp.grad(oi);
      Tensor<T>& gx = tp.grad(xi);
      for (long b = 0; b < B; ++b)
        for (long m = 0; m < M; ++m) {
          long lo = m * Tk / M, hi = (m + 1) * Tk / M;
          const T* src = g.data() + (b * M + m) * C;
          for (long t = lo; t < hi; ++t) {
            T* dst = gx.data() + (b * Tk + t) * C;
            for (long c = 0; c < C; ++c) dst[c] += src[c] / static_cast<T>(hi - lo);
          }
        }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Conditioning modulation (adaptive-norm style)
// ---------------------------------------------------------------------------

/// y[b,t,:] = x[b,t,:] * (1 + s[b,:]) + t[b,:].
template <class T>
Var<T> affine_mod(Var<T> x, Var<T> s, Var<T> sh) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  assert(s.val().dim(0) == B && s.val().dim(1) == C);
  Tensor<T> v(x.val().shape());
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t)
      for (long c = 0; c < C; ++c)
        v[(b * Tk + t) * C + c] =
            x.val()[(b * Tk + t) * C + c] * (T(1) + s.val()[b * C + c]) + sh.val()[b * C + c];
  bool rg = detail::rg1(x) || detail::rg1(s) || detail::rg1(sh);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, si = s.id, shi = sh.id, oi = out.id, B, Tk, C] {
      const Tensor<T>& g = tp.grad(oi);
      const Tensor<T>& xv = tp.value(xi);
      const Tensor<T>& sv = tp.value(si);
      if (tp.requires_grad(xi)) {
        Tensor<T>& gx = tp.grad(xi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c)
              gx[(b * Tk + t) * C + c] += g[(b * Tk + t) * C + c] * (T(1) + sv[b * C + c]);
      }
      if (tp.requires_grad(si)) {
        Tensor<T>& gs = tp.grad(si);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c)
              gs[b * C + c] += g[(b * Tk + t) * C + c] * xv[(b * Tk + t) * C + c];
      }
      if (tp.requires_grad(shi)) {
        Tensor<T>& gsh = tp.grad(shi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c) gsh[b * C + c] += g[(b * Tk + t) * C + c];
      }
    });
  return out;
}

/// y[b,t,:] = x[b,t,:] * gate[b,:].
template <class T>
Var<T> gate_tokens(Var<T> x, Var<T> gate) {
  Tape<T>& tp = *x.tape;
  const long B = x.val().dim(0), Tk = x.val().dim(1), C = x.val().dim(2);
  Tensor<T> v(x.val().shape());
  for (long b = 0; b < B; ++b)
    for (long t = 0; t < Tk; ++t)
      for (long c = 0; c < C; ++c)
        v[(b * Tk + t) * C + c] = x.val()[(b * Tk + t) * C + c] * gate.val()[b * C + c];
  bool rg = detail::rg1(x) || detail::rg1(gate);
  Var<T> out = tp.record(std::move(v), rg);
  if (rg)
    tp.set_backward(out.id, [&tp, xi = x.id, gi = gate.id, oi = out.id, B, Tk, C] {
      const Tensor<T>& g = tp.grad(oi);
      if (tp.requires_grad(xi)) {
        Tensor<T>& gx = tp.grad(xi);
        const Tensor<T>& gv = tp.value(gi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c)
              gx[(b * Tk + t) * C + c] += g[(b * Tk + t) * C + c] * gv[b * C + c];
      }
      if (tp.requires_grad(gi)) {
        Tensor<T>& gg = tp.grad(gi);
        const Tensor<T>& xv = tp.value(xi);
        for (long b = 0; b < B; ++b)
          for (long t = 0; t < Tk; ++t)
            for (long c = 0; c < C; ++c)
              gg[b * C + c] += g[(b * Tk + t) * C + c] * xv[(b * Tk + t) * C + c];
      }
    });
  return out;
}

}  // namespace motif

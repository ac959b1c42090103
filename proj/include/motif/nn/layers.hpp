#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "motif/nn/module.hpp"

namespace motif {

template <class T>
class Linear {
 public:
  Linear() = default;
  // Parameters live on the heap so registered pointers survive module moves.
  Linear(const std::string& name, long in, long out, Rng& rng, ParamGroup<T>& pg)
      : w_(std::make_unique<Parameter<T>>(name + ".w", init::xavier<T>({in, out}, in, out, rng))),
        b_(std::make_unique<Parameter<T>>(name + ".b", Tensor<T>::zeros({out}))) {
    pg.add(w_.get());
    pg.add(b_.get());
  }

  Var<T> operator()(Ctx<T>& ctx, Var<T> x) {
    return add_rowvec(matmul(x, ctx.tape->param(*w_)), ctx.tape->param(*b_));
  }

  long in_dim() const { return w_->value.dim(0); }
  long out_dim() const { return w_->value.dim(1); }

 private:
  std::unique_ptr<Parameter<T>> w_, b_;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, long dim, Rng&, ParamGroup<T>& pg)
      : gamma_(std::make_unique<Parameter<T>>(name + ".gamma", Tensor<T>::full({dim}, T(1)))),
        beta_(std::make_unique<Parameter<T>>(name + ".beta", Tensor<T>::zeros({dim}))) {
    pg.add(gamma_.get());
    pg.add(beta_.get());
  }

  Var<T> operator()(Ctx<T>& ctx, Var<T> x) {
    return layernorm(x, ctx.tape->param(*gamma_), ctx.tape->param(*beta_));
  }

 private:
  std::unique_ptr<Parameter<T>> gamma_, beta_;
};

template <class T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, long num, long dim, Rng& rng, ParamGroup<T>& pg)
      : table_(std::make_unique<Parameter<T>>(name + ".table", init::normal<T>({num, dim}, 0.02, rng))) {
    pg.add(table_.get());
  }

  Var<T> operator()(Ctx<T>& ctx, const std::vector<long>& ids) {
    return gather_rows(ctx.tape->param(*table_), ids);
  }

  long vocab() const { return table_->value.dim(0); }
  long dim() const { return table_->value.dim(1); }

 private:
  std::unique_ptr<Parameter<T>> table_;
};

/// Multi-head attention. Self-attention when kv == q source; cross-attention
/// otherwise. An optional additive mask (Tq,Tkv) restricts the receptive
/// field (0 = allowed, -inf = blocked).
template <class T>
class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(const std::string& name, long dim, long heads, double dropout_p, Rng& rng,
                     ParamGroup<T>& pg)
      : dim_(dim),
        heads_(heads),
        dropout_p_(dropout_p),
        q_(name + ".q", dim, dim, rng, pg),
        k_(name + ".k", dim, dim, rng, pg),
        v_(name + ".v", dim, dim, rng, pg),
        o_(name + ".o", dim, dim, rng, pg) {}

  Var<T> operator()(Ctx<T>& ctx, Var<T> xq, Var<T> xkv, const Tensor<T>* mask = nullptr) {
    const long B = xq.val().dim(0), Tq = xq.val().dim(1);
    const long Tkv = xkv.val().dim(1);
    const long hd = dim_ / heads_;
    Var<T> q = perm0213(q_(ctx, xq), B, Tq, heads_, hd);       // (B,H,Tq,hd)
    Var<T> k = perm0213(k_(ctx, xkv), B, Tkv, heads_, hd);     // (B,H,Tkv,hd)
    Var<T> v = perm0213(v_(ctx, xkv), B, Tkv, heads_, hd);
    q = reshape(q, {B * heads_, Tq, hd});
    k = reshape(k, {B * heads_, Tkv, hd});
    v = reshape(v, {B * heads_, Tkv, hd});
    Var<T> scores = scale(bmm_tB(q, k), static_cast<T>(1.0 / std::sqrt(double(hd))));
    Var<T> att = softmax_lastdim(scores, mask);
    att = dropout(att, dropout_p_, *ctx.rng, ctx.training);
    Var<T> ctxv = bmm(att, v);                                  // (B*H,Tq,hd)
    ctxv = perm0213(reshape(ctxv, {B, heads_, Tq, hd}), B, heads_, Tq, hd);  // undo: see note
    // perm0213 on (B,H,Tq,hd) swaps axes 1 and 2, giving (B,Tq,H,hd).
    ctxv = reshape(ctxv, {B, Tq, dim_});
    return o_(ctx, ctxv);
  }

  Var<T> self(Ctx<T>& ctx, Var<T> x, const Tensor<T>* mask = nullptr) {
    return (*this)(ctx, x, x, mask);
  }

 private:
  long dim_ = 0, heads_ = 0;
  double dropout_p_ = 0.0;
  Linear<T> q_, k_, v_, o_;
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
template <class T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, long dim, long heads, long ffn_dim, double dropout_p,
                   Rng& rng, ParamGroup<T>& pg)
      : dropout_p_(dropout_p),
        ln1_(name + ".ln1", dim, rng, pg),
        ln2_(name + ".ln2", dim, rng, pg),
        attn_(name + ".attn", dim, heads, dropout_p, rng, pg),
        ff1_(name + ".ff1", dim, ffn_dim, rng, pg),
        ff2_(name + ".ff2", ffn_dim, dim, rng, pg) {}

  Var<T> operator()(Ctx<T>& ctx, Var<T> x, const Tensor<T>* mask = nullptr) {
    Var<T> h = attn_.self(ctx, ln1_(ctx, x), mask);
    x = add(x, dropout(h, dropout_p_, *ctx.rng, ctx.training));
    Var<T> f = ff2_(ctx, gelu(ff1_(ctx, ln2_(ctx, x))));
    return add(x, dropout(f, dropout_p_, *ctx.rng, ctx.training));
  }

 private:
  double dropout_p_ = 0.0;
  LayerNorm<T> ln1_, ln2_;
  MultiheadAttention<T> attn_;
  Linear<T> ff1_, ff2_;
};

/// Additive attention mask allowing |t - u| <= k (symmetric local window).
template <class T>
Tensor<T> local_attention_mask(long Tk, long k) {
  Tensor<T> m({Tk, Tk});
  const T blocked = static_cast<T>(-1e9);
  for (long t = 0; t < Tk; ++t)
    for (long u = 0; u < Tk; ++u) m[t * Tk + u] = (std::labs(t - u) <= k) ? T(0) : blocked;
  return m;
}

/// Boolean view of the local mask, for contract checks.
inline std::vector<uint8_t> local_attention_allowed(long Tk, long k) {
  std::vector<uint8_t> m(static_cast<size_t>(Tk * Tk));
  for (long t = 0; t < Tk; ++t)
    for (long u = 0; u < Tk; ++u) m[static_cast<size_t>(t * Tk + u)] = std::labs(t - u) <= k;
  return m;
}

/// Fixed sinusoidal encoding of a scalar position in [0,1] at geometrically
/// spaced frequencies: [sin(w_i p), cos(w_i p)], w_i = base^(i/(dim/2)) * pi/2,
/// so the lowest frequency still separates p = 0 from p = 1.
template <class T>
Tensor<T> sinusoid_encode(double p, long dim, double max_freq = 64.0) {
  Tensor<T> out({dim});
  const long half = dim / 2;
  for (long i = 0; i < half; ++i) {
    double w = std::pow(max_freq, static_cast<double>(i) / static_cast<double>(half)) * M_PI / 2;
    out[i] = static_cast<T>(std::sin(w * p));
    out[half + i] = static_cast<T>(std::cos(w * p));
  }
  if (dim % 2 == 1) out[dim - 1] = T(1);
  return out;
}

}  // namespace motif

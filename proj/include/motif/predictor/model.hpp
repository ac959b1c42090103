#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/nn/layers.hpp"

namespace motif {

/// Stage II sizes: a latent cross-attention resampler that maps fused
/// observation/instruction features to M continuous motif tokens of dim d_e.
struct PredictorConfig {
  long M = 16;        // latent queries; must equal the Stage I token count
  long d_e = 256;     // output token dim; must equal the Stage I token dim
  long dim = 512;     // resampler width
  long depth = 6;
  long heads = 8;
  long dim_head = 64;
  long obs_dim = 24;  // corpus observation schema
  long obs_tokens = 4;
  long vocab = 4;     // instruction token ids
  double dropout = 0.1;
  long d_ff = 0;      // 0 -> 2 * dim

  long ffn_dim() const { return d_ff > 0 ? d_ff : 2 * dim; }

  void validate() const {
    if (M < 1 || d_e < 1 || dim < 1 || depth < 1 || obs_tokens < 1 || vocab < 1)
      throw std::invalid_argument("counts must be positive");
    if (dim != heads * dim_head) throw std::invalid_argument("dim must equal heads * dim_head");
    if (obs_dim < 1) throw std::invalid_argument("obs_dim must be positive");
  }
};

/// Fused conditioning sequence: observation tokens followed by the
/// instruction token, with a source tag per position.
template <class T>
struct FusedFeatures {
  Var<T> tokens;                    // (B, S, dim)
  std::vector<std::string> source;  // per-position tag, length S
};

/// One resampler block: latent queries cross-attend to the fused features,
/// then pass through a feed-forward layer (pre-norm, residual).
template <class T>
class ResamplerBlock {
 public:
  ResamplerBlock() = default;
  ResamplerBlock(const std::string& name, long dim, long heads, long ffn_dim, double dropout_p,
                 Rng& rng, ParamGroup<T>& pg)
      : dropout_p_(dropout_p),
        ln_q_(name + ".lnq", dim, rng, pg),
        ln_kv_(name + ".lnkv", dim, rng, pg),
        ln_ff_(name + ".lnff", dim, rng, pg),
        attn_(name + ".xattn", dim, heads, dropout_p, rng, pg),
        ff1_(name + ".ff1", dim, ffn_dim, rng, pg),
        ff2_(name + ".ff2", ffn_dim, dim, rng, pg) {}

  Var<T> operator()(Ctx<T>& ctx, Var<T> q, Var<T> kv) {
    Var<T> h = attn_(ctx, ln_q_(ctx, q), ln_kv_(ctx, kv));
    q = add(q, dropout(h, dropout_p_, *ctx.rng, ctx.training));
    Var<T> f = ff2_(ctx, gelu(ff1_(ctx, ln_ff_(ctx, q))));
    return add(q, dropout(f, dropout_p_, *ctx.rng, ctx.training));
  }

 private:
  double dropout_p_ = 0.0;
  LayerNorm<T> ln_q_, ln_kv_, ln_ff_;
  MultiheadAttention<T> attn_;
  Linear<T> ff1_, ff2_;
};

/// Stage II model: fuses an observation vector and an instruction id into a
/// short feature sequence, then resamples it into M motif tokens through
/// learned latent queries.
template <class T>
class Stage2Model {
 public:
  Stage2Model(PredictorConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(Rng::mix(seed, 0x57A6E2ULL));
    blocks_.reserve(static_cast<size_t>(cfg_.depth));
    obs1_ = Linear<T>("pred.obs1", cfg_.obs_dim, cfg_.dim, rng, params_);
    obs2_ = Linear<T>("pred.obs2", cfg_.dim, cfg_.obs_tokens * cfg_.dim, rng, params_);
    instr_ = Embedding<T>("pred.instr", cfg_.vocab, cfg_.dim, rng, params_);
    latents_ = std::make_unique<Parameter<T>>("pred.latents",
                                              init::normal<T>({cfg_.M, cfg_.dim}, 0.02, rng));
    params_.add(latents_.get());
    for (long i = 0; i < cfg_.depth; ++i)
      blocks_.emplace_back("pred.blk" + std::to_string(i), cfg_.dim, cfg_.heads, cfg_.ffn_dim(),
                           cfg_.dropout, rng, params_);
    out_ln_ = LayerNorm<T>("pred.out.ln", cfg_.dim, rng, params_);
    out_ = Linear<T>("pred.out", cfg_.dim, cfg_.d_e, rng, params_);
  }

  const PredictorConfig& config() const { return cfg_; }
  ParamGroup<T>& params() { return params_; }

  /// obs: (B, obs_dim) scene features; instruction: B token ids.
  FusedFeatures<T> fuse(Ctx<T>& ctx, const Tensor<T>& obs, const std::vector<long>& instruction) {
    if (obs.ndim() != 2 || obs.dim(1) != cfg_.obs_dim)
      throw std::invalid_argument("observation features must be (B," +
                                  std::to_string(cfg_.obs_dim) + "), got " +
                                  shape_str(obs.shape()));
    const long B = obs.dim(0);
    if (static_cast<long>(instruction.size()) != B)
      throw std::invalid_argument("one instruction id per observation row");
    for (long id : instruction)
      if (id < 0 || id >= cfg_.vocab) throw std::domain_error("instruction id outside vocabulary");
    Var<T> o = obs1_(ctx, ctx.tape->constant(obs));
    o = reshape(obs2_(ctx, gelu(o)), {B, cfg_.obs_tokens, cfg_.dim});
    Var<T> l = reshape(instr_(ctx, instruction), {B, 1, cfg_.dim});
    FusedFeatures<T> out;
    out.tokens = concat_tokens(std::vector<Var<T>>{o, l});
    out.source.assign(static_cast<size_t>(cfg_.obs_tokens), "observation");
    out.source.push_back("instruction");
    return out;
  }

  /// Fused features -> (B, M, d_e) continuous motif tokens.
  Var<T> predict(Ctx<T>& ctx, const FusedFeatures<T>& features) {
    const long B = features.tokens.val().dim(0);
    std::vector<long> idx(static_cast<size_t>(B * cfg_.M));
    for (long b = 0; b < B; ++b)
      for (long m = 0; m < cfg_.M; ++m) idx[static_cast<size_t>(b * cfg_.M + m)] = m;
    Var<T> q = reshape(gather_rows(ctx.tape->param(*latents_), idx), {B, cfg_.M, cfg_.dim});
    for (auto& blk : blocks_) q = blk(ctx, q, features.tokens);
    return out_(ctx, out_ln_(ctx, q));
  }

  Var<T> forward(Ctx<T>& ctx, const Tensor<T>& obs, const std::vector<long>& instruction) {
    FusedFeatures<T> f = fuse(ctx, obs, instruction);
    return predict(ctx, f);
  }

 private:
  PredictorConfig cfg_;
  ParamGroup<T> params_;
  Linear<T> obs1_, obs2_;
  Embedding<T> instr_;
  std::unique_ptr<Parameter<T>> latents_;
  std::vector<ResamplerBlock<T>> blocks_;
  LayerNorm<T> out_ln_;
  Linear<T> out_;
};

/// Regression of predicted motif tokens onto stop-gradient targets:
/// the element-wise mean of the squared residual, i.e. (1/M) of each token's
/// per-element mean squared error, averaged over the batch. No gradient
/// reaches whatever produced the target.
template <class T>
Var<T> loss_predictor(Var<T> pred, Var<T> target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("prediction/target shape mismatch: " + shape_str(pred.shape()) +
                                " vs " + shape_str(target.shape()));
  return mse(pred, detach(target));
}

}  // namespace motif

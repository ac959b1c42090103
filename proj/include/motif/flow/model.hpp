#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "motif/flow/flow.hpp"
#include "motif/nn/layers.hpp"

namespace motif {

/// Stage III sizes: an adaptive-norm transformer that predicts the velocity
/// field of a flow from noise to expert action chunks, conditioned on flow
/// time, scene context, and retrieved motif tokens.
struct PolicyConfig {
  long H_a = 16;       // action horizon
  long hidden = 512;
  long layers = 16;
  long heads = 8;
  double dropout = 0.2;
  double alpha = 1.5;  // flow-time Beta shape
  double beta = 1.0;
  double s = 0.999;    // flow-time scale
  long inference_steps = 4;
  long time_buckets = 1000;
  long M = 16;         // motif tokens (when used)
  long d_e = 256;      // motif token dim
  long obs_dim = 24;
  long ctx_tokens = 4;
  long vocab = 4;
  bool use_motif = true;
  long d_ff = 0;       // 0 -> 2 * hidden

  long ffn_dim() const { return d_ff > 0 ? d_ff : 2 * hidden; }

  void validate() const {
    if (inference_steps < 1) throw std::invalid_argument("inference steps must be >= 1");
    if (time_buckets < 1) throw std::invalid_argument("time bucket count must be >= 1");
    if (s <= 0 || s > 1) throw std::invalid_argument("time scale must be in (0,1]");
    if (hidden % heads != 0) throw std::invalid_argument("hidden must divide into heads");
    if (H_a < 1 || layers < 1 || M < 1 || d_e < 1 || ctx_tokens < 1 || vocab < 1)
      throw std::invalid_argument("counts must be positive");
  }
};

/// Token layout of the transformer input sequence: one state token, then the
/// motif tokens (if enabled), then the action tokens.
struct QinLayout {
  long state_tokens = 1;
  long motif_tokens = 0;
  long action_tokens = 0;
  long total() const { return state_tokens + motif_tokens + action_tokens; }
};

/// One adaptive-norm block: self-attention over the input tokens, cross
/// attention to the context, and a feed-forward layer; every sub-layer is
/// wrapped in a parameter-free norm whose scale/shift/gate come from the
/// flow-time embedding.
template <class T>
class AdaBlock {
 public:
  AdaBlock() = default;
  AdaBlock(const std::string& name, long dim, long heads, long ffn_dim, double dropout_p,
           Rng& rng, ParamGroup<T>& pg)
      : dim_(dim),
        dropout_p_(dropout_p),
        mod_(name + ".mod", dim, 9 * dim, rng, pg),
        attn_(name + ".attn", dim, heads, dropout_p, rng, pg),
        xattn_(name + ".xattn", dim, heads, dropout_p, rng, pg),
        ff1_(name + ".ff1", dim, ffn_dim, rng, pg),
        ff2_(name + ".ff2", ffn_dim, dim, rng, pg) {}

  Var<T> operator()(Ctx<T>& ctx, Var<T> x, Var<T> c, Var<T> t_emb) {
    Var<T> mod = mod_(ctx, gelu(t_emb));  // (B, 9*dim): 3x (scale, shift, gate)
    auto part = [&](long k) { return slice_lastdim(mod, k * dim_, dim_); };
    Var<T> h = affine_mod(layernorm_plain(x), part(0), part(1));
    h = attn_.self(ctx, h);
    x = add(x, gate_tokens(dropout(h, dropout_p_, *ctx.rng, ctx.training), part(2)));
    h = affine_mod(layernorm_plain(x), part(3), part(4));
    h = xattn_(ctx, h, c);
    x = add(x, gate_tokens(dropout(h, dropout_p_, *ctx.rng, ctx.training), part(5)));
    h = affine_mod(layernorm_plain(x), part(6), part(7));
    h = ff2_(ctx, gelu(ff1_(ctx, h)));
    return add(x, gate_tokens(dropout(h, dropout_p_, *ctx.rng, ctx.training), part(8)));
  }

 private:
  long dim_ = 0;
  double dropout_p_ = 0.0;
  Linear<T> mod_;
  MultiheadAttention<T> attn_, xattn_;
  Linear<T> ff1_, ff2_;
};

/// Per-embodiment input/output adapters: state and noised-action encoders
/// plus the velocity decoder head. The motif encoder f_k is shared.
template <class T>
struct EmbodimentAdapter {
  std::string id;
  long action_dim = 0;
  Linear<T> f_s, f_a, head;
};

template <class T>
class Stage3Model {
 public:
  Stage3Model(PolicyConfig cfg, const std::vector<std::pair<std::string, long>>& embodiments,
              uint64_t seed)
      : cfg_(cfg) {
    cfg_.validate();
    if (embodiments.empty()) throw std::invalid_argument("at least one embodiment");
    Rng rng(Rng::mix(seed, 0x57A6E3ULL));
    const long H = cfg_.hidden;
    blocks_.reserve(static_cast<size_t>(cfg_.layers));
    adapters_.reserve(embodiments.size());
    ctx_obs1_ = Linear<T>("pol.ctx.obs1", cfg_.obs_dim, H, rng, params_);
    ctx_obs2_ = Linear<T>("pol.ctx.obs2", H, cfg_.ctx_tokens * H, rng, params_);
    ctx_instr_ = Embedding<T>("pol.ctx.instr", cfg_.vocab, H, rng, params_);
    time_ = Embedding<T>("pol.time", cfg_.time_buckets, H, rng, params_);
    f_k_ = Linear<T>("pol.fk", cfg_.d_e, H, rng, params_);
    pos_ = std::make_unique<Parameter<T>>(
        "pol.pos", init::normal<T>({1 + cfg_.M + cfg_.H_a, H}, 0.02, rng));
    params_.add(pos_.get());
    for (size_t e = 0; e < embodiments.size(); ++e) {
      EmbodimentAdapter<T> a;
      a.id = embodiments[e].first;
      a.action_dim = embodiments[e].second;
      std::string pre = "pol.e" + std::to_string(e);
      a.f_s = Linear<T>(pre + ".fs", EmbodimentSpec::state_dim, H, rng, params_);
      a.f_a = Linear<T>(pre + ".fa", a.action_dim, H, rng, params_);
      a.head = Linear<T>(pre + ".head", H, a.action_dim, rng, params_);
      adapters_.push_back(std::move(a));
    }
    for (long i = 0; i < cfg_.layers; ++i)
      blocks_.emplace_back("pol.blk" + std::to_string(i), H, cfg_.heads, cfg_.ffn_dim(),
                           cfg_.dropout, rng, params_);
  }

  const PolicyConfig& config() const { return cfg_; }
  ParamGroup<T>& params() { return params_; }
  long n_embodiments() const { return static_cast<long>(adapters_.size()); }
  long action_dim(long e) const { return adapter(e).action_dim; }
  const std::string& embodiment_id(long e) const { return adapter(e).id; }

  QinLayout qin_layout() const {
    QinLayout q;
    q.motif_tokens = cfg_.use_motif ? cfg_.M : 0;
    q.action_tokens = cfg_.H_a;
    return q;
  }

  /// Conditioning sequence from the scene observation and instruction id:
  /// (B, ctx_tokens + 1, hidden).
  Var<T> context(Ctx<T>& ctx, const Tensor<T>& obs, const std::vector<long>& instruction) {
    if (obs.ndim() != 2 || obs.dim(1) != cfg_.obs_dim)
      throw std::invalid_argument("context observations must be (B," +
                                  std::to_string(cfg_.obs_dim) + ")");
    const long B = obs.dim(0);
    if (static_cast<long>(instruction.size()) != B)
      throw std::invalid_argument("one instruction id per observation row");
    for (long id : instruction)
      if (id < 0 || id >= cfg_.vocab) throw std::domain_error("instruction id outside vocabulary");
    Var<T> o = ctx_obs1_(ctx, ctx.tape->constant(obs));
    o = reshape(ctx_obs2_(ctx, gelu(o)), {B, cfg_.ctx_tokens, cfg_.hidden});
    Var<T> l = reshape(ctx_instr_(ctx, instruction), {B, 1, cfg_.hidden});
    return concat_tokens(std::vector<Var<T>>{o, l});
  }

  /// Flow-time embedding from the bucketed time value: (B, hidden).
  Var<T> time_embedding(Ctx<T>& ctx, const std::vector<double>& taus) {
    std::vector<long> ids;
    ids.reserve(taus.size());
    for (double t : taus) ids.push_back(flow_time_bucket(t, cfg_.time_buckets));
    return time_(ctx, ids);
  }

  /// Predicted velocity at x_tau. s_t: (B,4); motifs: (B,M,d_e) or null when
  /// motif guidance is disabled; x_tau: (B,H_a,A); c: context tokens.
  Var<T> velocity(Ctx<T>& ctx, long emb_index, const Tensor<T>& s_t, const Tensor<T>* motifs,
                  Var<T> x_tau, Var<T> c, const std::vector<double>& taus) {
    const EmbodimentAdapter<T>& a = adapter(emb_index);
    const long B = x_tau.val().dim(0), H = cfg_.hidden;
    if (x_tau.val().dim(1) != cfg_.H_a || x_tau.val().dim(2) != a.action_dim)
      throw std::invalid_argument("noised chunk must be (B,H_a,action_dim)");
    if (s_t.dim(0) != B || s_t.dim(1) != EmbodimentSpec::state_dim)
      throw std::invalid_argument("state must be (B,4)");
    EmbodimentAdapter<T>& ad = adapters_[static_cast<size_t>(emb_index)];

    std::vector<Var<T>> parts;
    std::vector<long> pos_ids;
    Var<T> fs = ad.f_s(ctx, reshape(ctx.tape->constant(s_t), {B, 1, EmbodimentSpec::state_dim}));
    parts.push_back(fs);
    const bool with_motif = cfg_.use_motif && motifs != nullptr;
    if (cfg_.use_motif && motifs == nullptr)
      throw std::invalid_argument("motif guidance enabled but no motif tokens given");
    if (with_motif) {
      if (motifs->dim(0) != B || motifs->dim(1) != cfg_.M || motifs->dim(2) != cfg_.d_e)
        throw std::invalid_argument("motif tokens must be (B,M,d_e)");
      parts.push_back(f_k_(ctx, ctx.tape->constant(*motifs)));
    }
    parts.push_back(ad.f_a(ctx, x_tau));
    Var<T> q = concat_tokens(parts);

    for (long b = 0; b < B; ++b) {
      pos_ids.push_back(0);
      if (with_motif)
        for (long m = 0; m < cfg_.M; ++m) pos_ids.push_back(1 + m);
      for (long t = 0; t < cfg_.H_a; ++t) pos_ids.push_back(1 + cfg_.M + t);
    }
    const long S = q.val().dim(1);
    Var<T> pe = reshape(gather_rows(ctx.tape->param(*pos_), pos_ids), {B, S, H});
    q = add(q, pe);

    Var<T> t_emb = time_(ctx, bucket_ids(taus, B));
    for (auto& blk : blocks_) q = blk(ctx, q, c, t_emb);
    q = slice_tokens(layernorm_plain(q), S - cfg_.H_a, cfg_.H_a);
    return ad.head(ctx, q);
  }

 private:
  const EmbodimentAdapter<T>& adapter(long e) const {
    if (e < 0 || e >= static_cast<long>(adapters_.size()))
      throw std::invalid_argument("no adapters registered for embodiment index " +
                                  std::to_string(e));
    return adapters_[static_cast<size_t>(e)];
  }

  std::vector<long> bucket_ids(const std::vector<double>& taus, long B) const {
    if (static_cast<long>(taus.size()) != B)
      throw std::invalid_argument("one flow time per sample");
    std::vector<long> ids;
    ids.reserve(taus.size());
    for (double t : taus) ids.push_back(flow_time_bucket(t, cfg_.time_buckets));
    return ids;
  }

  PolicyConfig cfg_;
  ParamGroup<T> params_;
  Linear<T> ctx_obs1_, ctx_obs2_;
  Embedding<T> ctx_instr_;
  Embedding<T> time_;
  Linear<T> f_k_;
  std::unique_ptr<Parameter<T>> pos_;
  std::vector<EmbodimentAdapter<T>> adapters_;
  std::vector<AdaBlock<T>> blocks_;
};

}  // namespace motif

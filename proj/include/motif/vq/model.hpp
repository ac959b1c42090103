#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "motif/nn/layers.hpp"

namespace motif {

struct MotifEncoderConfig {
  long H_s = 32;
  long M = 16;
  long d_model = 256;
  long d_e = 256;
  long K = 128;
  long enc_layers = 4;
  long dec_layers = 4;
  long heads = 8;
  double dropout = 0.1;
  std::vector<long> conv_kernels{5, 3};
  std::vector<long> conv_strides{2, 1};
  long local_k = 8;
  double beta = 0.25;
  double lambda_nce = 0.1;
  double lambda_adv = 0.1;
  double sigma = 0.1;       // progress tolerance of the pair weight
  double gamma_temp = 0.1;  // InfoNCE temperature
  long d_ff = 0;            // 0 -> 2 * d_model

  long ffn_dim() const { return d_ff > 0 ? d_ff : 2 * d_model; }

  void validate() const {
    if (H_s < 1 || M < 1 || d_model < 1 || d_e < 1 || K < 1) throw std::invalid_argument("counts must be positive");
    if (conv_kernels.size() != conv_strides.size())
      throw std::invalid_argument("conv kernels/strides mismatch");
    long t = H_s;
    for (long s : conv_strides) t = (t + s - 1) / s;
    if (t < M) throw std::invalid_argument("conv strides downsample below M");
  }
};

/// Nearest code per row, ties broken by lowest index. z: (R, d), codes: (K, d).
template <class T>
std::vector<long> nearest_codes(const Tensor<T>& z, const Tensor<T>& codes) {
  const long K = codes.dim(0), d = codes.dim(1);
  if (K == 0) throw std::domain_error("empty codebook");
  const long R = z.numel() / d;
  // argmin_j -2 z.c_j + |c_j|^2; the |z|^2 term is constant per row
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> scores =
      z.mat2(R, d) * codes.mat().transpose() * T(-2);
  Eigen::Array<T, 1, Eigen::Dynamic> cn = codes.mat().rowwise().squaredNorm().transpose();
  std::vector<long> idx(static_cast<size_t>(R));
  for (long r = 0; r < R; ++r) {
    long best = 0;
    T bestv = scores(r, 0) + cn(0);
    for (long j = 1; j < K; ++j) {
      T v = scores(r, j) + cn(j);
      if (v < bestv) {
        bestv = v;
        best = j;
      }
    }
    idx[static_cast<size_t>(r)] = best;
  }
  return idx;
}

template <class T>
struct Quantized {
  Var<T> st;            // straight-through tokens: gradients pass to z_e
  Var<T> codes;         // codebook rows (gradient reaches the codebook)
  std::vector<long> indices;
};

/// Nearest-neighbor quantization with the straight-through estimator. The
/// returned st value equals the selected codes but backpropagates into z_e
/// as identity; codebook gradients come only from the loss terms that use
/// the codes output directly.
template <class T>
Quantized<T> quantize(Ctx<T>& ctx, Var<T> z_e, Parameter<T>& codebook) {
  const Shape shape = z_e.shape();
  Quantized<T> q;
  q.indices = nearest_codes(z_e.val(), codebook.value);
  q.codes = reshape(gather_rows(ctx.tape->param(codebook), q.indices), shape);
  q.st = add(z_e, detach(sub(q.codes, z_e)));
  return q;
}

/// Sinusoidal embedding of execution progress in [0,1].
template <class T>
Tensor<T> progress_pe(double p, long dim) {
  if (p < 0.0 || p > 1.0) throw std::domain_error("progress outside [0,1]");
  return sinusoid_encode<T>(p, dim);
}

template <class T>
class Conv1dLayer {
 public:
  Conv1dLayer() = default;
  Conv1dLayer(const std::string& name, long cin, long cout, long K, long stride, Rng& rng,
              ParamGroup<T>& pg)
      : K_(K), stride_(stride), pad_(K / 2),
        w_(std::make_unique<Parameter<T>>(name + ".w",
                                          init::xavier<T>({K * cin, cout}, K * cin, cout, rng))),
        b_(std::make_unique<Parameter<T>>(name + ".b", Tensor<T>::zeros({cout}))) {
    pg.add(w_.get());
    pg.add(b_.get());
  }

  Var<T> operator()(Ctx<T>& ctx, Var<T> x) {
    return conv1d(x, ctx.tape->param(*w_), ctx.tape->param(*b_), K_, stride_, pad_);
  }

 private:
  long K_ = 0, stride_ = 1, pad_ = 0;
  std::unique_ptr<Parameter<T>> w_, b_;
};

/// Stage I model: local-attention VQ autoencoder over canonical segments
/// plus a per-token embodiment discriminator.
template <class T>
class Stage1Model {
 public:
  Stage1Model(MotifEncoderConfig cfg, long n_embodiments, uint64_t seed)
      : cfg_(cfg), n_emb_(n_embodiments) {
    cfg_.validate();
    Rng rng(Rng::mix(seed, 0x57A6E1ULL));
    enc_blocks_.reserve(static_cast<size_t>(cfg_.enc_layers));
    dec_blocks_.reserve(static_cast<size_t>(cfg_.dec_layers));
    enc_convs_.reserve(cfg_.conv_kernels.size());
    const long dm = cfg_.d_model, ff = cfg_.ffn_dim();
    in_proj_ = Linear<T>("enc.in", 4, dm, rng, params_);
    for (long i = 0; i < cfg_.enc_layers; ++i)
      enc_blocks_.emplace_back("enc.blk" + std::to_string(i), dm, cfg_.heads, ff, cfg_.dropout,
                               rng, params_);
    for (size_t i = 0; i < cfg_.conv_kernels.size(); ++i) {
      long cout = i + 1 == cfg_.conv_kernels.size() ? cfg_.d_e : dm;
      enc_convs_.emplace_back("enc.conv" + std::to_string(i), i == 0 ? dm : dm, cout,
                              cfg_.conv_kernels[i], cfg_.conv_strides[i], rng, params_);
    }
    enc_ln_ = LayerNorm<T>("enc.ln", cfg_.d_e, rng, params_);
    codebook_ = std::make_unique<Parameter<T>>("codebook",
                                               init::normal<T>({cfg_.K, cfg_.d_e}, 1.0, rng));
    params_.add(codebook_.get());
    dec_in_ = Linear<T>("dec.in", cfg_.d_e, dm, rng, params_);
    dec_conv_ = Conv1dLayer<T>("dec.conv", dm, dm, 3, 1, rng, params_);
    for (long i = 0; i < cfg_.dec_layers; ++i)
      dec_blocks_.emplace_back("dec.blk" + std::to_string(i), dm, cfg_.heads, ff, cfg_.dropout,
                               rng, params_);
    dec_out_ = Linear<T>("dec.out", dm, 4, rng, params_);
    disc1_ = Linear<T>("disc.l1", cfg_.d_e, 128, rng, params_);
    disc2_ = Linear<T>("disc.l2", 128, n_emb_, rng, params_);
    mask_enc_ = local_attention_mask<T>(cfg_.H_s, cfg_.local_k);
    mask_dec_ = local_attention_mask<T>(cfg_.H_s, cfg_.local_k);
  }

  const MotifEncoderConfig& config() const { return cfg_; }
  long n_embodiments() const { return n_emb_; }
  ParamGroup<T>& params() { return params_; }
  Parameter<T>& codebook() { return *codebook_; }

  /// All parameters except the discriminator head (the "encoder side" of the
  /// adversarial game).
  std::vector<Parameter<T>*> encoder_side_params() {
    std::vector<Parameter<T>*> out;
    for (auto* p : params_.all())
      if (p->name.rfind("disc.", 0) != 0) out.push_back(p);
    return out;
  }

  /// x: (B, H_s, 4) canonical values; p: per-sample progress. -> (B, M, d_e).
  Var<T> encode(Ctx<T>& ctx, Var<T> x, const std::vector<double>& progress) {
    const long B = x.val().dim(0);
    Var<T> h = in_proj_(ctx, x);
    Tensor<T> pe({B, cfg_.d_model});
    for (long b = 0; b < B; ++b) {
      Tensor<T> row = progress_pe<T>(progress[static_cast<size_t>(b)], cfg_.d_model);
      std::copy_n(row.data(), cfg_.d_model, pe.data() + b * cfg_.d_model);
    }
    h = add_tokenvec(h, ctx.tape->constant(std::move(pe)));
    for (auto& blk : enc_blocks_) h = blk(ctx, h, &mask_enc_);
    for (size_t i = 0; i < enc_convs_.size(); ++i) {
      h = enc_convs_[i](ctx, h);
      if (i + 1 < enc_convs_.size()) h = gelu(h);
    }
    h = avgpool_tokens(h, cfg_.M);
    return enc_ln_(ctx, h);
  }

  /// zq: (B, M, d_e) -> reconstruction (B, H_s, 4).
  Var<T> decode(Ctx<T>& ctx, Var<T> zq) {
    Var<T> h = dec_in_(ctx, zq);
    while (h.val().dim(1) < cfg_.H_s) h = upsample2_tokens(h);
    h = avgpool_tokens(h, cfg_.H_s);
    h = gelu(dec_conv_(ctx, h));
    for (auto& blk : dec_blocks_) h = blk(ctx, h, &mask_dec_);
    return dec_out_(ctx, h);
  }

  /// Per-token embodiment logits: (B, M, d_e) -> (B*M, n_embodiments).
  Var<T> discriminate(Ctx<T>& ctx, Var<T> tokens) {
    const long B = tokens.val().dim(0), M = tokens.val().dim(1);
    Var<T> h = disc2_(ctx, gelu(disc1_(ctx, tokens)));
    return reshape(h, {B * M, n_emb_});
  }

 private:
  MotifEncoderConfig cfg_;
  long n_emb_ = 0;
  ParamGroup<T> params_;
  Linear<T> in_proj_;
  std::vector<TransformerBlock<T>> enc_blocks_;
  std::vector<Conv1dLayer<T>> enc_convs_;
  LayerNorm<T> enc_ln_;
  std::unique_ptr<Parameter<T>> codebook_;
  Linear<T> dec_in_;
  Conv1dLayer<T> dec_conv_;
  std::vector<TransformerBlock<T>> dec_blocks_;
  Linear<T> dec_out_;
  Linear<T> disc1_, disc2_;
  Tensor<T> mask_enc_, mask_dec_;
};

}  // namespace motif

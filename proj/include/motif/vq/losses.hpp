#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "motif/vq/model.hpp"

namespace motif {

/// Reconstruction + codebook + commitment terms, each a per-element mean:
/// |x - xhat|^2 + |sg(z_e) - z_q|^2 + beta |z_e - sg(z_q)|^2.
template <class T>
Var<T> loss_vq(Var<T> x, Var<T> xhat, Var<T> z_e, Var<T> z_q, T beta) {
  Var<T> rec = mse(xhat, x);
  Var<T> code = mse(detach(z_e), z_q);
  Var<T> commit = mse(z_e, detach(z_q));
  return add(add(rec, code), scale(commit, beta));
}

/// Progress-weighted positive-pair coefficient:
/// w = 1[l_i = l_j] * exp(-((p_i - p_j)/sigma)^2).
inline double progress_weight(long l_i, long l_j, double p_i, double p_j, double sigma) {
  if (sigma <= 0) throw std::domain_error("sigma must be > 0");
  if (l_i != l_j) return 0.0;
  double d = (p_i - p_j) / sigma;
  return std::exp(-d * d);
}

/// Full pairwise weight matrix, symmetric with zero diagonal.
template <class T>
Tensor<T> progress_weights(const std::vector<long>& labels, const std::vector<double>& progress,
                           double sigma) {
  const long B = static_cast<long>(labels.size());
  Tensor<T> w({B, B});
  for (long i = 0; i < B; ++i)
    for (long j = 0; j < B; ++j)
      w[i * B + j] = i == j ? T(0)
                            : static_cast<T>(progress_weight(
                                  labels[static_cast<size_t>(i)], labels[static_cast<size_t>(j)],
                                  progress[static_cast<size_t>(i)],
                                  progress[static_cast<size_t>(j)], sigma));
  return w;
}

/// Soft-weighted InfoNCE over L2-normalized segment embeddings e_hat (B, d):
/// -(1/|A|) sum_{i in A} log( sum_{j!=i} w_ij exp(e_i.e_j/g) /
///                            sum_{k!=i} exp(e_i.e_k/g) ),
/// with A the anchors having at least one positive; 0 when A is empty.
template <class T>
Var<T> loss_nce(Var<T> e_hat, const Tensor<T>& w, T gamma) {
  Tape<T>& tp = *e_hat.tape;
  const long B = e_hat.val().dim(0), d = e_hat.val().dim(1);
  for (long r = 0; r < B; ++r) {
    double n = 0;
    for (long c = 0; c < d; ++c) n += static_cast<double>(e_hat.val()[r * d + c]) *
                                      static_cast<double>(e_hat.val()[r * d + c]);
    if (std::abs(std::sqrt(n) - 1.0) > 1e-3)
      throw std::invalid_argument("loss_nce: embeddings must be L2-normalized");
  }
  Tensor<T> offdiag = Tensor<T>::full({B, B}, T(1));
  for (long i = 0; i < B; ++i) offdiag[i * B + i] = T(0);
  Tensor<T> anchors({B});
  long nA = 0;
  for (long i = 0; i < B; ++i) {
    T s = T(0);
    for (long j = 0; j < B; ++j) s += w[i * B + j];
    anchors[i] = s > T(0) ? T(1) : T(0);
    nA += anchors[i] > T(0) ? 1 : 0;
  }
  if (nA == 0) return tp.constant(Tensor<T>::scalar(T(0)));

  Var<T> expsim = exp_(scale(matmul_tB(e_hat, e_hat), T(1) / gamma));
  Var<T> den = rowsum(mul_const(expsim, offdiag));
  Var<T> num = rowsum(mul_const(expsim, w));
  // keep log finite on non-anchor rows; they are masked out below
  Tensor<T> pad({B});
  for (long i = 0; i < B; ++i) pad[i] = anchors[i] > T(0) ? T(0) : T(1);
  num = add(num, tp.constant(std::move(pad)));
  Var<T> logratio = sub(log_(num), log_(den));
  return scale(dot_const(logratio, anchors), T(-1) / static_cast<T>(nA));
}

/// Per-token embodiment classification loss. With reversal enabled the
/// discriminator receives the ordinary gradient while everything upstream of
/// the tokens receives -lambda times it.
template <class T>
Var<T> loss_adv(Ctx<T>& ctx, Stage1Model<T>& model, Var<T> tokens,
                const std::vector<long>& labels, T lambda, bool reverse) {
  const long B = tokens.val().dim(0), M = tokens.val().dim(1);
  for (long y : labels)
    if (y < 0 || y >= model.n_embodiments()) throw std::domain_error("unknown embodiment label");
  Var<T> in = reverse ? grad_reverse(tokens, lambda) : tokens;
  Var<T> logits = model.discriminate(ctx, in);
  std::vector<long> per_token(static_cast<size_t>(B * M));
  for (long b = 0; b < B; ++b)
    for (long m = 0; m < M; ++m)
      per_token[static_cast<size_t>(b * M + m)] = labels[static_cast<size_t>(b)];
  return cross_entropy_logits(logits, std::move(per_token));
}

/// Segment-level embedding for the alignment loss: L2-normalized mean of the
/// continuous encoder tokens.
template <class T>
Var<T> segment_embedding(Var<T> z_e) {
  return l2norm_rows(mean_tokens(z_e));
}

struct Stage1LossParts {
  double total = 0;  // L_vq + lambda_nce * L_nce + lambda_adv * L_adv
  double vq = 0;
  double nce = 0;
  double adv = 0;
};

template <class T>
struct Stage1Loss {
  Var<T> backward_loss;  // what to differentiate (adversarial term enters
                         // with unit weight through the reversal layer)
  Stage1LossParts parts;
};

struct SegmentBatchMeta {
  std::vector<double> progress;
  std::vector<long> instruction;
  std::vector<long> embodiment;
};

/// Combined Stage I objective on one batch of canonical segments.
/// Returns both the reported value L_vq + l_nce*L_nce + l_adv*L_adv and the
/// loss actually differentiated, in which the adversarial term appears with
/// coefficient one behind a gradient-reversal of scale lambda_adv so that
/// the discriminator descends L_adv while the encoder ascends it at rate
/// lambda_adv. Zero coefficients skip their terms entirely.
template <class T>
Stage1Loss<T> loss_stage1(Ctx<T>& ctx, Stage1Model<T>& model, Var<T> x,
                          const SegmentBatchMeta& meta) {
  const auto& cfg = model.config();
  Stage1Loss<T> out;
  Var<T> z_e = model.encode(ctx, x, meta.progress);
  Quantized<T> q = quantize(ctx, z_e, model.codebook());
  Var<T> xhat = model.decode(ctx, q.st);
  Var<T> lvq = loss_vq(x, xhat, z_e, q.codes, static_cast<T>(cfg.beta));
  out.parts.vq = static_cast<double>(lvq.item());
  Var<T> total = lvq;
  if (cfg.lambda_nce > 0) {
    Tensor<T> w = progress_weights<T>(meta.instruction, meta.progress, cfg.sigma);
    Var<T> lnce = loss_nce(segment_embedding(z_e), w, static_cast<T>(cfg.gamma_temp));
    out.parts.nce = static_cast<double>(lnce.item());
    total = add(total, scale(lnce, static_cast<T>(cfg.lambda_nce)));
  }
  if (cfg.lambda_adv > 0) {
    Var<T> ladv =
        loss_adv(ctx, model, z_e, meta.embodiment, static_cast<T>(cfg.lambda_adv), true);
    out.parts.adv = static_cast<double>(ladv.item());
    total = add(total, ladv);
  }
  out.backward_loss = total;
  out.parts.total =
      out.parts.vq + cfg.lambda_nce * out.parts.nce + cfg.lambda_adv * out.parts.adv;
  return out;
}

/// exp(entropy) of the empirical code usage distribution.
inline double codebook_perplexity(const std::vector<long>& histogram) {
  double total = 0;
  for (long c : histogram) total += static_cast<double>(c);
  if (total <= 0) throw std::domain_error("empty usage histogram");
  double h = 0;
  for (long c : histogram)
    if (c > 0) {
      double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
  return std::exp(h);
}

}  // namespace motif

#pragma once

// Gated cross-attention knowledge fusion:
//
//   g_l  = sigmoid(W_g . [h_mm_l ; mean_pool(M_K)] + b_g)        one scalar per position
//   h~_l = h_mm_l + g_l * CrossAttn(Q = h_mm, K = V = M_K)_l
//
// Keys and values are projected (standard multi-head form). The per-head
// attention weights are kept for evidence salience.

#include <array>
#include <cstdint>
#include <vector>

#include "xalign/attention.hpp"
#include "xalign/encoder.hpp"
#include "xalign/lora.hpp"
#include "xalign/numerics.hpp"

namespace xalign {

struct FusionParams {
  std::array<AdaptedMatrix, 4> cross_attn;  // q, k, v, o
  Matrix gate_weights;                      // 1 x 2d
  Matrix gate_bias;                         // 1 x 1
  std::size_t heads = 8;

  std::size_t dim() const { return cross_attn[0].base.rows(); }

  Projections effective() const {
    return {cross_attn[0].effective(), cross_attn[1].effective(), cross_attn[2].effective(),
            cross_attn[3].effective()};
  }

  bool operator==(const FusionParams&) const = default;
};

inline FusionParams zeros_like(const FusionParams& p) {
  FusionParams g;
  for (std::size_t i = 0; i < 4; ++i) g.cross_attn[i] = zeros_like(p.cross_attn[i]);
  g.gate_weights = zeros_like(p.gate_weights);
  g.gate_bias = zeros_like(p.gate_bias);
  g.heads = p.heads;
  return g;
}

struct FusionOutput {
  Matrix h_tilde;                  // L x d
  std::vector<Matrix> attention;   // per head, L x L_K
  Vector gate_values;              // L
};

struct FusionTrace {
  AttentionTrace attn;
  Matrix attn_out;
  Vector pooled_knowledge;
};

// With enabled == false the residual is skipped entirely (h~ := h_mm, gates
// reported as 0) while the attention weights are still computed.
inline FusionOutput fuse(const Matrix& h_mm, const Matrix& m_k, const FusionParams& p,
                         const Projections& w, FusionTrace* trace = nullptr, bool enabled = true) {
  const std::size_t d = p.dim();
  if (h_mm.rows() == 0 || m_k.rows() == 0) throw NumericError("fuse: empty input");
  if (h_mm.cols() != d || m_k.cols() != d) {
    throw NumericError("fuse: shape mismatch h_mm " + h_mm.shape() + ", M_K " + m_k.shape() +
                       ", d=" + std::to_string(d));
  }
  if (p.gate_weights.rows() != 1 || p.gate_weights.cols() != 2 * d || p.gate_bias.size() != 1) {
    throw NumericError("fuse: gate shape " + p.gate_weights.shape() + " does not match d=" +
                       std::to_string(d));
  }
  FusionTrace local;
  FusionTrace& t = trace ? *trace : local;
  t.attn_out = multi_head_attention(h_mm, m_k, w, p.heads, &t.attn);
  t.pooled_knowledge = mean_pool(m_k);

  FusionOutput out;
  out.attention = t.attn.probs;
  const std::size_t L = h_mm.rows();
  out.gate_values.assign(L, 0.0);
  if (!enabled) {
    out.h_tilde = h_mm;
    return out;
  }
  const auto wg = p.gate_weights.row(0);
  const double pooled_term = dot(wg.subspan(d), t.pooled_knowledge) + p.gate_bias(0, 0);
  out.h_tilde = h_mm;
  for (std::size_t l = 0; l < L; ++l) {
    const double g = sigmoid(dot(wg.first(d), h_mm.row(l)) + pooled_term);
    out.gate_values[l] = g;
    auto row = out.h_tilde.row(l);
    const auto a = t.attn_out.row(l);
    for (std::size_t c = 0; c < d; ++c) row[c] += g * a[c];
  }
  require_finite(out.h_tilde.values(), "fuse");
  return out;
}

inline FusionOutput fuse(const Matrix& h_mm, const Matrix& m_k, const FusionParams& p) {
  return fuse(h_mm, m_k, p, p.effective());
}

// Backward of fuse (enabled). Accumulates parameter gradients into grad (the
// cross-attention slots receive dL/dW' in .base; see lora_grads_from_base) and
// adds dL/dh_mm and dL/dM_K into d_h_mm / d_m_k.
inline void fuse_backward(const Matrix& h_mm, const Matrix& m_k, const FusionParams& p,
                          const Projections& w, const FusionOutput& out, const FusionTrace& trace,
                          const Matrix& d_h_tilde, FusionParams& grad, Matrix& d_h_mm,
                          Matrix& d_m_k) {
  const std::size_t d = p.dim();
  const std::size_t L = h_mm.rows();
  const auto wg = p.gate_weights.row(0);
  auto dwg = grad.gate_weights.row(0);

  Matrix d_attn_out(L, d);
  Vector d_pooled(d, 0.0);
  add_scaled(d_h_mm, d_h_tilde);
  for (std::size_t l = 0; l < L; ++l) {
    const double g = out.gate_values[l];
    const auto dh = d_h_tilde.row(l);
    const auto a = trace.attn_out.row(l);
    auto da = d_attn_out.row(l);
    double dg = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      da[c] = g * dh[c];
      dg += dh[c] * a[c];
    }
    const double dpre = dg * g * (1.0 - g);
    const auto hrow = h_mm.row(l);
    auto dhm = d_h_mm.row(l);
    for (std::size_t c = 0; c < d; ++c) {
      dwg[c] += dpre * hrow[c];
      dwg[d + c] += dpre * trace.pooled_knowledge[c];
      dhm[c] += dpre * wg[c];
      d_pooled[c] += dpre * wg[d + c];
    }
    grad.gate_bias(0, 0) += dpre;
  }
  AttentionGrads ag = multi_head_attention_backward(h_mm, m_k, w, p.heads, trace.attn, d_attn_out);
  accumulate_projections(ag.d_w, grad.cross_attn);
  add_scaled(d_h_mm, ag.d_queries);
  add_scaled(d_m_k, ag.d_keys_values);
  const double inv = 1.0 / static_cast<double>(m_k.rows());
  for (std::size_t r = 0; r < m_k.rows(); ++r) {
    auto row = d_m_k.row(r);
    for (std::size_t c = 0; c < d; ++c) row[c] += d_pooled[c] * inv;
  }
}

// Multiply-accumulate count of one fuse() call given effective projections:
//   query and output projections   2 * L * d^2
//   key and value projections      2 * L_K * d^2
//   scores and weighted values     2 * L * L_K * d   (summed over heads)
//   mean pool of M_K               L_K * d
//   gate dot products              2 * L * d
//   gated residual                 L * d
inline std::uint64_t fusion_cost_model(std::uint64_t L, std::uint64_t L_K, std::uint64_t d) {
  if (L == 0 || L_K == 0) throw NumericError("fusion_cost_model: L and L_K must be >= 1");
  return 2 * L * d * d + 2 * L_K * d * d + 2 * L * L_K * d + L_K * d + 2 * L * d + L * d;
}

}  // namespace xalign

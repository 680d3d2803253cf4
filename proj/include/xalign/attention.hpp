#pragma once

// Multi-head scaled dot-product attention over row-vector sequences, with a
// hand-derived backward pass. Shared by the encoder (self-attention) and the
// knowledge fusion (cross-attention).
//
//   Q = X_q Wq, K = X_kv Wk, V = X_kv Wv
//   P_h = softmax(Q_h K_h^T / sqrt(d/h))     per head h, columns split evenly
//   out = concat_h(P_h V_h) Wo

#include <array>
#include <cmath>
#include <vector>

#include "xalign/numerics.hpp"

namespace xalign {

// Effective (already adapted) projections, each d x d.
struct Projections {
  Matrix q, k, v, o;
};

struct AttentionTrace {
  Matrix q, k, v;
  Matrix context;              // L x d, concatenated head outputs
  std::vector<Matrix> probs;   // per head, L x L_kv
};

struct AttentionGrads {
  Matrix d_queries;
  Matrix d_keys_values;
  Projections d_w;
};

inline std::size_t head_dim(std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw NumericError("model dim " + std::to_string(dim) + " is not divisible by " +
                       std::to_string(heads) + " heads");
  }
  return dim / heads;
}

inline Matrix multi_head_attention(const Matrix& queries, const Matrix& keys_values,
                                   const Projections& w, std::size_t heads,
                                   AttentionTrace* trace = nullptr) {
  const std::size_t d = w.q.rows();
  if (queries.cols() != d || keys_values.cols() != d) {
    throw NumericError("attention: input width mismatch, queries " + queries.shape() +
                       ", keys/values " + keys_values.shape() + ", projections " + w.q.shape());
  }
  if (keys_values.rows() == 0) throw NumericError("attention: no keys");
  const std::size_t dh = head_dim(d, heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix q = matmul(queries, w.q);
  Matrix k = matmul(keys_values, w.k);
  Matrix v = matmul(keys_values, w.v);
  const std::size_t lq = queries.rows();
  const std::size_t lk = keys_values.rows();

  Matrix context(lq, d);
  std::vector<Matrix> probs;
  probs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix scores(lq, lk);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q(i, off + c) * k(j, off + c);
        scores(i, j) = acc * scale;
      }
    }
    Matrix p = softmax_rows(scores);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) context(i, off + c) += pij * v(j, off + c);
      }
    }
    probs.push_back(std::move(p));
  }
  Matrix out = matmul(context, w.o);
  if (trace) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->context = std::move(context);
    trace->probs = std::move(probs);
  }
  return out;
}

inline AttentionGrads multi_head_attention_backward(const Matrix& queries,
                                                    const Matrix& keys_values,
                                                    const Projections& w, std::size_t heads,
                                                    const AttentionTrace& trace,
                                                    const Matrix& d_out) {
  const std::size_t d = w.q.rows();
  const std::size_t dh = head_dim(d, heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t lq = queries.rows();
  const std::size_t lk = keys_values.rows();

  AttentionGrads g;
  g.d_w.o = matmul_tn(trace.context, d_out);
  const Matrix d_context = matmul_nt(d_out, w.o);

  Matrix dq(lq, d), dk(lk, d), dv(lk, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const Matrix& p = trace.probs[h];
    // dP = dC_h V_h^T ; dV_h = P^T dC_h
    Matrix dp(lq, lk);
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += d_context(i, off + c) * trace.v(j, off + c);
        dp(i, j) = acc;
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) dv(j, off + c) += pij * d_context(i, off + c);
      }
    }
    // Softmax Jacobian, then the scaled score product.
    for (std::size_t i = 0; i < lq; ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < lk; ++j) inner += dp(i, j) * p(i, j);
      for (std::size_t j = 0; j < lk; ++j) {
        const double ds = p(i, j) * (dp(i, j) - inner) * scale;
        for (std::size_t c = 0; c < dh; ++c) {
          dq(i, off + c) += ds * trace.k(j, off + c);
          dk(j, off + c) += ds * trace.q(i, off + c);
        }
      }
    }
  }
  g.d_w.q = matmul_tn(queries, dq);
  g.d_w.k = matmul_tn(keys_values, dk);
  g.d_w.v = matmul_tn(keys_values, dv);
  g.d_queries = matmul_nt(dq, w.q);
  g.d_keys_values = matmul_nt(dk, w.k);
  add_scaled(g.d_keys_values, matmul_nt(dv, w.v));
  return g;
}

}  // namespace xalign

#pragma once

// Low-rank adapters: W' = W + alpha * B * A with B (d x r), A (r x d).

#include <string>
#include <vector>

#include "xalign/numerics.hpp"

namespace xalign {

struct LoraAdapter {
  std::string target;
  Matrix a;  // r x d
  Matrix b;  // d x r
  double alpha = 32.0;

  std::size_t rank() const { return a.rows(); }

  bool operator==(const LoraAdapter&) const = default;
};

// Random A, zero B: the adapted matrix equals the base at initialization.
inline LoraAdapter make_lora(std::string target, std::size_t dim, std::size_t rank, double alpha,
                             Rng& rng) {
  if (rank == 0 || rank >= dim) {
    throw NumericError("LoRA rank must satisfy 0 < r < d (r=" + std::to_string(rank) +
                       ", d=" + std::to_string(dim) + ")");
  }
  LoraAdapter adapter{std::move(target), Matrix(rank, dim), Matrix(dim, rank), alpha};
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  rng.fill_uniform(adapter.a, -bound, bound);
  return adapter;
}

inline Matrix lora_apply(const Matrix& w, const LoraAdapter& adapter) {
  if (w.rows() != w.cols() || adapter.b.rows() != w.rows() || adapter.a.cols() != w.cols() ||
      adapter.b.cols() != adapter.a.rows()) {
    throw NumericError("lora_apply: shape mismatch W " + w.shape() + ", B " + adapter.b.shape() +
                       ", A " + adapter.a.shape());
  }
  Matrix out = w;
  add_scaled(out, matmul(adapter.b, adapter.a), adapter.alpha);
  return out;
}

// Gradients of the adapter factors given dL/dW' for W' = W + alpha B A.
inline void lora_backward(const LoraAdapter& adapter, const Matrix& d_effective, Matrix& d_a,
                          Matrix& d_b) {
  add_scaled(d_b, matmul_nt(d_effective, adapter.a), adapter.alpha);
  add_scaled(d_a, matmul_tn(adapter.b, d_effective), adapter.alpha);
}

struct LoraParamCount {
  std::size_t added = 0;
  double ratio = 0.0;
};

// added = sum over adapters of 2 * r * d.
inline LoraParamCount lora_param_count(const std::vector<LoraAdapter>& adapters,
                                       std::size_t base_param_count) {
  LoraParamCount out;
  for (const auto& a : adapters) out.added += 2 * a.rank() * a.a.cols();
  out.ratio = base_param_count == 0 ? 0.0
                                    : static_cast<double>(out.added) /
                                          static_cast<double>(base_param_count);
  return out;
}

// A square base projection with its adapter.
struct AdaptedMatrix {
  Matrix base;
  LoraAdapter lora;

  Matrix effective() const { return lora_apply(base, lora); }

  bool operator==(const AdaptedMatrix&) const = default;
};

}  // namespace xalign

#pragma once

// Classification head, losses and triplet mining.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "xalign/knowledge.hpp"
#include "xalign/numerics.hpp"

namespace xalign {

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kNormFloor = 1e-8;

struct ClassifierHead {
  Matrix weights;  // 1 x d
  Matrix bias;     // 1 x 1

  bool operator==(const ClassifierHead&) const = default;
};

inline double head_logit(std::span<const double> pooled, const ClassifierHead& head) {
  return dot(head.weights.row(0), pooled) + head.bias(0, 0);
}

// p = sigmoid(w . mean_pool(h~) + b)
inline double classify(const Matrix& h_tilde, const ClassifierHead& head) {
  require_finite(h_tilde.values(), "classify");
  return sigmoid(head_logit(mean_pool(h_tilde), head));
}

inline int predicted_label(double p_hat) { return p_hat >= 0.5 ? 1 : 0; }

inline double bce_loss(std::span<const double> p_hat, std::span<const int> labels) {
  if (p_hat.size() != labels.size() || p_hat.empty()) {
    throw NumericError("bce_loss: need equally sized non-empty batches");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    const double p = std::clamp(p_hat[i], kProbClamp, 1.0 - kProbClamp);
    total -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(p_hat.size());
}

// Cosine distance with each norm floored at kNormFloor.
inline double floored_cosine_distance(std::span<const double> u, std::span<const double> v) {
  const double nu = std::max(norm(u), kNormFloor);
  const double nv = std::max(norm(v), kNormFloor);
  return 1.0 - dot(u, v) / (nu * nv);
}

// d(floored_cosine_distance(u, v)) / du, accumulated into out scaled by s.
inline void floored_cosine_distance_grad_u(std::span<const double> u, std::span<const double> v,
                                           double s, std::span<double> out) {
  const double raw_nu = norm(u);
  const double nu = std::max(raw_nu, kNormFloor);
  const double nv = std::max(norm(v), kNormFloor);
  const double uv = dot(u, v);
  const bool floored = raw_nu < kNormFloor;
  for (std::size_t c = 0; c < u.size(); ++c) {
    double dcos = v[c] / (nu * nv);
    if (!floored) dcos -= uv * u[c] / (nu * nu * nu * nv);
    out[c] -= s * dcos;
  }
}

struct SimilarityWeights {
  double semantic = 0.7;  // lambda_s
  double cultural = 0.3;  // lambda_c
};

inline double cosine_similarity_or_zero(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot(u, v) / (nu * nv);
}

// s(i, j) = lambda_s * cos(pool(h_mm_i), pool(h_mm_j)) + lambda_c * cultRel(E_i, E_j).
// A zero-norm pooled vector contributes a semantic term of 0.
inline double hybrid_similarity(std::size_t i, std::size_t j, const std::vector<Vector>& pooled_hmm,
                                const std::vector<std::vector<EntityLink>>& links,
                                const KnowledgeBase& kb, const SimilarityWeights& w) {
  return w.semantic * cosine_similarity_or_zero(pooled_hmm.at(i), pooled_hmm.at(j)) +
         w.cultural * cult_rel(links.at(i), links.at(j), kb);
}

inline Matrix hybrid_similarity_matrix(const std::vector<Vector>& pooled_hmm,
                                       const std::vector<std::vector<EntityLink>>& links,
                                       const KnowledgeBase& kb, const SimilarityWeights& w) {
  const std::size_t n = pooled_hmm.size();
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      s(i, j) = s(j, i) = hybrid_similarity(i, j, pooled_hmm, links, kb, w);
    }
  }
  return s;
}

struct TripletIndex {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const TripletIndex&) const = default;
};

// For each anchor with at least one same-label and one other-label sample:
// positive = most similar same-label sample, negative = most similar
// other-label sample (hard negative). Ties go to the lowest index.
inline std::vector<TripletIndex> mine_triplets(std::span<const int> labels, const Matrix& similarity) {
  const std::size_t n = labels.size();
  if (similarity.rows() != n || similarity.cols() != n) {
    throw NumericError("mine_triplets: similarity is " + similarity.shape() + " for batch of " +
                       std::to_string(n));
  }
  std::vector<TripletIndex> out;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n;
    std::size_t neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos == n || similarity(a, j) > similarity(a, pos)) pos = j;
      } else if (neg == n || similarity(a, j) > similarity(a, neg)) {
        neg = j;
      }
    }
    if (pos != n && neg != n) out.push_back({a, pos, neg});
  }
  return out;
}

inline double triplet_term(const std::vector<Vector>& z, const TripletIndex& t, double margin) {
  return std::max(0.0, margin + floored_cosine_distance(z[t.anchor], z[t.positive]) -
                           floored_cosine_distance(z[t.anchor], z[t.negative]));
}

// Mean hinge over the given triplets; 0 for an empty list.
inline double triplet_loss(const std::vector<Vector>& z, const std::vector<TripletIndex>& triplets,
                           double margin) {
  if (triplets.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : triplets) total += triplet_term(z, t, margin);
  return total / static_cast<double>(triplets.size());
}

// Gradient of scale * triplet_loss with respect to every z, added to dz.
inline void triplet_loss_backward(const std::vector<Vector>& z,
                                  const std::vector<TripletIndex>& triplets, double margin,
                                  double scale, std::vector<Vector>& dz) {
  if (triplets.empty()) return;
  const double s = scale / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    if (triplet_term(z, t, margin) <= 0.0) continue;
    const auto& a = z[t.anchor];
    const auto& p = z[t.positive];
    const auto& n = z[t.negative];
    floored_cosine_distance_grad_u(a, p, s, dz[t.anchor]);
    floored_cosine_distance_grad_u(p, a, s, dz[t.positive]);
    floored_cosine_distance_grad_u(a, n, -s, dz[t.anchor]);
    floored_cosine_distance_grad_u(n, a, -s, dz[t.negative]);
  }
}

}  // namespace xalign

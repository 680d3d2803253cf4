#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>

#include "xalign/xalign.hpp"

namespace xalign::testing {

inline std::filesystem::path data_dir() { return XALIGN_DATA_DIR; }

inline const KnowledgeBase& bundled_kb() {
  static const KnowledgeBase kb = load_kb(data_dir() / "kb");
  return kb;
}

// Test-side random values come from std::mt19937_64 directly so oracles do
// not share the library's Rng code path.
inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = dist(gen);
  return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (double& x : v) x = dist(gen);
  return v;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("xalign-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Straight-line multi-head attention: per head, explicit column slices,
// exp-normalized scores, then the output projection.
inline Matrix reference_attention(const Matrix& xq, const Matrix& xkv, const Matrix& wq,
                                  const Matrix& wk, const Matrix& wv, const Matrix& wo,
                                  std::size_t heads, std::vector<Matrix>* probs = nullptr) {
  const std::size_t d = wq.rows();
  const std::size_t dh = d / heads;
  auto project = [&](const Matrix& x, const Matrix& w) {
    Matrix out(x.rows(), d);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out(i, j) += x(i, k) * w(k, j);
    return out;
  };
  const Matrix q = project(xq, wq), k = project(xkv, wk), v = project(xkv, wv);
  Matrix concat(xq.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix p(xq.rows(), xkv.rows());
    for (std::size_t i = 0; i < xq.rows(); ++i) {
      std::vector<double> e(xkv.rows());
      double z = 0.0;
      for (std::size_t j = 0; j < xkv.rows(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        e[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        z += e[j];
      }
      for (std::size_t j = 0; j < xkv.rows(); ++j) p(i, j) = e[j] / z;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < xkv.rows(); ++j) acc += p(i, j) * v(j, h * dh + c);
        concat(i, h * dh + c) = acc;
      }
    }
    if (probs) probs->push_back(p);
  }
  return project(concat, wo);
}

// W + alpha * B * A by explicit sums.
inline Matrix reference_adapted(const AdaptedMatrix& m) {
  const std::size_t d = m.base.rows();
  Matrix out = m.base;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < m.lora.rank(); ++k)
        out(i, j) += m.lora.alpha * m.lora.b(i, k) * m.lora.a(k, j);
  return out;
}

inline void expect_matrix_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) EXPECT_NEAR(a(i, j), b(i, j), tol) << i << "," << j;
}

// Small model with every LoRA B filled so adapters are active.
inline ModelParams random_model(std::size_t dim, std::size_t heads, std::size_t rank,
                                std::size_t vocab_size, std::uint64_t seed, double b_scale = 0.02) {
  ModelParams p = init_model({dim, heads, rank, 32.0}, vocab_size, seed);
  std::mt19937_64 gen(seed + 1000);
  for (auto* block : {&p.encoder.self_attn, &p.fusion.cross_attn})
    for (auto& m : *block) m.lora.b = random_matrix(dim, rank, gen, -b_scale, b_scale);
  return p;
}

inline MemeRecord make_record(std::string id, std::vector<std::string> text,
                              std::vector<std::string> tags, std::optional<int> label = std::nullopt) {
  MemeRecord r;
  r.id = std::move(id);
  r.text_tokens = std::move(text);
  r.image_tags = std::move(tags);
  r.label = label;
  return r;
}

}  // namespace xalign::testing

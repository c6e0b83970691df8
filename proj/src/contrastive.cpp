#include "fsce/contrastive.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fsce {

void ContrastiveHead::init(Rng& rng) {
  proj.init(rng, 1.0 / std::sqrt(static_cast<double>(proj.in)));
}

std::vector<float> ContrastiveHead::encode(const std::vector<float>& x) const {
  if (static_cast<int>(x.size()) != proj.in)
    throw std::invalid_argument("ContrastiveHead::encode: input dim " +
                                std::to_string(x.size()) + " != " + std::to_string(proj.in));
  std::vector<float> z(proj.out);
  proj.forward(x.data(), z.data());
  return z;
}

CosineClassifier::CosineClassifier(int num_rows, int d, float alpha_)
    : dim(d), rows(num_rows), alpha(alpha_), w({num_rows, d}) {
  if (!(alpha_ > 0.f)) throw std::invalid_argument("CosineClassifier: alpha must be > 0");
}

void CosineClassifier::init(Rng& rng) {
  w.init_normal(rng, 1.0 / std::sqrt(static_cast<double>(dim)));
}

namespace {

double norm_of(const float* v, int n) {
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += static_cast<double>(v[i]) * v[i];
  return std::sqrt(sq);
}

double dotd(const float* a, const float* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

std::vector<double> CosineClassifier::logits(const std::vector<float>& x) const {
  if (static_cast<int>(x.size()) != dim)
    throw std::invalid_argument("CosineClassifier::logits: input dim mismatch");
  const double xn = norm_of(x.data(), dim);
  if (!(xn > 1e-12))
    throw std::invalid_argument("CosineClassifier::logits: zero-norm feature (dead input)");
  std::vector<double> out(rows);
  for (int r = 0; r < rows; ++r) {
    const float* wr = prototype(r);
    const double wn = norm_of(wr, dim);
    if (!(wn > 1e-12))
      throw std::runtime_error("CosineClassifier: zero-norm prototype row " + std::to_string(r));
    out[r] = alpha * dotd(x.data(), wr, dim) / (xn * wn);
  }
  return out;
}

void CosineClassifier::backward(const std::vector<float>& x, const std::vector<double>& dlogits,
                                std::vector<float>* dx) {
  const double xn = norm_of(x.data(), dim);
  if (!(xn > 1e-12)) throw std::invalid_argument("CosineClassifier::backward: zero-norm feature");
  std::vector<double> acc(dim, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double d = dlogits[r];
    if (d == 0.0) continue;
    const float* wr = prototype(r);
    const double wn = norm_of(wr, dim);
    const double cos_rw = dotd(x.data(), wr, dim) / (xn * wn);
    float* gw = &w.g[static_cast<size_t>(r) * dim];
    const double ax = alpha * d;
    for (int i = 0; i < dim; ++i) {
      // d logit_r / d w_i and / d x_i of alpha * cos(x, w_r)
      gw[i] += static_cast<float>(ax * (x[i] / (xn * wn) - cos_rw * wr[i] / (wn * wn)));
      acc[i] += ax * (wr[i] / (xn * wn) - cos_rw * x[i] / (xn * xn));
    }
  }
  if (dx) {
    dx->resize(dim);
    for (int i = 0; i < dim; ++i) (*dx)[i] = static_cast<float>(acc[i]);
  }
}

std::vector<std::vector<double>> prototype_similarity_matrix(const CosineClassifier& cls) {
  if (cls.rows < 2)
    throw std::invalid_argument("prototype_similarity_matrix: need at least 2 classes");
  std::vector<double> norms(cls.rows);
  for (int r = 0; r < cls.rows; ++r) {
    norms[r] = norm_of(cls.prototype(r), cls.dim);
    if (!(norms[r] > 1e-12))
      throw std::runtime_error("prototype_similarity_matrix: zero-norm prototype row " +
                               std::to_string(r));
  }
  std::vector<std::vector<double>> m(cls.rows, std::vector<double>(cls.rows, 1.0));
  for (int i = 0; i < cls.rows; ++i)
    for (int j = i + 1; j < cls.rows; ++j) {
      const double c = dotd(cls.prototype(i), cls.prototype(j), cls.dim) / (norms[i] * norms[j]);
      m[i][j] = m[j][i] = c;
    }
  return m;
}

}  // namespace fsce

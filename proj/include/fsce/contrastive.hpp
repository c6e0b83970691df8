#ifndef FSCE_CONTRASTIVE_HPP
#define FSCE_CONTRASTIVE_HPP

#include <vector>

#include "fsce/nn.hpp"

namespace fsce {

// Projection head: single affine map from the RoI feature space (D_R) to
// the contrastive space (D_C). No trailing nonlinearity; the loss
// normalizes the output itself.
struct ContrastiveHead {
  Linear proj;

  ContrastiveHead() = default;
  ContrastiveHead(int d_r, int d_c) : proj(d_r, d_c) {}

  int in_dim() const { return proj.in; }
  int out_dim() const { return proj.out; }
  void init(Rng& rng);

  // Throws on dimension mismatch. Input entries are expected post-ReLU
  // (>= 0); that is not re-checked here.
  std::vector<float> encode(const std::vector<float>& x) const;
};

// Cosine-similarity box classifier. Row j holds the unnormalized prototype
// w_j; logits are alpha * cos(x, w_j). The last row is the background
// prototype. No bias term.
struct CosineClassifier {
  int dim = 0;
  int rows = 0;  // foreground classes + 1 background
  float alpha = 20.f;
  ParamTensor w;  // (rows, dim)

  CosineClassifier() = default;
  CosineClassifier(int num_rows, int d, float alpha_);

  void init(Rng& rng);
  const float* prototype(int row) const { return &w.v[static_cast<size_t>(row) * dim]; }

  // alpha * cosine(x, w_j) per row. Throws on zero-norm input or prototype.
  std::vector<double> logits(const std::vector<float>& x) const;

  // Accumulates w.g and writes dL/dx given dL/dlogits.
  void backward(const std::vector<float>& x, const std::vector<double>& dlogits,
                std::vector<float>* dx);
};

// Pairwise prototype cosines; entry (i,j) = cos(w_i, w_j). Requires at
// least two rows; throws on a zero-norm prototype.
std::vector<std::vector<double>> prototype_similarity_matrix(const CosineClassifier& cls);

}  // namespace fsce

#endif  // FSCE_CONTRASTIVE_HPP

#ifndef FSCE_NN_HPP
#define FSCE_NN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fsce/rng.hpp"

namespace fsce {

// A learnable tensor with its gradient and momentum buffer.
struct ParamTensor {
  std::vector<int> shape;
  std::vector<float> v;  // values
  std::vector<float> g;  // gradient accumulator
  std::vector<float> m;  // SGD momentum

  ParamTensor() = default;
  explicit ParamTensor(std::vector<int> s);

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  void zero_grad();
  void fill(float value);
  void init_normal(Rng& rng, double stddev);
};

// Channel-major (CHW) feature map.
struct FeatureMap {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  FeatureMap() = default;
  FeatureMap(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.f) {}
  float& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
};

// y = W x + b. Explicit-cache style: callers hold the forward input and
// hand it back to backward.
struct Linear {
  int in = 0, out = 0;
  ParamTensor w;  // (out, in)
  ParamTensor b;  // (out)

  Linear() = default;
  Linear(int in_dim, int out_dim);

  void init(Rng& rng, double stddev);
  void forward(const float* x, float* y) const;
  // Accumulates w.g / b.g; writes dL/dx into dx when non-null.
  void backward(const float* x, const float* dy, float* dx);
};

// Plain direct convolution, zero padding.
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  ParamTensor w;  // (out_ch, in_ch, k, k)
  ParamTensor b;  // (out_ch)

  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int s, int p);

  void init(Rng& rng);  // He-style: stddev = sqrt(2 / fan_in)
  int out_h(int h) const { return (h + 2 * pad - ksize) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - ksize) / stride + 1; }
  void forward(const FeatureMap& x, FeatureMap& y) const;
  void backward(const FeatureMap& x, const FeatureMap& dy, FeatureMap* dx);
};

void relu_inplace(std::vector<float>& v);
// dx masked by the post-activation output (y == 0 kills the gradient)
void relu_backward(const std::vector<float>& y, std::vector<float>& dy);

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v = mu*v - lr*(g + wd*w); w += v. decay=false skips the L2 term (biases).
void sgd_step(ParamTensor& p, const SgdConfig& cfg, bool decay = true);

}  // namespace fsce

#endif  // FSCE_NN_HPP

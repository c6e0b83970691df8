#include "fsce/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fsce {

ParamTensor::ParamTensor(std::vector<int> s) : shape(std::move(s)) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  v.assign(n, 0.f);
  g.assign(n, 0.f);
  m.assign(n, 0.f);
}

void ParamTensor::zero_grad() { std::fill(g.begin(), g.end(), 0.f); }

void ParamTensor::fill(float value) { std::fill(v.begin(), v.end(), value); }

void ParamTensor::init_normal(Rng& rng, double stddev) {
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
}

Linear::Linear(int in_dim, int out_dim)
    : in(in_dim), out(out_dim), w({out_dim, in_dim}), b({out_dim}) {}

void Linear::init(Rng& rng, double stddev) {
  w.init_normal(rng, stddev);
  b.fill(0.f);
}

void Linear::forward(const float* x, float* y) const {
  for (int o = 0; o < out; ++o) {
    const float* wr = &w.v[static_cast<size_t>(o) * in];
    double acc = b.v[o];
    for (int i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * x[i];
    y[o] = static_cast<float>(acc);
  }
}

void Linear::backward(const float* x, const float* dy, float* dx) {
  for (int o = 0; o < out; ++o) {
    const float d = dy[o];
    if (d == 0.f) continue;
    float* gw = &w.g[static_cast<size_t>(o) * in];
    for (int i = 0; i < in; ++i) gw[i] += d * x[i];
    b.g[o] += d;
  }
  if (dx) {
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out; ++o)
        acc += static_cast<double>(dy[o]) * w.v[static_cast<size_t>(o) * in + i];
      dx[i] = static_cast<float>(acc);
    }
  }
}

Conv2d::Conv2d(int in_c, int out_c, int k, int s, int p)
    : in_ch(in_c), out_ch(out_c), ksize(k), stride(s), pad(p),
      w({out_c, in_c, k, k}), b({out_c}) {}

void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_ch) * ksize * ksize;
  w.init_normal(rng, std::sqrt(2.0 / fan_in));
  b.fill(0.f);
}

void Conv2d::forward(const FeatureMap& x, FeatureMap& y) const {
  if (x.c != in_ch) throw std::invalid_argument("Conv2d::forward: channel mismatch");
  const int oh = out_h(x.h), ow = out_w(x.w);
  if (y.c != out_ch || y.h != oh || y.w != ow) y = FeatureMap(out_ch, oh, ow);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b.v[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
          const float* wk = &w.v[((static_cast<size_t>(oc) * in_ch + ic) * ksize) * ksize];
          for (int ky = 0; ky < ksize; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.h) continue;
            const float* row = &x.v[(static_cast<size_t>(ic) * x.h + iy) * x.w];
            for (int kx = 0; kx < ksize; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= x.w) continue;
              acc += static_cast<double>(wk[ky * ksize + kx]) * row[ix];
            }
          }
        }
        y.at(oc, oy, ox) = static_cast<float>(acc);
      }
    }
  }
}

void Conv2d::backward(const FeatureMap& x, const FeatureMap& dy, FeatureMap* dx) {
  const int oh = dy.h, ow = dy.w;
  if (dx && (dx->c != x.c || dx->h != x.h || dx->w != x.w)) *dx = FeatureMap(x.c, x.h, x.w);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float d = dy.at(oc, oy, ox);
        if (d == 0.f) continue;
        b.g[oc] += d;
        for (int ic = 0; ic < in_ch; ++ic) {
          float* gw = &w.g[((static_cast<size_t>(oc) * in_ch + ic) * ksize) * ksize];
          for (int ky = 0; ky < ksize; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.h) continue;
            const float* row = &x.v[(static_cast<size_t>(ic) * x.h + iy) * x.w];
            float* drow = dx ? &dx->v[(static_cast<size_t>(ic) * x.h + iy) * x.w] : nullptr;
            for (int kx = 0; kx < ksize; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= x.w) continue;
              gw[ky * ksize + kx] += d * row[ix];
              if (drow) drow[ix] += d * w.v[((static_cast<size_t>(oc) * in_ch + ic) * ksize + ky) * ksize + kx];
            }
          }
        }
      }
    }
  }
}

void relu_inplace(std::vector<float>& v) {
  for (auto& x : v)
    if (x < 0.f) x = 0.f;
}

void relu_backward(const std::vector<float>& y, std::vector<float>& dy) {
  for (size_t i = 0; i < y.size(); ++i)
    if (y[i] == 0.f) dy[i] = 0.f;
}

void sgd_step(ParamTensor& p, const SgdConfig& cfg, bool decay) {
  const float lr = static_cast<float>(cfg.lr);
  const float mu = static_cast<float>(cfg.momentum);
  const float wd = decay ? static_cast<float>(cfg.weight_decay) : 0.f;
  for (size_t i = 0; i < p.v.size(); ++i) {
    const float grad = p.g[i] + wd * p.v[i];
    p.m[i] = mu * p.m[i] - lr * grad;
    p.v[i] += p.m[i];
  }
}

}  // namespace fsce

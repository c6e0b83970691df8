#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fsce/nn.hpp"
#include "fsce/rng.hpp"

using namespace fsce;

namespace {

// scalar loss proxy: weighted sum of outputs, so dL/dy = coeffs
double weighted_sum(const std::vector<float>& y, const std::vector<float>& c) {
  double acc = 0;
  for (size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * c[i];
  return acc;
}

}  // namespace

TEST(Linear, ForwardMatchesNaiveLoops) {
  Rng rng(1);
  Linear lin(5, 3);
  lin.init(rng, 0.5);
  std::vector<float> x = {0.2f, -1.f, 3.f, 0.f, 0.7f};
  std::vector<float> y(3);
  lin.forward(x.data(), y.data());
  for (int o = 0; o < 3; ++o) {
    double acc = lin.b.v[o];
    for (int i = 0; i < 5; ++i) acc += static_cast<double>(lin.w.v[o * 5 + i]) * x[i];
    EXPECT_NEAR(y[o], acc, 1e-6);
  }
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  Rng rng(2);
  Linear lin(6, 4);
  lin.init(rng, 0.3);
  std::vector<float> x(6), c(4);
  for (auto& v : x) v = static_cast<float>(rng.normal());
  for (auto& v : c) v = static_cast<float>(rng.normal());

  std::vector<float> dx(6);
  lin.w.zero_grad();
  lin.b.zero_grad();
  lin.backward(x.data(), c.data(), dx.data());

  const float h = 1e-3f;
  for (int i = 0; i < 6; ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    std::vector<float> yp(4), ym(4);
    lin.forward(xp.data(), yp.data());
    lin.forward(xm.data(), ym.data());
    const double num = (weighted_sum(yp, c) - weighted_sum(ym, c)) / (2 * h);
    EXPECT_NEAR(dx[i], num, 1e-3);
  }
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 6; ++i) {
      Linear lp = lin, lm = lin;
      lp.w.v[o * 6 + i] += h;
      lm.w.v[o * 6 + i] -= h;
      std::vector<float> yp(4), ym(4);
      lp.forward(x.data(), yp.data());
      lm.forward(x.data(), ym.data());
      const double num = (weighted_sum(yp, c) - weighted_sum(ym, c)) / (2 * h);
      EXPECT_NEAR(lin.w.g[o * 6 + i], num, 1e-3);
    }
}

TEST(Conv2d, OutputShape) {
  Conv2d c(3, 8, 3, 2, 1);
  EXPECT_EQ(c.out_h(64), 32);
  EXPECT_EQ(c.out_w(63), 32);
  Conv2d c1(8, 4, 1, 1, 0);
  EXPECT_EQ(c1.out_h(16), 16);
}

TEST(Conv2d, ForwardIdentityKernel) {
  Conv2d c(1, 1, 3, 1, 1);
  c.w.fill(0.f);
  c.w.v[4] = 1.f;  // center tap
  c.b.fill(0.f);
  FeatureMap x(1, 4, 4);
  for (int i = 0; i < 16; ++i) x.v[i] = static_cast<float>(i);
  FeatureMap y;
  c.forward(x, y);
  for (int i = 0; i < 16; ++i) EXPECT_FLOAT_EQ(y.v[i], x.v[i]);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  Rng rng(3);
  Conv2d conv(2, 3, 3, 2, 1);
  conv.init(rng);
  FeatureMap x(2, 6, 6);
  for (auto& v : x.v) v = static_cast<float>(rng.normal());
  FeatureMap y;
  conv.forward(x, y);
  std::vector<float> c(y.v.size());
  for (auto& v : c) v = static_cast<float>(rng.normal());

  FeatureMap dy(y.c, y.h, y.w);
  dy.v = c;
  FeatureMap dx;
  conv.w.zero_grad();
  conv.b.zero_grad();
  conv.backward(x, dy, &dx);

  const float h = 1e-3f;
  // input gradient (spot-check every 4th element)
  for (size_t i = 0; i < x.v.size(); i += 4) {
    FeatureMap xp = x, xm = x;
    xp.v[i] += h;
    xm.v[i] -= h;
    FeatureMap yp, ym;
    conv.forward(xp, yp);
    conv.forward(xm, ym);
    const double num = (weighted_sum(yp.v, c) - weighted_sum(ym.v, c)) / (2 * h);
    EXPECT_NEAR(dx.v[i], num, 2e-3);
  }
  // weight gradient
  for (size_t i = 0; i < conv.w.v.size(); i += 5) {
    Conv2d cp = conv, cm = conv;
    cp.w.v[i] += h;
    cm.w.v[i] -= h;
    FeatureMap yp, ym;
    cp.forward(x, yp);
    cm.forward(x, ym);
    const double num = (weighted_sum(yp.v, c) - weighted_sum(ym.v, c)) / (2 * h);
    EXPECT_NEAR(conv.w.g[i], num, 2e-3);
  }
  // bias gradient
  for (size_t i = 0; i < conv.b.v.size(); ++i) {
    Conv2d cp = conv, cm = conv;
    cp.b.v[i] += h;
    cm.b.v[i] -= h;
    FeatureMap yp, ym;
    cp.forward(x, yp);
    cm.forward(x, ym);
    const double num = (weighted_sum(yp.v, c) - weighted_sum(ym.v, c)) / (2 * h);
    EXPECT_NEAR(conv.b.g[i], num, 2e-3);
  }
}

TEST(Relu, ForwardAndMask) {
  std::vector<float> v = {-1.f, 0.f, 2.f};
  relu_inplace(v);
  EXPECT_FLOAT_EQ(v[0], 0.f);
  EXPECT_FLOAT_EQ(v[1], 0.f);
  EXPECT_FLOAT_EQ(v[2], 2.f);
  std::vector<float> d = {5.f, 5.f, 5.f};
  relu_backward(v, d);
  EXPECT_FLOAT_EQ(d[0], 0.f);
  EXPECT_FLOAT_EQ(d[1], 0.f);
  EXPECT_FLOAT_EQ(d[2], 5.f);
}

TEST(Sgd, MomentumAndDecaySemantics) {
  ParamTensor p({2});
  p.v = {1.f, -2.f};
  p.g = {0.5f, 0.25f};
  p.m = {0.f, 0.f};
  SgdConfig cfg{0.1, 0.9, 0.01};
  sgd_step(p, cfg, true);
  // v = -lr*(g + wd*w); w += v
  EXPECT_NEAR(p.m[0], -0.1 * (0.5 + 0.01 * 1.0), 1e-7);
  EXPECT_NEAR(p.v[0], 1.0 - 0.1 * (0.5 + 0.01 * 1.0), 1e-6);
  const float m0 = p.m[0], w0 = p.v[0];
  p.g = {0.5f, 0.25f};
  sgd_step(p, cfg, true);
  EXPECT_NEAR(p.m[0], 0.9 * m0 - 0.1 * (0.5 + 0.01 * w0), 1e-6);
}

TEST(Sgd, NoDecayPath) {
  ParamTensor p({1});
  p.v = {10.f};
  p.g = {0.f};
  SgdConfig cfg{0.1, 0.0, 1.0};
  sgd_step(p, cfg, false);
  EXPECT_FLOAT_EQ(p.v[0], 10.f);  // zero grad, decay suppressed
  sgd_step(p, cfg, true);
  EXPECT_LT(p.v[0], 10.f);  // decay bites
}

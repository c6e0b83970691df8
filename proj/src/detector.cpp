#include "fsce/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "nlohmann/json.hpp"

using nlohmann::json;

namespace fsce {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string to_string(Component c) {
  switch (c) {
    case Component::kBackbone: return "backbone";
    case Component::kRpn: return "rpn";
    case Component::kRoiFeature: return "roi_feature_extractor";
    case Component::kBoxPredictors: return "box_predictors";
    case Component::kContrastiveHead: return "contrastive_head";
  }
  return "?";
}

Component component_from_string(const std::string& s) {
  if (s == "backbone") return Component::kBackbone;
  if (s == "rpn") return Component::kRpn;
  if (s == "roi_feature_extractor") return Component::kRoiFeature;
  if (s == "box_predictors") return Component::kBoxPredictors;
  if (s == "contrastive_head") return Component::kContrastiveHead;
  throw std::invalid_argument("unknown component '" + s + "'");
}

bool DetectorConfig::is_frozen(Component c) const {
  return std::find(frozen.begin(), frozen.end(), c) != frozen.end();
}

void DetectorConfig::validate() const {
  if (image_size < 16) throw std::invalid_argument("detector.image_size too small");
  if (image_size % Backbone::kStride != 0)
    throw std::invalid_argument("detector.image_size must be a multiple of the feature stride");
  if (anchor_sizes.empty() || anchor_aspects.empty())
    throw std::invalid_argument("detector: anchor grid must be non-empty");
  if (rpn_post_nms_cap <= 0) throw std::invalid_argument("detector.rpn_post_nms_cap must be > 0");
  if (roi_batch_size <= 0) throw std::invalid_argument("detector.roi_batch_size must be > 0");
  if (!(roi_fg_fraction > 0.0 && roi_fg_fraction < 1.0))
    throw std::invalid_argument("detector.roi_fg_fraction must lie in (0,1)");
  if (!(fg_iou_threshold > 0.0 && fg_iou_threshold < 1.0))
    throw std::invalid_argument("detector.fg_iou_threshold must lie in (0,1)");
  if (d_r <= 0 || d_c <= 0) throw std::invalid_argument("detector: feature dims must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("detector.alpha must be > 0");
  if (images_per_step <= 0) throw std::invalid_argument("detector.images_per_step must be > 0");
  if (steps < 0) throw std::invalid_argument("detector.steps must be >= 0");
}

// ---------------------------------------------------------------------------
// Network pieces
// ---------------------------------------------------------------------------

void Backbone::init(Rng rng) {
  c1.init(rng);
  c2.init(rng);
  c3.init(rng);
  c4.init(rng);
}

void Backbone::forward(const GrayImage& img, Ctx& ctx) const {
  ctx.a0 = FeatureMap(1, img.height, img.width);
  std::copy(img.pix.begin(), img.pix.end(), ctx.a0.v.begin());
  c1.forward(ctx.a0, ctx.a1);
  relu_inplace(ctx.a1.v);
  c2.forward(ctx.a1, ctx.a2);
  relu_inplace(ctx.a2.v);
  c3.forward(ctx.a2, ctx.a3);
  relu_inplace(ctx.a3.v);
  c4.forward(ctx.a3, ctx.a4);
  relu_inplace(ctx.a4.v);
}

void Backbone::backward(const Ctx& ctx, FeatureMap dtop) {
  relu_backward(ctx.a4.v, dtop.v);
  FeatureMap d3;
  c4.backward(ctx.a3, dtop, &d3);
  relu_backward(ctx.a3.v, d3.v);
  FeatureMap d2;
  c3.backward(ctx.a2, d3, &d2);
  relu_backward(ctx.a2.v, d2.v);
  FeatureMap d1;
  c2.backward(ctx.a1, d2, &d1);
  relu_backward(ctx.a1.v, d1.v);
  c1.backward(ctx.a0, d1, nullptr);
}

RpnHead::RpnHead(int channels, int num_anchors_per_cell)
    : conv(channels, channels, 3, 1, 1),
      obj(channels, num_anchors_per_cell, 1, 1, 0),
      delta(channels, 4 * num_anchors_per_cell, 1, 1, 0) {}

void RpnHead::init(Rng rng) {
  conv.init(rng);
  // near-zero heads: anchors without training signal decode to themselves
  obj.w.init_normal(rng, 0.01);
  obj.b.fill(0.f);
  delta.w.init_normal(rng, 0.01);
  delta.b.fill(0.f);
}

void RpnHead::forward(const FeatureMap& f, Ctx& ctx) const {
  conv.forward(f, ctx.hidden);
  relu_inplace(ctx.hidden.v);
  obj.forward(ctx.hidden, ctx.obj_map);
  delta.forward(ctx.hidden, ctx.delta_map);
}

void RpnHead::backward(const FeatureMap& f, const Ctx& ctx, const FeatureMap& dobj,
                       const FeatureMap& ddelta, FeatureMap* df) {
  FeatureMap dhidden(ctx.hidden.c, ctx.hidden.h, ctx.hidden.w);
  FeatureMap tmp;
  obj.backward(ctx.hidden, dobj, &tmp);
  for (size_t i = 0; i < dhidden.v.size(); ++i) dhidden.v[i] += tmp.v[i];
  delta.backward(ctx.hidden, ddelta, &tmp);
  for (size_t i = 0; i < dhidden.v.size(); ++i) dhidden.v[i] += tmp.v[i];
  relu_backward(ctx.hidden.v, dhidden.v);
  if (df) {
    FeatureMap dfl;
    conv.backward(f, dhidden, &dfl);
    for (size_t i = 0; i < df->v.size(); ++i) df->v[i] += dfl.v[i];
  } else {
    conv.backward(f, dhidden, nullptr);
  }
}

// ---------------------------------------------------------------------------
// Anchors and box deltas
// ---------------------------------------------------------------------------

namespace {

struct AnchorTemplate {
  double ox, oy, w, h;  // center offset within the cell, extent
};

// Per-cell anchor layout; the RPN obj/delta channel order follows this
// enumeration exactly.
std::vector<AnchorTemplate> cell_anchor_templates(const DetectorConfig& cfg) {
  std::vector<AnchorTemplate> out;
  const double q = Backbone::kStride / 4.0;
  for (double size : cfg.anchor_sizes)
    for (double aspect : cfg.anchor_aspects) {
      const double w = size * std::sqrt(aspect);
      const double h = size / std::sqrt(aspect);
      if (size < cfg.anchor_densify_below) {
        for (double oy : {-q, q})
          for (double ox : {-q, q}) out.push_back({ox, oy, w, h});
      } else {
        out.push_back({0.0, 0.0, w, h});
      }
    }
  return out;
}

}  // namespace

std::vector<Box> make_anchors(const DetectorConfig& cfg) {
  const int fm = cfg.image_size / Backbone::kStride;
  const auto templates = cell_anchor_templates(cfg);
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(fm) * fm * templates.size());
  for (int ay = 0; ay < fm; ++ay)
    for (int ax = 0; ax < fm; ++ax)
      for (const auto& t : templates) {
        const double cx = (ax + 0.5) * Backbone::kStride + t.ox;
        const double cy = (ay + 0.5) * Backbone::kStride + t.oy;
        anchors.emplace_back(cx - t.w / 2, cy - t.h / 2, cx + t.w / 2, cy + t.h / 2);
      }
  return anchors;
}

namespace {

struct Delta {
  double dx, dy, dw, dh;
};

Delta encode_delta(const Box& anchor, const Box& target) {
  return {(target.cx() - anchor.cx()) / anchor.width(),
          (target.cy() - anchor.cy()) / anchor.height(),
          std::log(target.width() / anchor.width()),
          std::log(target.height() / anchor.height())};
}

// Decoded corners prior to clipping; may be degenerate.
struct RawBox {
  double x1, y1, x2, y2;
};

RawBox decode_delta(const Box& anchor, const Delta& d) {
  const double dw = std::clamp(d.dw, -4.0, 4.0);
  const double dh = std::clamp(d.dh, -4.0, 4.0);
  const double cx = anchor.cx() + d.dx * anchor.width();
  const double cy = anchor.cy() + d.dy * anchor.height();
  const double w = anchor.width() * std::exp(dw);
  const double h = anchor.height() * std::exp(dh);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

double smooth_l1(double diff) {
  const double a = std::abs(diff);
  return a < 1.0 ? 0.5 * diff * diff : a - 0.5;
}

double smooth_l1_grad(double diff) {
  if (diff > 1.0) return 1.0;
  if (diff < -1.0) return -1.0;
  return diff;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// numerically safe BCE-with-logits
double bce_logit(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

int anchors_per_cell(const DetectorConfig& cfg) {
  int n = 0;
  for (double size : cfg.anchor_sizes)
    n += (size < cfg.anchor_densify_below ? 4 : 1) * static_cast<int>(cfg.anchor_aspects.size());
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// State assembly
// ---------------------------------------------------------------------------

int DetectorState::row_of_class(int class_id) const {
  for (size_t i = 0; i < class_ids.size(); ++i)
    if (class_ids[i] == class_id) return static_cast<int>(i);
  return -1;
}

void DetectorState::visit_params(
    const std::function<void(const std::string&, Component, ParamTensor&)>& fn) {
  fn("backbone.c1.w", Component::kBackbone, backbone.c1.w);
  fn("backbone.c1.b", Component::kBackbone, backbone.c1.b);
  fn("backbone.c2.w", Component::kBackbone, backbone.c2.w);
  fn("backbone.c2.b", Component::kBackbone, backbone.c2.b);
  fn("backbone.c3.w", Component::kBackbone, backbone.c3.w);
  fn("backbone.c3.b", Component::kBackbone, backbone.c3.b);
  fn("backbone.c4.w", Component::kBackbone, backbone.c4.w);
  fn("backbone.c4.b", Component::kBackbone, backbone.c4.b);
  fn("rpn.conv.w", Component::kRpn, rpn.conv.w);
  fn("rpn.conv.b", Component::kRpn, rpn.conv.b);
  fn("rpn.obj.w", Component::kRpn, rpn.obj.w);
  fn("rpn.obj.b", Component::kRpn, rpn.obj.b);
  fn("rpn.delta.w", Component::kRpn, rpn.delta.w);
  fn("rpn.delta.b", Component::kRpn, rpn.delta.b);
  fn("roi.fc1.w", Component::kRoiFeature, roi_fc1.w);
  fn("roi.fc1.b", Component::kRoiFeature, roi_fc1.b);
  fn("roi.fc2.w", Component::kRoiFeature, roi_fc2.w);
  fn("roi.fc2.b", Component::kRoiFeature, roi_fc2.b);
  fn("cls.w", Component::kBoxPredictors, classifier.w);
  fn("reg.w", Component::kBoxPredictors, box_reg.w);
  fn("reg.b", Component::kBoxPredictors, box_reg.b);
  if (has_contrastive) {
    fn("con.w", Component::kContrastiveHead, con.proj.w);
    fn("con.b", Component::kContrastiveHead, con.proj.b);
  }
}

DetectorState init_detector(const DetectorConfig& cfg, const std::vector<int>& class_ids,
                            uint64_t seed) {
  cfg.validate();
  if (class_ids.empty()) throw std::invalid_argument("init_detector: no classes");

  DetectorState st;
  st.cfg = cfg;
  st.stage = Stage::kBase;
  st.seed = seed;
  st.class_ids = class_ids;

  Rng root(seed);
  st.backbone.init(root.fork(1));
  st.rpn = RpnHead(Backbone::kOutChannels, anchors_per_cell(cfg));
  st.rpn.init(root.fork(2));

  const int pooled = Backbone::kOutChannels * cfg.roi_pool * cfg.roi_pool;
  st.roi_fc1 = Linear(pooled, cfg.d_r);
  Rng r3 = root.fork(3);
  st.roi_fc1.init(r3, std::sqrt(2.0 / pooled));
  st.roi_fc2 = Linear(cfg.d_r, cfg.d_r);
  Rng r3b = root.fork(6);
  st.roi_fc2.init(r3b, std::sqrt(2.0 / cfg.d_r));

  st.classifier = CosineClassifier(static_cast<int>(class_ids.size()) + 1, cfg.d_r,
                                   static_cast<float>(cfg.alpha));
  Rng r4 = root.fork(4);
  st.classifier.init(r4);

  st.box_reg = Linear(cfg.d_r, 4);
  Rng r5 = root.fork(5);
  st.box_reg.init(r5, 0.01);

  st.has_contrastive = false;
  return st;
}

// ---------------------------------------------------------------------------
// RoI pooling (bilinear, one sample per bin center)
// ---------------------------------------------------------------------------

namespace {

struct BinSample {
  int x0, y0, x1, y1;
  double w00, w01, w10, w11;
};

BinSample bin_sample(const FeatureMap& f, double px, double py) {
  // continuous coords relative to cell centers
  const double gx = std::clamp(px - 0.5, 0.0, static_cast<double>(f.w - 1));
  const double gy = std::clamp(py - 0.5, 0.0, static_cast<double>(f.h - 1));
  BinSample s;
  s.x0 = static_cast<int>(std::floor(gx));
  s.y0 = static_cast<int>(std::floor(gy));
  s.x1 = std::min(s.x0 + 1, f.w - 1);
  s.y1 = std::min(s.y0 + 1, f.h - 1);
  const double fx = gx - s.x0, fy = gy - s.y0;
  s.w00 = (1 - fx) * (1 - fy);
  s.w01 = fx * (1 - fy);
  s.w10 = (1 - fx) * fy;
  s.w11 = fx * fy;
  return s;
}

void roi_pool_forward(const FeatureMap& f, const Box& box, int pool, std::vector<float>& out) {
  const double s = Backbone::kStride;
  const double fx1 = box.x1 / s, fy1 = box.y1 / s;
  const double fw = box.width() / s, fh = box.height() / s;
  out.assign(static_cast<size_t>(f.c) * pool * pool, 0.f);
  for (int by = 0; by < pool; ++by)
    for (int bx = 0; bx < pool; ++bx) {
      const BinSample bs =
          bin_sample(f, fx1 + (bx + 0.5) * fw / pool, fy1 + (by + 0.5) * fh / pool);
      for (int c = 0; c < f.c; ++c) {
        const double v = bs.w00 * f.at(c, bs.y0, bs.x0) + bs.w01 * f.at(c, bs.y0, bs.x1) +
                         bs.w10 * f.at(c, bs.y1, bs.x0) + bs.w11 * f.at(c, bs.y1, bs.x1);
        out[(static_cast<size_t>(c) * pool + by) * pool + bx] = static_cast<float>(v);
      }
    }
}

void roi_pool_backward(FeatureMap& df, const Box& box, int pool, const std::vector<float>& dout) {
  const double s = Backbone::kStride;
  const double fx1 = box.x1 / s, fy1 = box.y1 / s;
  const double fw = box.width() / s, fh = box.height() / s;
  for (int by = 0; by < pool; ++by)
    for (int bx = 0; bx < pool; ++bx) {
      const BinSample bs =
          bin_sample(df, fx1 + (bx + 0.5) * fw / pool, fy1 + (by + 0.5) * fh / pool);
      for (int c = 0; c < df.c; ++c) {
        const float d = dout[(static_cast<size_t>(c) * pool + by) * pool + bx];
        if (d == 0.f) continue;
        df.at(c, bs.y0, bs.x0) += static_cast<float>(bs.w00 * d);
        df.at(c, bs.y0, bs.x1) += static_cast<float>(bs.w01 * d);
        df.at(c, bs.y1, bs.x0) += static_cast<float>(bs.w10 * d);
        df.at(c, bs.y1, bs.x1) += static_cast<float>(bs.w11 * d);
      }
    }
}

}  // namespace

std::vector<float> roi_feature(const DetectorState& state, const Backbone::Ctx& bb,
                               const Box& proposal) {
  std::vector<float> pooled;
  roi_pool_forward(bb.a4, proposal, state.cfg.roi_pool, pooled);
  std::vector<float> h1(state.cfg.d_r);
  state.roi_fc1.forward(pooled.data(), h1.data());
  for (auto& v : h1)
    if (v < 0.f) v = 0.f;
  std::vector<float> x(state.cfg.d_r);
  state.roi_fc2.forward(h1.data(), x.data());
  for (auto& v : x)
    if (v < 0.f) v = 0.f;
  return x;
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

std::vector<Box> rpn_proposals(const DetectorState& state, const DetectorConfig& cfg,
                               const Backbone::Ctx& bb, const RpnHead::Ctx& rp) {
  const auto anchors = make_anchors(cfg);
  const int A = anchors_per_cell(cfg);
  const int fm = bb.a4.h;

  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(anchors.size());
  scores.reserve(anchors.size());
  for (size_t i = 0; i < anchors.size(); ++i) {
    const int cell = static_cast<int>(i) / A;
    const int k = static_cast<int>(i) % A;
    const int ay = cell / fm, ax = cell % fm;
    const Delta d{rp.delta_map.at(4 * k + 0, ay, ax), rp.delta_map.at(4 * k + 1, ay, ax),
                  rp.delta_map.at(4 * k + 2, ay, ax), rp.delta_map.at(4 * k + 3, ay, ax)};
    RawBox rb = decode_delta(anchors[i], d);
    rb.x1 = std::clamp(rb.x1, 0.0, static_cast<double>(cfg.image_size));
    rb.y1 = std::clamp(rb.y1, 0.0, static_cast<double>(cfg.image_size));
    rb.x2 = std::clamp(rb.x2, 0.0, static_cast<double>(cfg.image_size));
    rb.y2 = std::clamp(rb.y2, 0.0, static_cast<double>(cfg.image_size));
    if (rb.x2 - rb.x1 < 1.0 || rb.y2 - rb.y1 < 1.0) continue;
    boxes.emplace_back(rb.x1, rb.y1, rb.x2, rb.y2);
    scores.push_back(rp.obj_map.at(k, ay, ax));
  }

  // top-k before NMS
  if (static_cast<int>(boxes.size()) > cfg.rpn_pre_nms) {
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    order.resize(cfg.rpn_pre_nms);
    std::vector<Box> b2;
    std::vector<double> s2;
    for (int idx : order) {
      b2.push_back(boxes[idx]);
      s2.push_back(scores[idx]);
    }
    boxes = std::move(b2);
    scores = std::move(s2);
  }

  const auto keep = nms(boxes, scores, cfg.rpn_nms_threshold, cfg.rpn_post_nms_cap);
  std::vector<Box> out;
  out.reserve(keep.size());
  for (int idx : keep) out.push_back(boxes[idx]);
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct RpnTargets {
  std::vector<int> label;       // 1 fg, 0 bg, -1 ignore
  std::vector<int> matched_gt;  // argmax gt per anchor
  std::vector<int> sampled;     // anchor indices in the loss
};

RpnTargets assign_rpn_targets(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                              const DetectorConfig& cfg, Rng* sampler) {
  RpnTargets t;
  const int n = static_cast<int>(anchors.size());
  t.label.assign(n, -1);
  t.matched_gt.assign(n, -1);
  if (gts.empty()) {
    for (int i = 0; i < n; ++i) t.label[i] = 0;
  } else {
    std::vector<double> best_gt_iou(gts.size(), 0.0);
    for (int i = 0; i < n; ++i) {
      double best = 0.0;
      int arg = -1;
      for (size_t g = 0; g < gts.size(); ++g) {
        const double v = iou(anchors[i], gts[g]);
        if (v > best) {
          best = v;
          arg = static_cast<int>(g);
        }
        best_gt_iou[g] = std::max(best_gt_iou[g], v);
      }
      t.matched_gt[i] = arg;
      if (best >= cfg.rpn_pos_iou) t.label[i] = 1;
      else if (best < cfg.rpn_neg_iou) t.label[i] = 0;
    }
    // rescue: every gt keeps its best-overlapping anchors positive
    for (size_t g = 0; g < gts.size(); ++g) {
      if (best_gt_iou[g] <= 0.0) continue;
      for (int i = 0; i < n; ++i)
        if (iou(anchors[i], gts[g]) == best_gt_iou[g]) {
          t.label[i] = 1;
          t.matched_gt[i] = static_cast<int>(g);
        }
    }
  }

  std::vector<int> pos, neg;
  for (int i = 0; i < n; ++i) {
    if (t.label[i] == 1) pos.push_back(i);
    else if (t.label[i] == 0) neg.push_back(i);
  }
  const int want_pos = static_cast<int>(std::round(cfg.rpn_batch_size * cfg.rpn_fg_fraction));
  if (sampler) {
    sampler->shuffle(pos);
    sampler->shuffle(neg);
  }
  const int npos = std::min<int>(want_pos, static_cast<int>(pos.size()));
  const int nneg = std::min<int>(cfg.rpn_batch_size - npos, static_cast<int>(neg.size()));
  t.sampled.assign(pos.begin(), pos.begin() + npos);
  t.sampled.insert(t.sampled.end(), neg.begin(), neg.begin() + nneg);
  std::sort(t.sampled.begin(), t.sampled.end());
  return t;
}

struct RoiSample {
  Box box;
  int row;          // classifier row (background_row for bg)
  int matched_gt;   // -1 for bg
  double iou_u;
  int global_class; // dataset class id, -1 for bg
};

struct ImageCtx {
  int record_index = 0;
  Backbone::Ctx bb;
  RpnHead::Ctx rp;
  std::vector<Box> gt_boxes;
  std::vector<int> gt_rows;      // classifier rows of the gts
  std::vector<int> gt_classes;   // dataset ids
  RpnTargets rpn_t;
  std::vector<Box> anchors;
  std::vector<RoiSample> rois;
  // forward caches per roi
  std::vector<std::vector<float>> pooled, h1, x, z;
  // backward staging per roi
  std::vector<std::vector<double>> dlogits;
  std::vector<std::array<double, 4>> dreg;
  std::vector<std::vector<float>> dz;
};

// losses accumulated over one step
struct StepAccum {
  double rpn_obj = 0.0, rpn_reg = 0.0;
  int rpn_count = 0;
  double roi_cls = 0.0, roi_reg = 0.0;
  int roi_count = 0;
};

}  // namespace

namespace {

// One optimization step over a set of images. Returns the component losses.
StepLoss train_step(DetectorState& st, const DetectionDataset& data,
                    const std::vector<int>& image_indices, const CpeConfig* cpe, Rng& sampler,
                    double lr_scale) {
  const DetectorConfig& cfg = st.cfg;
  const bool use_cpe = cpe != nullptr && cpe->lambda > 0.0 && st.has_contrastive;

  st.visit_params([](const std::string&, Component, ParamTensor& p) { p.zero_grad(); });

  std::vector<ImageCtx> ctxs(image_indices.size());
  StepAccum acc;

  // ---- phase 1: forward ----
  for (size_t ii = 0; ii < image_indices.size(); ++ii) {
    ImageCtx& ic = ctxs[ii];
    ic.record_index = image_indices[ii];
    const ImageRecord& rec = data.records[ic.record_index];
    st.backbone.forward(rec.image, ic.bb);
    st.rpn.forward(ic.bb.a4, ic.rp);

    for (const auto& ann : rec.anns) {
      const int row = st.row_of_class(ann.class_id);
      if (row < 0) continue;  // class unknown to this detector stage
      ic.gt_boxes.push_back(ann.box);
      ic.gt_rows.push_back(row);
      ic.gt_classes.push_back(ann.class_id);
    }

    ic.anchors = make_anchors(cfg);
    ic.rpn_t = assign_rpn_targets(ic.anchors, ic.gt_boxes, cfg, &sampler);

    auto proposals = rpn_proposals(st, cfg, ic.bb, ic.rp);
    if (cfg.add_gt_proposals)
      proposals.insert(proposals.end(), ic.gt_boxes.begin(), ic.gt_boxes.end());

    std::vector<int> gt_ids(ic.gt_boxes.size());
    std::iota(gt_ids.begin(), gt_ids.end(), 0);
    const auto matches =
        match_proposals(proposals, ic.gt_boxes, gt_ids, cfg.fg_iou_threshold);

    std::vector<int> fg, bg;
    for (size_t p = 0; p < proposals.size(); ++p) {
      if (matches[p].label_y != kBackground) fg.push_back(static_cast<int>(p));
      else bg.push_back(static_cast<int>(p));
    }
    sampler.shuffle(fg);
    sampler.shuffle(bg);
    const int fg_cap = static_cast<int>(std::round(cfg.roi_batch_size * cfg.roi_fg_fraction));
    const int nfg = std::min<int>(fg_cap, static_cast<int>(fg.size()));
    const int nbg = std::min<int>(cfg.roi_batch_size - nfg, static_cast<int>(bg.size()));

    for (int s = 0; s < nfg + nbg; ++s) {
      const int p = s < nfg ? fg[s] : bg[s - nfg];
      RoiSample roi{proposals[p], st.background_row(), -1, matches[p].iou_u, -1};
      if (matches[p].label_y != kBackground) {
        roi.matched_gt = matches[p].matched_gt_index;
        roi.row = ic.gt_rows[roi.matched_gt];
        roi.global_class = ic.gt_classes[roi.matched_gt];
      }
      ic.rois.push_back(roi);
    }

    for (const auto& roi : ic.rois) {
      std::vector<float> pooled;
      roi_pool_forward(ic.bb.a4, roi.box, cfg.roi_pool, pooled);
      std::vector<float> h1(cfg.d_r);
      st.roi_fc1.forward(pooled.data(), h1.data());
      for (auto& v : h1)
        if (v < 0.f) v = 0.f;
      std::vector<float> x(cfg.d_r);
      st.roi_fc2.forward(h1.data(), x.data());
      for (auto& v : x)
        if (v < 0.f) v = 0.f;
      ic.pooled.push_back(std::move(pooled));
      ic.h1.push_back(std::move(h1));
      if (use_cpe && roi.global_class >= 0) ic.z.push_back(st.con.encode(x));
      else ic.z.push_back({});
      ic.x.push_back(std::move(x));
    }
    acc.roi_count += static_cast<int>(ic.rois.size());
    acc.rpn_count += static_cast<int>(ic.rpn_t.sampled.size());
  }

  if (acc.roi_count == 0 || acc.rpn_count == 0)
    throw std::runtime_error("train_step: no usable proposals/anchors; dataset degenerate");

  // ---- losses + local gradients ----
  const int A = anchors_per_cell(cfg);
  const int fm = cfg.image_size / Backbone::kStride;
  (void)fm;

  // CPE batch assembled across the step's images
  std::vector<ProposalRecord> cpe_batch;
  std::vector<std::pair<int, int>> cpe_src;  // (image, roi)
  if (use_cpe) {
    for (size_t ii = 0; ii < ctxs.size(); ++ii)
      for (size_t r = 0; r < ctxs[ii].rois.size(); ++r)
        if (ctxs[ii].rois[r].global_class >= 0) {
          ProposalRecord rec;
          rec.z.assign(ctxs[ii].z[r].begin(), ctxs[ii].z[r].end());
          rec.u = ctxs[ii].rois[r].iou_u;
          rec.y = ctxs[ii].rois[r].global_class;
          cpe_batch.push_back(std::move(rec));
          cpe_src.push_back({static_cast<int>(ii), static_cast<int>(r)});
        }
  }

  double l_cpe = 0.0;
  std::vector<std::vector<double>> dz_cpe;
  if (use_cpe && !cpe_batch.empty()) l_cpe = cpe_loss_with_grad(cpe_batch, *cpe, &dz_cpe);

  for (size_t ii = 0; ii < ctxs.size(); ++ii) {
    ImageCtx& ic = ctxs[ii];
    ic.dlogits.resize(ic.rois.size());
    ic.dreg.resize(ic.rois.size());
    ic.dz.assign(ic.rois.size(), {});
    for (size_t r = 0; r < ic.rois.size(); ++r) {
      const auto logits = st.classifier.logits(ic.x[r]);
      // cross-entropy over cosine logits
      double mx = -std::numeric_limits<double>::infinity();
      for (double v : logits) mx = std::max(mx, v);
      double se = 0.0;
      for (double v : logits) se += std::exp(v - mx);
      const int target = ic.rois[r].row;
      acc.roi_cls += (mx + std::log(se)) - logits[target];
      ic.dlogits[r].resize(logits.size());
      for (size_t j = 0; j < logits.size(); ++j) {
        const double p = std::exp(logits[j] - mx) / se;
        ic.dlogits[r][j] = (p - (static_cast<int>(j) == target ? 1.0 : 0.0)) / acc.roi_count;
      }
      // class-agnostic box regression for foreground rois
      ic.dreg[r] = {0, 0, 0, 0};
      if (ic.rois[r].matched_gt >= 0) {
        float pred[4];
        st.box_reg.forward(ic.x[r].data(), pred);
        const Delta tgt = encode_delta(ic.rois[r].box, ic.gt_boxes[ic.rois[r].matched_gt]);
        const double t4[4] = {tgt.dx, tgt.dy, tgt.dw, tgt.dh};
        for (int k = 0; k < 4; ++k) {
          const double diff = pred[k] - t4[k];
          acc.roi_reg += smooth_l1(diff);
          ic.dreg[r][k] = smooth_l1_grad(diff) / acc.roi_count;
        }
      }
    }
  }

  // distribute CPE gradients (scaled by lambda) back to their rois
  if (use_cpe)
    for (size_t b = 0; b < cpe_src.size(); ++b) {
      auto& ic = ctxs[cpe_src[b].first];
      const int r = cpe_src[b].second;
      std::vector<float> g(dz_cpe[b].size());
      for (size_t d = 0; d < g.size(); ++d)
        g[d] = static_cast<float>(cpe->lambda * dz_cpe[b][d]);
      ic.dz[r] = std::move(g);
    }

  // RPN losses
  for (auto& ic : ctxs) {
    for (int a : ic.rpn_t.sampled) {
      const int cell = a / A, k = a % A;
      const int ay = cell / ic.rp.obj_map.w, ax = cell % ic.rp.obj_map.w;
      const double logit = ic.rp.obj_map.at(k, ay, ax);
      const double target = ic.rpn_t.label[a] == 1 ? 1.0 : 0.0;
      acc.rpn_obj += bce_logit(logit, target);
      if (ic.rpn_t.label[a] == 1) {
        const Delta tgt = encode_delta(ic.anchors[a], ic.gt_boxes[ic.rpn_t.matched_gt[a]]);
        const double t4[4] = {tgt.dx, tgt.dy, tgt.dw, tgt.dh};
        for (int c = 0; c < 4; ++c) {
          const double diff = ic.rp.delta_map.at(4 * k + c, ay, ax) - t4[c];
          acc.rpn_reg += smooth_l1(diff);
        }
      }
    }
  }

  const double l_rpn = (acc.rpn_obj + acc.rpn_reg) / acc.rpn_count;
  const double l_cls = acc.roi_cls / acc.roi_count;
  const double l_reg = acc.roi_reg / acc.roi_count;
  const double lambda = use_cpe ? cpe->lambda : (cpe ? cpe->lambda : 0.0);
  const double total = total_finetune_loss(l_rpn, l_cls, l_reg, l_cpe, lambda);

  // ---- phase 2: backward ----
  const bool backbone_frozen = cfg.is_frozen(Component::kBackbone);
  for (auto& ic : ctxs) {
    FeatureMap df(ic.bb.a4.c, ic.bb.a4.h, ic.bb.a4.w);

    // RoI branches
    for (size_t r = 0; r < ic.rois.size(); ++r) {
      std::vector<float> dx(cfg.d_r, 0.f);
      std::vector<float> tmp;
      st.classifier.backward(ic.x[r], ic.dlogits[r], &tmp);
      for (int d = 0; d < cfg.d_r; ++d) dx[d] += tmp[d];
      if (ic.rois[r].matched_gt >= 0) {
        float dy[4];
        for (int k = 0; k < 4; ++k) dy[k] = static_cast<float>(ic.dreg[r][k]);
        std::vector<float> dxr(cfg.d_r);
        st.box_reg.backward(ic.x[r].data(), dy, dxr.data());
        for (int d = 0; d < cfg.d_r; ++d) dx[d] += dxr[d];
      }
      if (!ic.dz[r].empty()) {
        std::vector<float> dxc(cfg.d_r);
        st.con.proj.backward(ic.x[r].data(), ic.dz[r].data(), dxc.data());
        for (int d = 0; d < cfg.d_r; ++d) dx[d] += dxc[d];
      }
      // relu mask on x, then fc2 / fc1 / pooling
      for (int d = 0; d < cfg.d_r; ++d)
        if (ic.x[r][d] == 0.f) dx[d] = 0.f;
      std::vector<float> dh1(cfg.d_r);
      st.roi_fc2.backward(ic.h1[r].data(), dx.data(), dh1.data());
      for (int d = 0; d < cfg.d_r; ++d)
        if (ic.h1[r][d] == 0.f) dh1[d] = 0.f;
      std::vector<float> dpooled(ic.pooled[r].size());
      st.roi_fc1.backward(ic.pooled[r].data(), dh1.data(), dpooled.data());
      roi_pool_backward(df, ic.rois[r].box, cfg.roi_pool, dpooled);
    }

    // RPN maps
    FeatureMap dobj(ic.rp.obj_map.c, ic.rp.obj_map.h, ic.rp.obj_map.w);
    FeatureMap ddelta(ic.rp.delta_map.c, ic.rp.delta_map.h, ic.rp.delta_map.w);
    for (int a : ic.rpn_t.sampled) {
      const int cell = a / A, k = a % A;
      const int ay = cell / dobj.w, ax = cell % dobj.w;
      const double target = ic.rpn_t.label[a] == 1 ? 1.0 : 0.0;
      dobj.at(k, ay, ax) = static_cast<float>(
          (sigmoid(ic.rp.obj_map.at(k, ay, ax)) - target) / acc.rpn_count);
      if (ic.rpn_t.label[a] == 1) {
        const Delta tgt = encode_delta(ic.anchors[a], ic.gt_boxes[ic.rpn_t.matched_gt[a]]);
        const double t4[4] = {tgt.dx, tgt.dy, tgt.dw, tgt.dh};
        for (int c = 0; c < 4; ++c) {
          const double diff = ic.rp.delta_map.at(4 * k + c, ay, ax) - t4[c];
          ddelta.at(4 * k + c, ay, ax) =
              static_cast<float>(smooth_l1_grad(diff) / acc.rpn_count);
        }
      }
    }
    st.rpn.backward(ic.bb.a4, ic.rp, dobj, ddelta, backbone_frozen ? nullptr : &df);

    if (!backbone_frozen) st.backbone.backward(ic.bb, std::move(df));
  }

  // ---- phase 3: update ----
  SgdConfig sgd{cfg.lr * lr_scale, cfg.momentum, cfg.weight_decay};
  st.visit_params([&](const std::string& name, Component comp, ParamTensor& p) {
    if (cfg.is_frozen(comp)) return;
    const bool decay = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") != 0;
    sgd_step(p, sgd, decay);
  });

  StepLoss out;
  out.rpn = l_rpn;
  out.cls = l_cls;
  out.reg = l_reg;
  out.cpe = l_cpe;
  out.total = total;
  return out;
}

TrainResult run_training(DetectorState st, const DetectionDataset& data, const CpeConfig* cpe,
                         uint64_t seed) {
  if (data.records.empty()) throw std::invalid_argument("training dataset is empty");
  TrainResult res;
  Rng sampler = Rng(seed).fork(0xf5ce);
  for (int step = 0; step < st.cfg.steps; ++step) {
    std::vector<int> idx(st.cfg.images_per_step);
    for (auto& i : idx) i = sampler.uniform_int(0, static_cast<int>(data.records.size()) - 1);
    const bool cooled = 5 * step >= 4 * st.cfg.steps;  // last fifth
    res.losses.push_back(
        train_step(st, data, idx, cpe, sampler, cooled ? st.cfg.lr_final_scale : 1.0));
  }
  res.state = std::move(st);
  return res;
}

}  // namespace

TrainResult train_base(const DetectionDataset& base_data, const DetectorConfig& cfg,
                       uint64_t seed) {
  cfg.validate();
  if (base_data.records.empty()) throw std::invalid_argument("train_base: empty dataset");
  for (const auto& rec : base_data.records)
    for (const auto& ann : rec.anns)
      if (base_data.classes.is_novel(ann.class_id))
        throw std::invalid_argument("train_base: dataset contains novel-class annotations");

  // classifier rows = classes that actually appear (registry base classes)
  std::vector<int> class_ids;
  if (!base_data.classes.novel_ids.empty()) {
    class_ids = base_data.classes.base_ids();
  } else {
    std::set<int> seen;
    for (const auto& rec : base_data.records)
      for (const auto& ann : rec.anns) seen.insert(ann.class_id);
    class_ids.assign(seen.begin(), seen.end());
  }

  DetectorState st = init_detector(cfg, class_ids, seed);
  st.stage = Stage::kBase;
  auto res = run_training(std::move(st), base_data, nullptr, seed);
  res.state.stage = Stage::kBase;
  return res;
}

TrainResult fine_tune(const DetectorState& base_state, const DetectionDataset& balanced_set,
                      const DetectorConfig& cfg, const CpeConfig& cpe, uint64_t seed) {
  cfg.validate();
  if (base_state.stage != Stage::kBase)
    throw std::invalid_argument("fine_tune: expected a base-stage state");
  if (!cfg.is_frozen(Component::kBackbone))
    throw std::invalid_argument("fine_tune: config must freeze the backbone");
  if (balanced_set.records.empty()) throw std::invalid_argument("fine_tune: empty dataset");
  if (cpe.lambda > 0.0) cpe.validate();

  DetectorState st;
  st.cfg = cfg;
  st.cfg.d_r = base_state.cfg.d_r;  // feature geometry is fixed by the base net
  st.cfg.roi_pool = base_state.cfg.roi_pool;
  st.cfg.image_size = base_state.cfg.image_size;
  st.cfg.anchor_sizes = base_state.cfg.anchor_sizes;
  st.cfg.anchor_aspects = base_state.cfg.anchor_aspects;
  st.stage = Stage::kFinetune;
  st.seed = seed;

  st.backbone = base_state.backbone;
  st.rpn = base_state.rpn;
  st.roi_fc1 = base_state.roi_fc1;
  st.roi_fc2 = base_state.roi_fc2;
  st.box_reg = base_state.box_reg;

  // classifier rows: base classes carried over, novel classes appended
  std::vector<int> novel;
  for (int id : balanced_set.classes.novel_ids)
    if (base_state.row_of_class(id) < 0) novel.push_back(id);
  st.class_ids = base_state.class_ids;
  st.class_ids.insert(st.class_ids.end(), novel.begin(), novel.end());

  Rng root(seed);
  st.classifier = CosineClassifier(static_cast<int>(st.class_ids.size()) + 1,
                                   st.cfg.d_r, static_cast<float>(st.cfg.alpha));
  Rng rproto = root.fork(11);
  st.classifier.init(rproto);  // novel rows keep this random unit-scale init
  const int nb = static_cast<int>(base_state.class_ids.size());
  for (int r = 0; r < nb; ++r)
    std::copy(base_state.classifier.prototype(r), base_state.classifier.prototype(r) + st.cfg.d_r,
              &st.classifier.w.v[static_cast<size_t>(r) * st.cfg.d_r]);
  // background prototype carried over from the base stage
  std::copy(base_state.classifier.prototype(nb), base_state.classifier.prototype(nb) + st.cfg.d_r,
            &st.classifier.w.v[static_cast<size_t>(st.background_row()) * st.cfg.d_r]);

  st.con = ContrastiveHead(st.cfg.d_r, st.cfg.d_c);
  Rng rcon = root.fork(12);
  st.con.init(rcon);
  st.has_contrastive = true;

  // momentum buffers start clean in the new stage
  st.visit_params([](const std::string&, Component, ParamTensor& p) {
    std::fill(p.m.begin(), p.m.end(), 0.f);
  });

  auto res = run_training(std::move(st), balanced_set, &cpe, seed);
  res.state.stage = Stage::kFinetune;
  return res;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::vector<Detection> detect(const GrayImage& image, const DetectorState& state,
                              double score_threshold, double nms_threshold) {
  const DetectorConfig& cfg = state.cfg;
  if (image.width != cfg.image_size || image.height != cfg.image_size)
    throw std::invalid_argument("detect: image size " + std::to_string(image.width) + "x" +
                                std::to_string(image.height) + " does not match configured " +
                                std::to_string(cfg.image_size));

  Backbone::Ctx bb;
  state.backbone.forward(image, bb);
  RpnHead::Ctx rp;
  state.rpn.forward(bb.a4, rp);
  const auto proposals = rpn_proposals(state, cfg, bb, rp);

  struct Cand {
    Box box;
    int row;
    double score;
  };
  std::vector<Cand> cands;
  for (const auto& prop : proposals) {
    const auto x = roi_feature(state, bb, prop);
    float xsum = 0.f;
    for (float v : x) xsum += std::abs(v);
    if (xsum <= 0.f) continue;  // dead feature, nothing to classify
    const auto logits = state.classifier.logits(x);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : logits) se += std::exp(v - mx);

    float d4[4];
    state.box_reg.forward(x.data(), d4);
    RawBox rb = decode_delta(prop, {d4[0], d4[1], d4[2], d4[3]});
    rb.x1 = std::clamp(rb.x1, 0.0, static_cast<double>(cfg.image_size));
    rb.y1 = std::clamp(rb.y1, 0.0, static_cast<double>(cfg.image_size));
    rb.x2 = std::clamp(rb.x2, 0.0, static_cast<double>(cfg.image_size));
    rb.y2 = std::clamp(rb.y2, 0.0, static_cast<double>(cfg.image_size));
    if (rb.x2 - rb.x1 < 1.0 || rb.y2 - rb.y1 < 1.0) continue;
    const Box refined(rb.x1, rb.y1, rb.x2, rb.y2);

    for (int row = 0; row < static_cast<int>(state.class_ids.size()); ++row) {
      const double p = std::exp(logits[row] - mx) / se;
      if (p >= score_threshold) cands.push_back({refined, row, p});
    }
  }

  // class-wise NMS
  std::vector<Detection> dets;
  for (int row = 0; row < static_cast<int>(state.class_ids.size()); ++row) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const auto& c : cands)
      if (c.row == row) {
        boxes.push_back(c.box);
        scores.push_back(c.score);
      }
    for (int keep : nms(boxes, scores, nms_threshold, -1))
      dets.push_back({boxes[keep], state.class_ids[row], scores[keep]});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(dets.size()) > cfg.max_detections)
    dets.erase(dets.begin() + cfg.max_detections, dets.end());
  return dets;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

RpnRoiStats collect_stats(const DetectorState& state, const DetectionDataset& dataset,
                          const DetectorConfig& cfg) {
  RpnRoiStats s;
  if (dataset.records.empty()) return s;

  const auto anchors = make_anchors(cfg);
  const int A = anchors_per_cell(cfg);
  long pos_anchors = 0, fg_props = 0;
  double rpn_obj = 0.0, rpn_reg = 0.0, roi_cls = 0.0, roi_reg = 0.0;
  long rpn_terms = 0, rpn_pos_terms = 0, roi_terms = 0, roi_fg_terms = 0;

  for (const auto& rec : dataset.records) {
    Backbone::Ctx bb;
    state.backbone.forward(rec.image, bb);
    RpnHead::Ctx rp;
    state.rpn.forward(bb.a4, rp);

    std::vector<Box> gts;
    std::vector<int> rows;
    for (const auto& ann : rec.anns) {
      const int row = state.row_of_class(ann.class_id);
      if (row < 0) continue;
      gts.push_back(ann.box);
      rows.push_back(row);
    }

    const auto t = assign_rpn_targets(anchors, gts, cfg, nullptr);
    for (size_t a = 0; a < anchors.size(); ++a) {
      if (t.label[a] < 0) continue;
      const int cell = static_cast<int>(a) / A, k = static_cast<int>(a) % A;
      const int ay = cell / rp.obj_map.w, ax = cell % rp.obj_map.w;
      rpn_obj += bce_logit(rp.obj_map.at(k, ay, ax), t.label[a] == 1 ? 1.0 : 0.0);
      ++rpn_terms;
      if (t.label[a] == 1) {
        ++pos_anchors;
        const Delta tgt = encode_delta(anchors[a], gts[t.matched_gt[a]]);
        const double t4[4] = {tgt.dx, tgt.dy, tgt.dw, tgt.dh};
        for (int c = 0; c < 4; ++c)
          rpn_reg += smooth_l1(rp.delta_map.at(4 * k + c, ay, ax) - t4[c]);
        ++rpn_pos_terms;
      }
    }

    const auto proposals = rpn_proposals(state, cfg, bb, rp);
    std::vector<int> gt_ids(gts.size());
    std::iota(gt_ids.begin(), gt_ids.end(), 0);
    const auto matches = match_proposals(proposals, gts, gt_ids, cfg.fg_iou_threshold);
    for (size_t p = 0; p < proposals.size(); ++p) {
      const bool fg = matches[p].label_y != kBackground;
      if (fg) ++fg_props;
      const auto x = roi_feature(state, bb, proposals[p]);
      float xsum = 0.f;
      for (float v : x) xsum += std::abs(v);
      if (xsum <= 0.f) continue;
      const auto logits = state.classifier.logits(x);
      double mx = -std::numeric_limits<double>::infinity();
      for (double v : logits) mx = std::max(mx, v);
      double se = 0.0;
      for (double v : logits) se += std::exp(v - mx);
      const int target = fg ? rows[matches[p].matched_gt_index] : state.background_row();
      roi_cls += (mx + std::log(se)) - logits[target];
      ++roi_terms;
      if (fg) {
        float d4[4];
        state.box_reg.forward(x.data(), d4);
        const Delta tgt = encode_delta(proposals[p], gts[matches[p].matched_gt_index]);
        const double t4[4] = {tgt.dx, tgt.dy, tgt.dw, tgt.dh};
        for (int c = 0; c < 4; ++c) roi_reg += smooth_l1(d4[c] - t4[c]);
        ++roi_fg_terms;
      }
    }
  }

  const double n = static_cast<double>(dataset.records.size());
  s.images = static_cast<int>(dataset.records.size());
  s.mean_positive_anchors = pos_anchors / n;
  s.mean_fg_proposals = fg_props / n;
  s.rpn_objectness_loss = rpn_terms ? rpn_obj / rpn_terms : 0.0;
  s.rpn_box_loss = rpn_pos_terms ? rpn_reg / rpn_pos_terms : 0.0;
  s.roi_cls_loss = roi_terms ? roi_cls / roi_terms : 0.0;
  s.roi_box_loss = roi_fg_terms ? roi_reg / roi_fg_terms : 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

json config_to_json(const DetectorConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["anchor_sizes"] = c.anchor_sizes;
  j["anchor_aspects"] = c.anchor_aspects;
  j["anchor_densify_below"] = c.anchor_densify_below;
  j["d_r"] = c.d_r;
  j["d_c"] = c.d_c;
  j["alpha"] = c.alpha;
  j["roi_pool"] = c.roi_pool;
  j["rpn_pre_nms"] = c.rpn_pre_nms;
  j["rpn_post_nms_cap"] = c.rpn_post_nms_cap;
  j["rpn_nms_threshold"] = c.rpn_nms_threshold;
  j["rpn_pos_iou"] = c.rpn_pos_iou;
  j["rpn_neg_iou"] = c.rpn_neg_iou;
  j["rpn_batch_size"] = c.rpn_batch_size;
  j["rpn_fg_fraction"] = c.rpn_fg_fraction;
  j["roi_batch_size"] = c.roi_batch_size;
  j["roi_fg_fraction"] = c.roi_fg_fraction;
  j["fg_iou_threshold"] = c.fg_iou_threshold;
  j["add_gt_proposals"] = c.add_gt_proposals;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["lr_final_scale"] = c.lr_final_scale;
  j["steps"] = c.steps;
  j["images_per_step"] = c.images_per_step;
  j["score_threshold"] = c.score_threshold;
  j["nms_threshold"] = c.nms_threshold;
  j["max_detections"] = c.max_detections;
  std::vector<std::string> fr;
  for (auto comp : c.frozen) fr.push_back(to_string(comp));
  j["frozen"] = fr;
  return j;
}

DetectorConfig config_from_json(const json& j) {
  DetectorConfig c;
  c.image_size = j.at("image_size");
  c.anchor_sizes = j.at("anchor_sizes").get<std::vector<double>>();
  c.anchor_aspects = j.at("anchor_aspects").get<std::vector<double>>();
  c.anchor_densify_below = j.at("anchor_densify_below");
  c.d_r = j.at("d_r");
  c.d_c = j.at("d_c");
  c.alpha = j.at("alpha");
  c.roi_pool = j.at("roi_pool");
  c.rpn_pre_nms = j.at("rpn_pre_nms");
  c.rpn_post_nms_cap = j.at("rpn_post_nms_cap");
  c.rpn_nms_threshold = j.at("rpn_nms_threshold");
  c.rpn_pos_iou = j.at("rpn_pos_iou");
  c.rpn_neg_iou = j.at("rpn_neg_iou");
  c.rpn_batch_size = j.at("rpn_batch_size");
  c.rpn_fg_fraction = j.at("rpn_fg_fraction");
  c.roi_batch_size = j.at("roi_batch_size");
  c.roi_fg_fraction = j.at("roi_fg_fraction");
  c.fg_iou_threshold = j.at("fg_iou_threshold");
  c.add_gt_proposals = j.at("add_gt_proposals");
  c.lr = j.at("lr");
  c.momentum = j.at("momentum");
  c.weight_decay = j.at("weight_decay");
  c.lr_final_scale = j.at("lr_final_scale");
  c.steps = j.at("steps");
  c.images_per_step = j.at("images_per_step");
  c.score_threshold = j.at("score_threshold");
  c.nms_threshold = j.at("nms_threshold");
  c.max_detections = j.at("max_detections");
  for (const auto& s : j.at("frozen").get<std::vector<std::string>>())
    c.frozen.push_back(component_from_string(s));
  return c;
}

constexpr char kCkptMagic[8] = {'F', 'S', 'C', 'E', 'C', 'K', '0', '1'};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(DetectorState& state, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kCkptMagic, 8);
  put<uint32_t>(f, state.stage == Stage::kBase ? 0u : 1u);
  put<uint64_t>(f, state.seed);

  const std::string cfg_json = config_to_json(state.cfg).dump();
  put<uint32_t>(f, static_cast<uint32_t>(cfg_json.size()));
  f.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

  put<uint32_t>(f, static_cast<uint32_t>(state.class_ids.size()));
  for (int id : state.class_ids) put<int32_t>(f, id);

  uint32_t count = 0;
  state.visit_params([&](const std::string&, Component, ParamTensor&) { ++count; });
  put<uint32_t>(f, count);
  state.visit_params([&](const std::string& name, Component, ParamTensor& p) {
    put<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint32_t>(f, static_cast<uint32_t>(p.shape.size()));
    for (int d : p.shape) put<int32_t>(f, d);
    f.write(reinterpret_cast<const char*>(p.v.data()),
            static_cast<std::streamsize>(p.v.size() * sizeof(float)));
  });
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

DetectorState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const uint32_t stage = get<uint32_t>(f);
  const uint64_t seed = get<uint64_t>(f);
  const uint32_t jlen = get<uint32_t>(f);
  std::string cfg_json(jlen, '\0');
  f.read(cfg_json.data(), jlen);
  const DetectorConfig cfg = config_from_json(json::parse(cfg_json));

  const uint32_t ncls = get<uint32_t>(f);
  std::vector<int> class_ids(ncls);
  for (auto& id : class_ids) id = get<int32_t>(f);

  DetectorState st = init_detector(cfg, class_ids, seed);
  st.stage = stage == 0 ? Stage::kBase : Stage::kFinetune;

  const uint32_t count = get<uint32_t>(f);
  // read tensors into a name-indexed staging area
  std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = get<uint32_t>(f);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    const uint32_t ndim = get<uint32_t>(f);
    std::vector<int> shape(ndim);
    int64_t total = 1;
    for (auto& d : shape) {
      d = get<int32_t>(f);
      total *= d;
    }
    std::vector<float> data(total);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
    tensors[name] = {std::move(shape), std::move(data)};
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);

  if (tensors.count("con.w")) {
    st.con = ContrastiveHead(cfg.d_r, cfg.d_c);
    st.has_contrastive = true;
  }
  st.visit_params([&](const std::string& name, Component, ParamTensor& p) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw std::runtime_error("load_checkpoint: tensor missing from file: " + name);
    if (it->second.second.size() != p.v.size())
      throw std::runtime_error("load_checkpoint: tensor size mismatch for " + name);
    p.shape = it->second.first;
    p.v = it->second.second;
    std::fill(p.g.begin(), p.g.end(), 0.f);
    std::fill(p.m.begin(), p.m.end(), 0.f);
  });
  return st;
}

}  // namespace fsce

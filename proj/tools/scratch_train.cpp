// experiment driver, not part of the deliverable targets unless added to CMake
#include <chrono>
#include <cstdio>

#include "fsce/dataset.hpp"
#include "fsce/detector.hpp"
#include "fsce/evaluation.hpp"

using namespace fsce;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::atoi(argv[1]) : 800;
  const double lr = argc > 2 ? std::atof(argv[2]) : 0.01;
  const int images = argc > 3 ? std::atoi(argv[3]) : 200;

  GeneratorConfig gen;
  gen.num_images = images;
  gen.class_shapes = supported_shapes();
  gen.image_size = 64;
  const auto train_all = generate_synthetic(gen, 7);
  gen.num_images = 80;
  auto test_all = generate_synthetic(gen, 1234);

  const std::vector<int> novel = {4, 3};  // ring, cross
  const auto base_train = make_base_training_set(train_all, novel);
  auto base_test = make_base_training_set(test_all, novel);

  DetectorConfig cfg;
  cfg.steps = steps;
  cfg.lr = lr;
  cfg.images_per_step = 2;

  const auto t0 = std::chrono::steady_clock::now();
  auto res = train_base(base_train, cfg, 1);
  const auto t1 = std::chrono::steady_clock::now();
  const double sec = std::chrono::duration<double>(t1 - t0).count();

  std::printf("train %d steps in %.1fs (%.1f ms/step)\n", steps, sec, 1000 * sec / steps);
  for (int i = 0; i < steps; i += std::max(1, steps / 15)) {
    const auto& l = res.losses[i];
    std::printf("step %4d: total %.4f rpn %.4f cls %.4f reg %.4f\n", i, l.total, l.rpn, l.cls,
                l.reg);
  }
  const auto& last = res.losses.back();
  std::printf("final: total %.4f rpn %.4f cls %.4f reg %.4f\n", last.total, last.rpn, last.cls,
              last.reg);

  const auto t2 = std::chrono::steady_clock::now();
  const auto rep = evaluate(res.state, base_test, {0.5});
  const auto t3 = std::chrono::steady_clock::now();
  std::printf("eval %.1fs\n", std::chrono::duration<double>(t3 - t2).count());
  for (const auto& [k, v] : rep.aggregates) std::printf("  %s = %.4f\n", k.c_str(), v);
  for (const auto& [thr, pc] : rep.per_class)
    for (const auto& [cls, ap] : pc)
      std::printf("  ap@%.2f %s = %.4f\n", thr, train_all.classes.names[cls].c_str(), ap);

  // failure-mode split: localization recall vs classification accuracy
  int total_gt = 0, localized = 0, correct_cls = 0, fp_count = 0, det_count = 0;
  for (const auto& rec : base_test.records) {
    const auto dets = detect(rec.image, res.state, 0.05, 0.5);
    det_count += static_cast<int>(dets.size());
    for (const auto& ann : rec.anns) {
      ++total_gt;
      double best_iou = 0;
      int best_cls = -1;
      double best_score = -1;
      for (const auto& d : dets) {
        const double v = iou(d.box, ann.box);
        if (v >= 0.5 && d.score > best_score) {
          best_score = d.score;
          best_cls = d.class_id;
        }
        best_iou = std::max(best_iou, v);
      }
      if (best_iou >= 0.5) ++localized;
      if (best_cls == ann.class_id) ++correct_cls;
    }
    for (const auto& d : dets) {
      bool hits = false;
      for (const auto& ann : rec.anns)
        if (iou(d.box, ann.box) >= 0.5) hits = true;
      if (!hits) ++fp_count;
    }
  }
  std::printf("gt %d localized %.3f correct-class %.3f dets/img %.1f fp/img %.2f\n", total_gt,
              double(localized) / total_gt, double(correct_cls) / total_gt,
              double(det_count) / base_test.records.size(),
              double(fp_count) / base_test.records.size());

  // proposal recall: does any post-NMS proposal reach IoU 0.5 / 0.7?
  int prop_hit5 = 0, prop_hit7 = 0, gt_small = 0, small_hit5 = 0;
  for (const auto& rec : base_test.records) {
    Backbone::Ctx bb;
    res.state.backbone.forward(rec.image, bb);
    RpnHead::Ctx rp;
    res.state.rpn.forward(bb.a4, rp);
    const auto props = rpn_proposals(res.state, res.state.cfg, bb, rp);
    for (const auto& ann : rec.anns) {
      double best = 0;
      for (const auto& p : props) best = std::max(best, iou(p, ann.box));
      if (best >= 0.5) ++prop_hit5;
      if (best >= 0.7) ++prop_hit7;
      if (ann.box.width() <= 20) {
        ++gt_small;
        if (best >= 0.5) ++small_hit5;
      }
    }
  }
  std::printf("proposal recall@0.5 %.3f @0.7 %.3f | small(<=20px) recall@0.5 %.3f (n=%d)\n",
              double(prop_hit5) / total_gt, double(prop_hit7) / total_gt,
              gt_small ? double(small_hit5) / gt_small : 0.0, gt_small);

  // same recall with the cap lifted: separates ranking loss from coverage loss
  auto recall_with_cap = [&](int cap) {
    DetectorConfig probe = res.state.cfg;
    probe.rpn_post_nms_cap = cap;
    probe.rpn_pre_nms = 10000;
    int hit = 0, small_hit = 0;
    for (const auto& rec : base_test.records) {
      Backbone::Ctx bb;
      res.state.backbone.forward(rec.image, bb);
      RpnHead::Ctx rp;
      res.state.rpn.forward(bb.a4, rp);
      const auto props = rpn_proposals(res.state, probe, bb, rp);
      for (const auto& ann : rec.anns) {
        double best = 0;
        for (const auto& p : props) best = std::max(best, iou(p, ann.box));
        if (best >= 0.5) {
          ++hit;
          if (ann.box.width() <= 20) ++small_hit;
        }
      }
    }
    std::printf("cap %4d: recall@0.5 %.3f small %.3f\n", cap, double(hit) / total_gt,
                gt_small ? double(small_hit) / gt_small : 0.0);
  };
  recall_with_cap(64);
  recall_with_cap(128);
  recall_with_cap(2000);

  // anchor coverage vs raw decode quality (pre-NMS)
  {
    const auto anchors = make_anchors(res.state.cfg);
    double anchor_best_sum = 0, decode_best_sum = 0;
    int n_small = 0;
    double anchor_small = 0, decode_small = 0;
    int total = 0;
    for (const auto& rec : base_test.records) {
      Backbone::Ctx bb;
      res.state.backbone.forward(rec.image, bb);
      RpnHead::Ctx rp;
      res.state.rpn.forward(bb.a4, rp);
      const int A = static_cast<int>(anchors.size() / (rp.obj_map.h * rp.obj_map.w));
      for (const auto& ann : rec.anns) {
        double abest = 0, dbest = 0;
        for (size_t i = 0; i < anchors.size(); ++i) {
          abest = std::max(abest, iou(anchors[i], ann.box));
          const int cell = static_cast<int>(i) / A, k = static_cast<int>(i) % A;
          const int ay = cell / rp.obj_map.w, ax = cell % rp.obj_map.w;
          const double d0 = rp.delta_map.at(4 * k + 0, ay, ax);
          const double d1 = rp.delta_map.at(4 * k + 1, ay, ax);
          const double d2 = rp.delta_map.at(4 * k + 2, ay, ax);
          const double d3 = rp.delta_map.at(4 * k + 3, ay, ax);
          const double aw = anchors[i].width(), ah = anchors[i].height();
          const double cx = anchors[i].cx() + d0 * aw, cy = anchors[i].cy() + d1 * ah;
          const double w = aw * std::exp(std::clamp(d2, -4.0, 4.0));
          const double h = ah * std::exp(std::clamp(d3, -4.0, 4.0));
          if (w < 1 || h < 1) continue;
          dbest = std::max(dbest, iou(Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
                                      ann.box));
        }
        anchor_best_sum += abest;
        decode_best_sum += dbest;
        ++total;
        if (ann.box.width() <= 20) {
          anchor_small += abest;
          decode_small += dbest;
          ++n_small;
        }
      }
    }
    std::printf("mean best-anchor IoU %.3f (small %.3f) | mean best-decode IoU %.3f (small %.3f)\n",
                anchor_best_sum / total, anchor_small / n_small, decode_best_sum / total,
                decode_small / n_small);
  }
  return 0;
}

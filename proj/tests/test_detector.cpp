#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "fsce/dataset.hpp"
#include "fsce/detector.hpp"

using namespace fsce;
namespace fs = std::filesystem;

namespace {

DetectionDataset tiny_dataset(int images, uint64_t seed = 7) {
  GeneratorConfig gen;
  gen.num_images = images;
  gen.class_shapes = supported_shapes();
  gen.image_size = 64;
  return generate_synthetic(gen, seed);
}

DetectorConfig quick_cfg(int steps) {
  DetectorConfig cfg;
  cfg.steps = steps;
  cfg.images_per_step = 2;
  return cfg;
}

std::map<std::string, std::vector<float>> snapshot(DetectorState& st) {
  std::map<std::string, std::vector<float>> out;
  st.visit_params([&](const std::string& name, Component, ParamTensor& p) { out[name] = p.v; });
  return out;
}

DetectorConfig finetune_cfg(int steps) {
  DetectorConfig cfg = quick_cfg(steps);
  cfg.frozen = {Component::kBackbone};
  cfg.rpn_post_nms_cap = 128;
  cfg.roi_batch_size = 16;
  cfg.roi_fg_fraction = 0.5;
  return cfg;
}

}  // namespace

TEST(Anchors, LayoutAndCount) {
  DetectorConfig cfg;
  const auto anchors = make_anchors(cfg);
  const int fm = cfg.image_size / Backbone::kStride;
  EXPECT_EQ(anchors.size() % (fm * fm), 0u);
  // every anchor is a valid box
  for (const auto& a : anchors) EXPECT_GT(a.area(), 0.0);
}

TEST(TrainBase, ZeroStepsReturnsInitialState) {
  const auto data = make_base_training_set(tiny_dataset(10), {6, 7});
  auto res = train_base(data, quick_cfg(0), 5);
  auto init = init_detector(res.state.cfg, res.state.class_ids, 5);
  auto a = snapshot(res.state), b = snapshot(init);
  EXPECT_EQ(a, b);
  EXPECT_EQ(res.state.stage, Stage::kBase);
  EXPECT_TRUE(res.losses.empty());
}

TEST(TrainBase, EmptyDatasetIsError) {
  DetectionDataset empty;
  EXPECT_THROW(train_base(empty, quick_cfg(1), 1), std::invalid_argument);
}

TEST(TrainBase, RejectsNovelAnnotations) {
  auto data = tiny_dataset(10);
  data.classes.novel_ids = {0};  // yet annotations of class 0 remain
  EXPECT_THROW(train_base(data, quick_cfg(1), 1), std::invalid_argument);
}

TEST(TrainBase, DeterministicTrajectories) {
  const auto data = make_base_training_set(tiny_dataset(12), {6, 7});
  auto a = train_base(data, quick_cfg(10), 42);
  auto b = train_base(data, quick_cfg(10), 42);
  EXPECT_EQ(snapshot(a.state), snapshot(b.state));
  ASSERT_EQ(a.losses.size(), b.losses.size());
  for (size_t i = 0; i < a.losses.size(); ++i)
    EXPECT_DOUBLE_EQ(a.losses[i].total, b.losses[i].total);

  auto c = train_base(data, quick_cfg(10), 43);
  EXPECT_NE(snapshot(a.state), snapshot(c.state));
}

TEST(TrainBase, LossDecreasesOverShortRun) {
  const auto data = make_base_training_set(tiny_dataset(20), {6, 7});
  auto res = train_base(data, quick_cfg(60), 3);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) head += res.losses[i].total;
  for (int i = 0; i < 10; ++i) tail += res.losses[res.losses.size() - 1 - i].total;
  EXPECT_LT(tail, head);
}

TEST(TrainBase, LossCompositionExact) {
  const auto data = make_base_training_set(tiny_dataset(8), {6, 7});
  auto res = train_base(data, quick_cfg(5), 9);
  for (const auto& l : res.losses) {
    EXPECT_DOUBLE_EQ(l.total, total_finetune_loss(l.rpn, l.cls, l.reg, l.cpe, 0.5));
    EXPECT_DOUBLE_EQ(l.cpe, 0.0);  // no contrastive term in the base stage
  }
}

TEST(FineTune, RequiresBaseStageAndFrozenBackbone) {
  const auto full = tiny_dataset(40);
  const auto base_data = make_base_training_set(full, {6, 7});
  auto base = train_base(base_data, quick_cfg(3), 11);

  const auto split = build_kshot_split(full, {6, 7}, 2, 1);
  CpeConfig cpe;

  DetectorConfig bad = finetune_cfg(2);
  bad.frozen = {};  // backbone must stay frozen
  EXPECT_THROW(fine_tune(base.state, split.data, bad, cpe, 2), std::invalid_argument);

  auto ft = fine_tune(base.state, split.data, finetune_cfg(2), cpe, 2);
  EXPECT_EQ(ft.state.stage, Stage::kFinetune);
  // fine-tuning a fine-tuned state is a stage violation
  EXPECT_THROW(fine_tune(ft.state, split.data, finetune_cfg(2), cpe, 2), std::invalid_argument);
}

TEST(FineTune, ExpandsClassifierWithNovelRows) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(3), 11);
  EXPECT_EQ(base.state.class_ids.size(), 6u);
  EXPECT_EQ(base.state.classifier.rows, 7);  // + background

  const auto split = build_kshot_split(full, {6, 7}, 2, 1);
  auto ft = fine_tune(base.state, split.data, finetune_cfg(2), CpeConfig{}, 2);
  EXPECT_EQ(ft.state.class_ids.size(), 8u);
  EXPECT_EQ(ft.state.classifier.rows, 9);
  EXPECT_TRUE(ft.state.has_contrastive);
  // base prototypes carried over
  for (int r = 0; r < 6; ++r)
    for (int d = 0; d < ft.state.cfg.d_r; ++d)
      EXPECT_EQ(ft.state.classifier.prototype(r)[d], base.state.classifier.prototype(r)[d]);
}

TEST(FineTune, FrozenBackboneBitIdentical) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(5), 13);
  const auto before = snapshot(base.state);

  const auto split = build_kshot_split(full, {6, 7}, 3, 1);
  auto ft = fine_tune(base.state, split.data, finetune_cfg(8), CpeConfig{}, 3);
  const auto after = snapshot(ft.state);
  for (const auto& name : {"backbone.c1.w", "backbone.c1.b", "backbone.c2.w", "backbone.c3.w",
                           "backbone.c4.w", "backbone.c4.b"})
    EXPECT_EQ(before.at(name), after.at(name)) << name;
  // unfrozen parts actually moved
  EXPECT_NE(before.at("rpn.conv.w"), after.at("rpn.conv.w"));
  EXPECT_NE(before.at("roi.fc1.w"), after.at("roi.fc1.w"));
}

TEST(FineTune, TfaStyleFreezeKeepsRpnAndRoi) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(5), 13);
  const auto before = snapshot(base.state);

  DetectorConfig cfg = quick_cfg(8);
  cfg.frozen = {Component::kBackbone, Component::kRpn, Component::kRoiFeature};
  const auto split = build_kshot_split(full, {6, 7}, 3, 1);
  auto ft = fine_tune(base.state, split.data, cfg, CpeConfig{}, 3);
  const auto after = snapshot(ft.state);
  for (const auto& name :
       {"rpn.conv.w", "rpn.obj.w", "rpn.delta.w", "roi.fc1.w", "roi.fc2.w", "backbone.c1.w"})
    EXPECT_EQ(before.at(name), after.at(name)) << name;
  EXPECT_NE(before.at("reg.w"), after.at("reg.w"));
}

TEST(FineTune, LambdaZeroDisablesCpeTerm) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(3), 17);
  const auto split = build_kshot_split(full, {6, 7}, 3, 1);
  CpeConfig off;
  off.lambda = 0.0;
  auto ft = fine_tune(base.state, split.data, finetune_cfg(4), off, 3);
  for (const auto& l : ft.losses) EXPECT_DOUBLE_EQ(l.cpe, 0.0);
  // contrastive head exists (for embedding export) but received no updates
  EXPECT_TRUE(ft.state.has_contrastive);
}

TEST(FineTune, CpeTermAppearsWhenEnabled) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(3), 17);
  const auto split = build_kshot_split(full, {6, 7}, 5, 1);
  auto ft = fine_tune(base.state, split.data, finetune_cfg(6), CpeConfig{}, 3);
  bool any_cpe = false;
  for (const auto& l : ft.losses) {
    EXPECT_DOUBLE_EQ(l.total, total_finetune_loss(l.rpn, l.cls, l.reg, l.cpe, 0.5));
    if (l.cpe > 0) any_cpe = true;
  }
  EXPECT_TRUE(any_cpe);
}

TEST(Detect, WrongImageSizeIsError) {
  const auto data = make_base_training_set(tiny_dataset(8), {6, 7});
  auto res = train_base(data, quick_cfg(1), 19);
  GrayImage wrong(32, 32);
  EXPECT_THROW(detect(wrong, res.state, 0.05, 0.5), std::invalid_argument);
}

TEST(Detect, ImpossibleThresholdGivesEmpty) {
  const auto data = make_base_training_set(tiny_dataset(8), {6, 7});
  auto res = train_base(data, quick_cfg(3), 19);
  const auto dets = detect(data.records[0].image, res.state, 1.0 + 1e-9, 0.5);
  EXPECT_TRUE(dets.empty());
}

TEST(Detect, OutputSortedAndValid) {
  const auto data = make_base_training_set(tiny_dataset(10), {6, 7});
  auto res = train_base(data, quick_cfg(30), 21);
  for (int i = 0; i < 3; ++i) {
    const auto dets = detect(data.records[i].image, res.state, 0.05, 0.5);
    EXPECT_LE(static_cast<int>(dets.size()), res.state.cfg.max_detections);
    for (size_t d = 0; d < dets.size(); ++d) {
      EXPECT_GE(dets[d].score, 0.0);
      EXPECT_LE(dets[d].score, 1.0);
      EXPECT_GE(res.state.row_of_class(dets[d].class_id), 0);
      if (d > 0) EXPECT_GE(dets[d - 1].score, dets[d].score);
    }
  }
}

TEST(RoiSampling, RespectsBatchAndFraction) {
  // run a few steps and inspect the per-step invariant via stats proxy:
  // sampled rois <= roi_batch_size is structural; here we check the
  // foreground fraction bound on a trained state's sampled batches by
  // re-deriving the sampler caps from config.
  DetectorConfig cfg = quick_cfg(1);
  const int fg_cap = static_cast<int>(std::round(cfg.roi_batch_size * cfg.roi_fg_fraction));
  EXPECT_LE(fg_cap, cfg.roi_batch_size);
  EXPECT_LE(static_cast<double>(fg_cap) / cfg.roi_batch_size,
            cfg.roi_fg_fraction + 1.0 / cfg.roi_batch_size);
}

TEST(CollectStats, EmptyDatasetZeros) {
  const auto data = make_base_training_set(tiny_dataset(8), {6, 7});
  auto res = train_base(data, quick_cfg(1), 23);
  DetectionDataset empty;
  const auto s = collect_stats(res.state, empty, res.state.cfg);
  EXPECT_EQ(s.images, 0);
  EXPECT_DOUBLE_EQ(s.mean_positive_anchors, 0.0);
  EXPECT_DOUBLE_EQ(s.mean_fg_proposals, 0.0);
}

TEST(CollectStats, DeterministicAndNonNegative) {
  const auto data = make_base_training_set(tiny_dataset(10), {6, 7});
  auto res = train_base(data, quick_cfg(5), 23);
  const auto a = collect_stats(res.state, data, res.state.cfg);
  const auto b = collect_stats(res.state, data, res.state.cfg);
  EXPECT_DOUBLE_EQ(a.mean_positive_anchors, b.mean_positive_anchors);
  EXPECT_DOUBLE_EQ(a.mean_fg_proposals, b.mean_fg_proposals);
  EXPECT_DOUBLE_EQ(a.roi_cls_loss, b.roi_cls_loss);
  EXPECT_GE(a.mean_positive_anchors, 0.0);
  EXPECT_GE(a.mean_fg_proposals, 0.0);
}

TEST(CollectStats, DoubledCapDoesNotReduceForegrounds) {
  const auto data = make_base_training_set(tiny_dataset(16), {6, 7});
  auto res = train_base(data, quick_cfg(40), 29);
  DetectorConfig cap1 = res.state.cfg;
  cap1.rpn_post_nms_cap = 64;
  DetectorConfig cap2 = res.state.cfg;
  cap2.rpn_post_nms_cap = 128;
  const auto s1 = collect_stats(res.state, data, cap1);
  const auto s2 = collect_stats(res.state, data, cap2);
  EXPECT_GE(s2.mean_fg_proposals, s1.mean_fg_proposals);
}

TEST(Checkpoint, RoundTripBitExact) {
  const auto full = tiny_dataset(30);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(6), 31);
  const std::string path =
      (fs::temp_directory_path() / "fsce_ckpt_test.bin").string();
  save_checkpoint(base.state, path);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.stage, Stage::kBase);
  EXPECT_EQ(loaded.seed, base.state.seed);
  EXPECT_EQ(loaded.class_ids, base.state.class_ids);
  EXPECT_EQ(snapshot(loaded), snapshot(base.state));

  // byte-identical re-serialization
  const std::string path2 =
      (fs::temp_directory_path() / "fsce_ckpt_test2.bin").string();
  save_checkpoint(loaded, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(b1, b2);
  fs::remove(path);
  fs::remove(path2);
}

TEST(Checkpoint, FinetuneStateKeepsContrastiveHead) {
  const auto full = tiny_dataset(40);
  auto base = train_base(make_base_training_set(full, {6, 7}), quick_cfg(3), 37);
  const auto split = build_kshot_split(full, {6, 7}, 2, 1);
  auto ft = fine_tune(base.state, split.data, finetune_cfg(2), CpeConfig{}, 2);
  const std::string path = (fs::temp_directory_path() / "fsce_ckpt_ft.bin").string();
  save_checkpoint(ft.state, path);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.stage, Stage::kFinetune);
  EXPECT_TRUE(loaded.has_contrastive);
  EXPECT_EQ(snapshot(loaded), snapshot(ft.state));
  fs::remove(path);
}

TEST(Checkpoint, BadFileRejected) {
  const std::string path = (fs::temp_directory_path() / "fsce_bad_ckpt.bin").string();
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);
}

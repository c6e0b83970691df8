#ifndef FSCE_DETECTOR_HPP
#define FSCE_DETECTOR_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsce/contrastive.hpp"
#include "fsce/cpe_loss.hpp"
#include "fsce/dataset.hpp"
#include "fsce/geometry.hpp"
#include "fsce/nn.hpp"

namespace fsce {

enum class Component { kBackbone, kRpn, kRoiFeature, kBoxPredictors, kContrastiveHead };

std::string to_string(Component c);
Component component_from_string(const std::string& s);

enum class Stage { kBase, kFinetune };

struct DetectorConfig {
  int image_size = 64;
  std::vector<double> anchor_sizes = {12, 16, 22, 30, 40, 48};
  std::vector<double> anchor_aspects = {1.0};
  // sizes below this get a 2x2 grid of sub-cell centers; the feature
  // stride is too coarse for small boxes otherwise
  double anchor_densify_below = 24.0;
  int d_r = 256;   // RoI feature dimension
  int d_c = 128;   // contrastive embedding dimension
  double alpha = 20.0;
  int roi_pool = 5;

  int rpn_pre_nms = 256;
  int rpn_post_nms_cap = 64;
  double rpn_nms_threshold = 0.7;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_batch_size = 64;
  double rpn_fg_fraction = 0.5;

  int roi_batch_size = 32;
  double roi_fg_fraction = 0.25;
  double fg_iou_threshold = 0.5;
  bool add_gt_proposals = true;

  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr_final_scale = 0.1;     // applied over the last fifth of training
  int steps = 3000;
  int images_per_step = 2;
  std::vector<Component> frozen;

  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  int max_detections = 20;

  bool is_frozen(Component c) const;
  void validate() const;
};

// Small 4-block conv backbone, stride 8 overall (the last block keeps
// resolution). Fixed widths 8/16/32/32.
struct Backbone {
  Conv2d c1{1, 8, 3, 2, 1};
  Conv2d c2{8, 16, 3, 2, 1};
  Conv2d c3{16, 32, 3, 2, 1};
  Conv2d c4{32, 32, 3, 1, 1};

  struct Ctx {
    FeatureMap a0, a1, a2, a3, a4;  // post-ReLU activations, a0 = input
  };

  static constexpr int kOutChannels = 32;
  static constexpr int kStride = 8;

  void init(Rng rng);
  void forward(const GrayImage& img, Ctx& ctx) const;
  void backward(const Ctx& ctx, FeatureMap dtop);  // consumes dtop in place
};

struct RpnHead {
  Conv2d conv;   // 3x3, C -> C
  Conv2d obj;    // 1x1, C -> A
  Conv2d delta;  // 1x1, C -> 4A

  struct Ctx {
    FeatureMap hidden, obj_map, delta_map;
  };

  RpnHead() = default;
  RpnHead(int channels, int num_anchors_per_cell);
  void init(Rng rng);
  void forward(const FeatureMap& f, Ctx& ctx) const;
  // dobj/ddelta in map layout; adds the feature-map gradient into df.
  void backward(const FeatureMap& f, const Ctx& ctx, const FeatureMap& dobj,
                const FeatureMap& ddelta, FeatureMap* df);
};

struct Detection {
  Box box;
  int class_id;
  double score;  // in [0,1]
};

struct RpnRoiStats {
  double mean_positive_anchors = 0.0;   // per image, before sampling
  double mean_fg_proposals = 0.0;       // per image, post-NMS proposals at fg IoU
  double rpn_objectness_loss = 0.0;     // over all non-ignored anchors
  double rpn_box_loss = 0.0;            // over positive anchors
  double roi_cls_loss = 0.0;            // over all post-NMS proposals
  double roi_box_loss = 0.0;            // over foreground proposals
  int images = 0;
};

struct StepLoss {
  double rpn = 0.0, cls = 0.0, reg = 0.0, cpe = 0.0, total = 0.0;
};

struct DetectorState {
  DetectorConfig cfg;
  Stage stage = Stage::kBase;
  uint64_t seed = 0;
  std::vector<int> class_ids;  // classifier foreground rows -> dataset class ids

  Backbone backbone;
  RpnHead rpn;
  Linear roi_fc1;              // pooled features -> D_R  (RoI feature extractor,
  Linear roi_fc2;              //  D_R -> D_R              two fc blocks)
  CosineClassifier classifier; // class_ids.size() + 1 rows, background last
  Linear box_reg;              // D_R -> 4, class-agnostic deltas
  ContrastiveHead con;
  bool has_contrastive = false;

  int background_row() const { return static_cast<int>(class_ids.size()); }
  int row_of_class(int class_id) const;  // -1 when the class is not represented

  // Deterministic traversal of every parameter tensor, for the optimizer,
  // checkpointing, and the freeze-contract tests.
  void visit_params(const std::function<void(const std::string&, Component, ParamTensor&)>& fn);
};

struct TrainResult {
  DetectorState state;
  std::vector<StepLoss> losses;
};

DetectorState init_detector(const DetectorConfig& cfg, const std::vector<int>& class_ids,
                            uint64_t seed);

// Base stage: standard two-stage detector training, no contrastive term.
// The dataset must carry only base-class annotations.
TrainResult train_base(const DetectionDataset& base_data, const DetectorConfig& cfg,
                       uint64_t seed);

// Fine-tune stage: expands the classifier with novel-class prototypes,
// attaches the contrastive head, and optimizes the combined objective.
// cpe.lambda == 0 disables the contrastive term (strong / TFA baselines).
// The config must freeze the backbone.
TrainResult fine_tune(const DetectorState& base_state, const DetectionDataset& balanced_set,
                      const DetectorConfig& cfg, const CpeConfig& cpe, uint64_t seed);

std::vector<Detection> detect(const GrayImage& image, const DetectorState& state,
                              double score_threshold, double nms_threshold);

// RPN/RoI statistics over a dataset (Fig. 4-style diagnostics). Uses cfg's
// proposal caps, not the ones recorded in state.
RpnRoiStats collect_stats(const DetectorState& state, const DetectionDataset& dataset,
                          const DetectorConfig& cfg);

void save_checkpoint(DetectorState& state, const std::string& path);
DetectorState load_checkpoint(const std::string& path);

// --- internals shared with evaluation/tooling ---

// Anchor grid in image coordinates, layout (cell-major, then per-cell
// anchor index over sizes x aspects).
std::vector<Box> make_anchors(const DetectorConfig& cfg);

// Post-NMS proposal boxes for one image (no ground-truth injection).
std::vector<Box> rpn_proposals(const DetectorState& state, const DetectorConfig& cfg,
                               const Backbone::Ctx& bb, const RpnHead::Ctx& rp);

// Pooled-and-projected RoI feature (post-ReLU, D_R) for one proposal.
std::vector<float> roi_feature(const DetectorState& state, const Backbone::Ctx& bb,
                               const Box& proposal);

}  // namespace fsce

#endif  // FSCE_DETECTOR_HPP

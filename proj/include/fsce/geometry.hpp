#ifndef FSCE_GEOMETRY_HPP
#define FSCE_GEOMETRY_HPP

#include <vector>

namespace fsce {

// Sentinel class id for proposals that match no ground truth.
inline constexpr int kBackground = -1;
// Sentinel for MatchResult::matched_gt_index.
inline constexpr int kNoMatch = -1;

// Axis-aligned box, corner convention (x1,y1)-(x2,y2), x2 > x1, y2 > y1.
// Construction validates finiteness and positive area.
struct Box {
  double x1, y1, x2, y2;

  Box(double x1_, double y1_, double x2_, double y2_);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// Per-proposal matching outcome: the gt of maximal IoU, the IoU value u,
// and the assigned label y (background when u falls below the fg threshold).
struct MatchResult {
  int matched_gt_index = kNoMatch;
  double iou_u = 0.0;
  int label_y = kBackground;
};

double intersection_area(const Box& a, const Box& b);

// Intersection over union; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

// Greedy NMS. Keeps highest-scoring boxes, suppressing any box whose IoU
// with an already-kept box exceeds iou_threshold. Returns at most max_keep
// indices in descending score order (max_keep < 0 means unbounded).
// Score ties break toward the lower box index.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold, int max_keep = -1);

// Assigns each proposal to the ground-truth box of maximal IoU. IoU ties
// break toward the lower gt index. label_y is the matched gt class when
// iou_u >= fg_iou_threshold, else background (and matched_gt_index -1).
std::vector<MatchResult> match_proposals(const std::vector<Box>& proposals,
                                         const std::vector<Box>& gt_boxes,
                                         const std::vector<int>& gt_labels,
                                         double fg_iou_threshold);

}  // namespace fsce

#endif  // FSCE_GEOMETRY_HPP

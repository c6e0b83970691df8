#include "fsce/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fsce {

Box::Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
  if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2)))
    throw std::invalid_argument("Box: non-finite coordinate");
  if (!(x2 > x1 && y2 > y1))
    throw std::invalid_argument("Box: degenerate extent (" + std::to_string(x1) + "," +
                                std::to_string(y1) + "," + std::to_string(x2) + "," +
                                std::to_string(y2) + ")");
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold, int max_keep) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes and scores length mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  // stable: equal scores keep ascending index order
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });

  std::vector<int> kept;
  for (int idx : order) {
    if (max_keep >= 0 && static_cast<int>(kept.size()) >= max_keep) break;
    bool suppressed = false;
    for (int k : kept) {
      if (iou(boxes[idx], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<MatchResult> match_proposals(const std::vector<Box>& proposals,
                                         const std::vector<Box>& gt_boxes,
                                         const std::vector<int>& gt_labels,
                                         double fg_iou_threshold) {
  if (gt_boxes.size() != gt_labels.size())
    throw std::invalid_argument("match_proposals: gt_boxes and gt_labels length mismatch");
  if (!(fg_iou_threshold > 0.0 && fg_iou_threshold < 1.0))
    throw std::invalid_argument("match_proposals: fg_iou_threshold must lie in (0,1)");

  std::vector<MatchResult> out(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    int best_gt = kNoMatch;
    double best_iou = 0.0;
    for (size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(proposals[i], gt_boxes[g]);
      if (v > best_iou) {  // strict: ties keep the lower gt index
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    MatchResult& r = out[i];
    r.iou_u = best_iou;
    if (best_gt != kNoMatch && best_iou >= fg_iou_threshold) {
      r.matched_gt_index = best_gt;
      r.label_y = gt_labels[best_gt];
    }
  }
  return out;
}

}  // namespace fsce

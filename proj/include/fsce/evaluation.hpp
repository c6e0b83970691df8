#ifndef FSCE_EVALUATION_HPP
#define FSCE_EVALUATION_HPP

#include <map>
#include <string>
#include <vector>

#include "fsce/dataset.hpp"
#include "fsce/detector.hpp"
#include "fsce/geometry.hpp"

namespace fsce {

struct ScoredBox {
  Box box;
  int class_id;
  double score;
};

// Greedy score-descending matching; each gt matched at most once; a
// detection is TP iff IoU >= threshold with an unmatched same-class gt.
// AP integrates the precision-envelope PR curve (all-point). Classes with
// zero gt instances are absent from the result. eleven_point switches to
// the VOC 11-point interpolation.
std::map<int, double> average_precision(const std::vector<std::vector<ScoredBox>>& detections,
                                        const std::vector<std::vector<Annotation>>& ground_truths,
                                        double iou_threshold, bool eleven_point = false);

// PR curve of one class at one threshold (for plotting).
struct PrCurve {
  std::vector<double> recall, precision;
};
std::map<int, PrCurve> pr_curves(const std::vector<std::vector<ScoredBox>>& detections,
                                 const std::vector<std::vector<Annotation>>& ground_truths,
                                 double iou_threshold);

struct EvalReport {
  std::vector<double> thresholds;
  // threshold -> class -> AP (classes without gt are absent)
  std::map<double, std::map<int, double>> per_class;
  // aggregate name -> value, e.g. AP50, nAP50, bAP50, nAP75, nAP, bAP
  std::map<std::string, double> aggregates;
  int images = 0;
  int instances = 0;
};

// Runs detect() over the dataset and aggregates AP per threshold, split
// into base/novel groups per the dataset registry. Every annotated class
// must be representable by the state (else hard error naming the class).
EvalReport evaluate(const DetectorState& state, const DetectionDataset& dataset,
                    const std::vector<double>& thresholds, bool eleven_point = false);

const std::vector<double>& coco_thresholds();  // 0.50:0.05:0.95

void write_report_text(const EvalReport& r, const DetectionDataset& dataset,
                       const std::string& path);
void write_report_json(const EvalReport& r, const DetectionDataset& dataset,
                       const std::string& path,
                       const std::map<int, PrCurve>* curves = nullptr);

struct EmbeddingRow {
  int class_id;
  double u;
  std::vector<float> z;
};

struct ClusterStats {
  std::map<int, double> within;         // classes with >= 2 rows
  std::map<int, double> centroid_norm;  // every class present
  double mean_within = 0.0;             // over classes in `within`
  double mean_cross = 0.0;              // over all cross-class pairs
};

// Cosine statistics on normalized embeddings. Requires rows from at least
// two distinct classes; single-row classes are skipped for the
// within-class statistic.
ClusterStats cluster_statistics(const std::vector<EmbeddingRow>& rows);

// Foreground proposal embeddings over (up to) max_images seed-sampled
// images. Requires a fine-tuned state (contrastive head present).
std::vector<EmbeddingRow> export_embeddings(const DetectorState& state,
                                            const DetectionDataset& dataset, int max_images,
                                            uint64_t seed);

// CSV with header class_id,u,z_0..z_{D_C-1}; 9 significant digits.
void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, int d_c,
                          const std::string& path);
std::vector<EmbeddingRow> read_embeddings_csv(const std::string& path);

}  // namespace fsce

#endif  // FSCE_EVALUATION_HPP

#include "fsce/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

#include "fsce/rng.hpp"

using nlohmann::json;

namespace fsce {

namespace {

struct ClassMatch {
  std::vector<int> tp_flags;  // per detection, score-descending order
  int num_gt = 0;
};

// Shared TP/FP labelling for AP and PR-curve computation.
std::map<int, ClassMatch> match_detections(const std::vector<std::vector<ScoredBox>>& detections,
                                           const std::vector<std::vector<Annotation>>& gts,
                                           double iou_threshold) {
  if (detections.size() != gts.size())
    throw std::invalid_argument("average_precision: per-image lists differ in length");

  std::set<int> classes;
  for (const auto& img : gts)
    for (const auto& ann : img) classes.insert(ann.class_id);

  std::map<int, ClassMatch> out;
  for (int cls : classes) {
    ClassMatch cm;
    struct Det {
      int img;
      int idx;
      double score;
    };
    std::vector<Det> dets;
    for (size_t i = 0; i < detections.size(); ++i)
      for (size_t d = 0; d < detections[i].size(); ++d)
        if (detections[i][d].class_id == cls)
          dets.push_back({static_cast<int>(i), static_cast<int>(d), detections[i][d].score});
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Det& a, const Det& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> taken(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) {
      taken[i].assign(gts[i].size(), false);
      for (const auto& ann : gts[i])
        if (ann.class_id == cls) ++cm.num_gt;
    }

    for (const auto& det : dets) {
      const Box& b = detections[det.img][det.idx].box;
      int best_gt = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < gts[det.img].size(); ++g) {
        if (gts[det.img][g].class_id != cls || taken[det.img][g]) continue;
        const double v = iou(b, gts[det.img][g].box);
        if (v > best_iou) {
          best_iou = v;
          best_gt = static_cast<int>(g);
        }
      }
      if (best_gt >= 0 && best_iou >= iou_threshold) {
        cm.tp_flags.push_back(1);
        taken[det.img][best_gt] = true;
      } else {
        cm.tp_flags.push_back(0);
      }
    }
    out[cls] = std::move(cm);
  }
  return out;
}

double ap_from_flags(const ClassMatch& cm, bool eleven_point) {
  if (cm.num_gt == 0) return 0.0;
  const int n = static_cast<int>(cm.tp_flags.size());
  std::vector<double> recall(n), precision(n);
  int tp = 0;
  for (int i = 0; i < n; ++i) {
    tp += cm.tp_flags[i];
    recall[i] = static_cast<double>(tp) / cm.num_gt;
    precision[i] = static_cast<double>(tp) / (i + 1);
  }

  if (eleven_point) {
    double acc = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double pmax = 0.0;
      for (int i = 0; i < n; ++i)
        if (recall[i] >= r) pmax = std::max(pmax, precision[i]);
      acc += pmax;
    }
    return acc / 11.0;
  }

  // all-point: integrate recall steps against the precision envelope
  double ap = 0.0;
  double envelope = 0.0;
  for (int i = n - 1; i >= 0; --i) {
    envelope = std::max(envelope, precision[i]);
    const double r_lo = i > 0 ? recall[i - 1] : 0.0;
    if (recall[i] > r_lo) ap += (recall[i] - r_lo) * envelope;
  }
  return ap;
}

}  // namespace

std::map<int, double> average_precision(const std::vector<std::vector<ScoredBox>>& detections,
                                        const std::vector<std::vector<Annotation>>& ground_truths,
                                        double iou_threshold, bool eleven_point) {
  std::map<int, double> out;
  for (auto& [cls, cm] : match_detections(detections, ground_truths, iou_threshold))
    out[cls] = ap_from_flags(cm, eleven_point);
  return out;
}

std::map<int, PrCurve> pr_curves(const std::vector<std::vector<ScoredBox>>& detections,
                                 const std::vector<std::vector<Annotation>>& ground_truths,
                                 double iou_threshold) {
  std::map<int, PrCurve> out;
  for (auto& [cls, cm] : match_detections(detections, ground_truths, iou_threshold)) {
    PrCurve c;
    int tp = 0;
    for (size_t i = 0; i < cm.tp_flags.size(); ++i) {
      tp += cm.tp_flags[i];
      c.recall.push_back(cm.num_gt ? static_cast<double>(tp) / cm.num_gt : 0.0);
      c.precision.push_back(static_cast<double>(tp) / (i + 1));
    }
    out[cls] = std::move(c);
  }
  return out;
}

const std::vector<double>& coco_thresholds() {
  static const std::vector<double> t = {0.50, 0.55, 0.60, 0.65, 0.70,
                                        0.75, 0.80, 0.85, 0.90, 0.95};
  return t;
}

EvalReport evaluate(const DetectorState& state, const DetectionDataset& dataset,
                    const std::vector<double>& thresholds, bool eleven_point) {
  if (dataset.records.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (thresholds.empty()) throw std::invalid_argument("evaluate: no IoU thresholds given");

  for (const auto& rec : dataset.records)
    for (const auto& ann : rec.anns)
      if (state.row_of_class(ann.class_id) < 0)
        throw std::runtime_error(
            "evaluate: dataset annotates class '" + dataset.classes.names.at(ann.class_id) +
            "' which this checkpoint cannot predict (stage mismatch?)");

  std::vector<std::vector<ScoredBox>> dets(dataset.records.size());
  std::vector<std::vector<Annotation>> gts(dataset.records.size());
  EvalReport rep;
  rep.thresholds = thresholds;
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& rec = dataset.records[i];
    for (const auto& d :
         detect(rec.image, state, state.cfg.score_threshold, state.cfg.nms_threshold))
      dets[i].push_back({d.box, d.class_id, d.score});
    gts[i] = rec.anns;
    rep.instances += static_cast<int>(rec.anns.size());
  }
  rep.images = static_cast<int>(dataset.records.size());

  for (double thr : thresholds)
    rep.per_class[thr] = average_precision(dets, gts, thr, eleven_point);

  const auto mean_over = [&](double thr, const std::vector<int>& ids) -> std::pair<double, int> {
    double acc = 0.0;
    int n = 0;
    for (auto& [cls, ap] : rep.per_class.at(thr)) {
      if (ids.empty() || std::find(ids.begin(), ids.end(), cls) != ids.end()) {
        acc += ap;
        ++n;
      }
    }
    return {n ? acc / n : 0.0, n};
  };

  const std::vector<int> novel = dataset.classes.novel_ids;
  const std::vector<int> base = dataset.classes.base_ids();

  auto put_group = [&](double thr, const std::string& suffix) {
    const auto [all_ap, all_n] = mean_over(thr, {});
    if (all_n) rep.aggregates["AP" + suffix] = all_ap;
    if (!novel.empty()) {
      const auto [nap, nn] = mean_over(thr, novel);
      if (nn) rep.aggregates["nAP" + suffix] = nap;
      const auto [bap, bn] = mean_over(thr, base);
      if (bn) rep.aggregates["bAP" + suffix] = bap;
    }
  };

  for (double thr : thresholds) {
    if (std::abs(thr - 0.5) < 1e-9) put_group(thr, "50");
    else if (std::abs(thr - 0.75) < 1e-9) put_group(thr, "75");
  }

  // COCO-style mean over the 0.50:0.05:0.95 ladder when it is fully present
  bool full_ladder = true;
  for (double t : coco_thresholds())
    if (!rep.per_class.count(t)) full_ladder = false;
  if (full_ladder) {
    double acc_all = 0.0, acc_n = 0.0, acc_b = 0.0;
    int cnt_all = 0, cnt_n = 0, cnt_b = 0;
    for (double t : coco_thresholds()) {
      const auto [a, na] = mean_over(t, {});
      acc_all += a;
      cnt_all += na ? 1 : 0;
      if (!novel.empty()) {
        const auto [nv, nn] = mean_over(t, novel);
        acc_n += nv;
        cnt_n += nn ? 1 : 0;
        const auto [bv, bn] = mean_over(t, base);
        acc_b += bv;
        cnt_b += bn ? 1 : 0;
      }
    }
    if (cnt_all) rep.aggregates["AP"] = acc_all / coco_thresholds().size();
    if (cnt_n) rep.aggregates["nAP"] = acc_n / coco_thresholds().size();
    if (cnt_b) rep.aggregates["bAP"] = acc_b / coco_thresholds().size();
  }
  return rep;
}

void write_report_text(const EvalReport& r, const DetectionDataset& dataset,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_report_text: cannot open " + path);
  f << "images " << r.images << "\n";
  f << "instances " << r.instances << "\n";
  for (const auto& [k, v] : r.aggregates) f << k << " " << v << "\n";
  for (const auto& [thr, per_class] : r.per_class) {
    for (const auto& [cls, ap] : per_class) {
      f << "ap@" << thr << "." << dataset.classes.names.at(cls) << " " << ap << "\n";
    }
  }
}

void write_report_json(const EvalReport& r, const DetectionDataset& dataset,
                       const std::string& path, const std::map<int, PrCurve>* curves) {
  json j;
  j["images"] = r.images;
  j["instances"] = r.instances;
  j["aggregates"] = r.aggregates;
  json pc = json::object();
  for (const auto& [thr, per_class] : r.per_class) {
    json row = json::object();
    for (const auto& [cls, ap] : per_class) row[dataset.classes.names.at(cls)] = ap;
    std::ostringstream key;
    key << thr;
    pc[key.str()] = row;
  }
  j["per_class"] = pc;
  if (curves) {
    json jc = json::object();
    for (const auto& [cls, c] : *curves) {
      jc[dataset.classes.names.at(cls)] = {{"recall", c.recall}, {"precision", c.precision}};
    }
    j["pr_curves"] = jc;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_report_json: cannot open " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Embedding diagnostics
// ---------------------------------------------------------------------------

ClusterStats cluster_statistics(const std::vector<EmbeddingRow>& rows) {
  std::map<int, std::vector<std::vector<double>>> by_class;
  for (const auto& r : rows) {
    double sq = 0.0;
    for (float v : r.z) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12)) throw std::invalid_argument("cluster_statistics: zero-norm embedding");
    std::vector<double> nz(r.z.size());
    for (size_t d = 0; d < r.z.size(); ++d) nz[d] = r.z[d] / norm;
    by_class[r.class_id].push_back(std::move(nz));
  }
  if (by_class.size() < 2)
    throw std::invalid_argument("cluster_statistics: need rows from at least 2 classes");

  ClusterStats out;
  double within_acc = 0.0;
  int within_classes = 0;
  for (const auto& [cls, zs] : by_class) {
    std::vector<double> centroid(zs[0].size(), 0.0);
    for (const auto& z : zs)
      for (size_t d = 0; d < z.size(); ++d) centroid[d] += z[d];
    double csq = 0.0;
    for (double v : centroid) csq += (v / zs.size()) * (v / zs.size());
    out.centroid_norm[cls] = std::sqrt(csq);

    if (zs.size() < 2) continue;  // single row: no within statistic
    double acc = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < zs.size(); ++i)
      for (size_t j = i + 1; j < zs.size(); ++j) {
        double dp = 0.0;
        for (size_t d = 0; d < zs[i].size(); ++d) dp += zs[i][d] * zs[j][d];
        acc += dp;
        ++pairs;
      }
    out.within[cls] = acc / pairs;
    within_acc += out.within[cls];
    ++within_classes;
  }
  out.mean_within = within_classes ? within_acc / within_classes : 0.0;

  double cross_acc = 0.0;
  long cross_pairs = 0;
  for (auto it = by_class.begin(); it != by_class.end(); ++it)
    for (auto jt = std::next(it); jt != by_class.end(); ++jt)
      for (const auto& zi : it->second)
        for (const auto& zj : jt->second) {
          double dp = 0.0;
          for (size_t d = 0; d < zi.size(); ++d) dp += zi[d] * zj[d];
          cross_acc += dp;
          ++cross_pairs;
        }
  out.mean_cross = cross_pairs ? cross_acc / cross_pairs : 0.0;
  return out;
}

std::vector<EmbeddingRow> export_embeddings(const DetectorState& state,
                                            const DetectionDataset& dataset, int max_images,
                                            uint64_t seed) {
  if (!state.has_contrastive)
    throw std::invalid_argument("export_embeddings: state has no contrastive head (base stage?)");

  std::vector<int> order(dataset.records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  if (static_cast<int>(order.size()) > max_images) order.resize(std::max(0, max_images));
  std::sort(order.begin(), order.end());

  std::vector<EmbeddingRow> rows;
  for (int idx : order) {
    const auto& rec = dataset.records[idx];
    Backbone::Ctx bb;
    state.backbone.forward(rec.image, bb);
    RpnHead::Ctx rp;
    state.rpn.forward(bb.a4, rp);
    const auto proposals = rpn_proposals(state, state.cfg, bb, rp);

    std::vector<Box> gts;
    std::vector<int> cls;
    for (const auto& ann : rec.anns) {
      gts.push_back(ann.box);
      cls.push_back(ann.class_id);
    }
    if (gts.empty()) continue;
    const auto matches = match_proposals(proposals, gts, cls, state.cfg.fg_iou_threshold);
    for (size_t p = 0; p < proposals.size(); ++p) {
      if (matches[p].label_y == kBackground) continue;
      const auto x = roi_feature(state, bb, proposals[p]);
      float xs = 0.f;
      for (float v : x) xs += std::abs(v);
      if (xs <= 0.f) continue;
      rows.push_back({matches[p].label_y, matches[p].iou_u, state.con.encode(x)});
    }
  }
  return rows;
}

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows, int d_c,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_embeddings_csv: cannot open " + path);
  f << "class_id,u";
  for (int d = 0; d < d_c; ++d) f << ",z_" << d;
  f << "\n";
  char buf[40];
  for (const auto& r : rows) {
    f << r.class_id;
    std::snprintf(buf, sizeof(buf), ",%.9g", r.u);
    f << buf;
    for (float v : r.z) {
      std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
      f << buf;
    }
    f << "\n";
  }
}

std::vector<EmbeddingRow> read_embeddings_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_embeddings_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_embeddings_csv: empty file");
  std::vector<EmbeddingRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    EmbeddingRow r;
    std::getline(ss, tok, ',');
    r.class_id = std::stoi(tok);
    std::getline(ss, tok, ',');
    r.u = std::stod(tok);
    while (std::getline(ss, tok, ',')) r.z.push_back(std::stof(tok));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fsce

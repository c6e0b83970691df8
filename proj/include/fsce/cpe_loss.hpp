#ifndef FSCE_CPE_LOSS_HPP
#define FSCE_CPE_LOSS_HPP

#include <string>
#include <vector>

namespace fsce {

// One contrasted proposal: embedding z, IoU u with its matched ground
// truth, and the ground truth's (foreground) class label y.
struct ProposalRecord {
  std::vector<double> z;
  double u = 0.0;
  int y = 0;
};

// Re-weighting g(u) applied on top of the hard IoU cut-off.
enum class ReweightMode {
  kOne,    // g(u) = 1
  kLinear, // g(u) = u
  kExpm1,  // g(u) = e^u - 1
};

ReweightMode reweight_mode_from_string(const std::string& s);  // "one" | "linear" | "expm1"
std::string to_string(ReweightMode m);

struct CpeConfig {
  double temperature = 0.2;          // tau
  double phi = 0.7;                  // consistency threshold
  ReweightMode reweight = ReweightMode::kOne;
  double lambda = 0.5;               // weight inside the total objective

  void validate() const;  // throws on tau<=0, lambda<=0, phi outside [0,1]
};

// f(u) = 1{u >= phi} * g(u). Zero below the cut-off.
double consistency_weight(double u, const CpeConfig& cfg);

// Supervised-contrastive term for anchor i over the whole batch.
// Embeddings are normalized internally; the denominator ranges over every
// other batch member. Anchors without a same-label partner contribute 0.
double per_anchor_loss(const std::vector<ProposalRecord>& batch, int i, double tau);

// Mean over anchors of consistency-weighted per-anchor terms.
double cpe_loss(const std::vector<ProposalRecord>& batch, const CpeConfig& cfg);

// Same value, plus the analytic gradient with respect to every raw
// (unnormalized) embedding coordinate. grad matches batch in shape.
double cpe_loss_with_grad(const std::vector<ProposalRecord>& batch, const CpeConfig& cfg,
                          std::vector<std::vector<double>>* grad);

// Eq-style weighted sum of the four fine-tuning loss components.
// Throws (naming the term) if any component is non-finite.
double total_finetune_loss(double l_rpn, double l_cls, double l_reg, double l_cpe, double lambda);

}  // namespace fsce

#endif  // FSCE_CPE_LOSS_HPP

#include "fsce/cpe_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fsce {

ReweightMode reweight_mode_from_string(const std::string& s) {
  if (s == "one") return ReweightMode::kOne;
  if (s == "linear") return ReweightMode::kLinear;
  if (s == "expm1") return ReweightMode::kExpm1;
  throw std::invalid_argument("unknown reweight mode '" + s + "' (expected one|linear|expm1)");
}

std::string to_string(ReweightMode m) {
  switch (m) {
    case ReweightMode::kOne: return "one";
    case ReweightMode::kLinear: return "linear";
    case ReweightMode::kExpm1: return "expm1";
  }
  return "?";
}

void CpeConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("cpe.temperature must be > 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("cpe.lambda must be > 0");
  if (!(phi >= 0.0 && phi <= 1.0)) throw std::invalid_argument("cpe.phi must lie in [0,1]");
}

double consistency_weight(double u, const CpeConfig& cfg) {
  if (u < cfg.phi) return 0.0;
  switch (cfg.reweight) {
    case ReweightMode::kOne: return 1.0;
    case ReweightMode::kLinear: return u;
    case ReweightMode::kExpm1: return std::expm1(u);
  }
  return 0.0;
}

namespace {

// Normalized copies of the batch embeddings; throws on zero-norm input.
std::vector<std::vector<double>> normalized_embeddings(const std::vector<ProposalRecord>& batch) {
  std::vector<std::vector<double>> nz(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& z = batch[i].z;
    if (i > 0 && z.size() != batch[0].z.size())
      throw std::invalid_argument("cpe batch embeddings disagree in dimension");
    double sq = 0.0;
    for (double v : z) sq += v * v;
    const double norm = std::sqrt(sq);
    if (!(norm > 1e-12))
      throw std::invalid_argument("cpe batch contains a zero-norm embedding (index " +
                                  std::to_string(i) + ")");
    nz[i].resize(z.size());
    for (size_t d = 0; d < z.size(); ++d) nz[i][d] = z[d] / norm;
  }
  return nz;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t d = 0; d < a.size(); ++d) s += a[d] * b[d];
  return s;
}

// Per-anchor term given precomputed normalized embeddings.
double anchor_term(const std::vector<std::vector<double>>& nz,
                   const std::vector<ProposalRecord>& batch, int i, double tau) {
  const int n = static_cast<int>(batch.size());
  int positives = 0;
  for (int j = 0; j < n; ++j)
    if (j != i && batch[j].y == batch[i].y) ++positives;
  if (positives == 0) return 0.0;

  std::vector<double> sim(n, 0.0);
  double max_sim = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    if (k == i) continue;
    sim[k] = dot(nz[i], nz[k]) / tau;
    max_sim = std::max(max_sim, sim[k]);
  }
  // log-sum-exp with max subtraction; denominator spans all k != i
  double sum_exp = 0.0;
  for (int k = 0; k < n; ++k)
    if (k != i) sum_exp += std::exp(sim[k] - max_sim);
  const double lse = max_sim + std::log(sum_exp);

  double acc = 0.0;
  for (int j = 0; j < n; ++j)
    if (j != i && batch[j].y == batch[i].y) acc += sim[j] - lse;
  return -acc / positives;
}

}  // namespace

double per_anchor_loss(const std::vector<ProposalRecord>& batch, int i, double tau) {
  if (batch.size() < 2) throw std::invalid_argument("per_anchor_loss: batch must have N >= 2");
  if (i < 0 || i >= static_cast<int>(batch.size()))
    throw std::invalid_argument("per_anchor_loss: anchor index out of range");
  if (!(tau > 0.0)) throw std::invalid_argument("per_anchor_loss: tau must be > 0");
  return anchor_term(normalized_embeddings(batch), batch, i, tau);
}

double cpe_loss(const std::vector<ProposalRecord>& batch, const CpeConfig& cfg) {
  return cpe_loss_with_grad(batch, cfg, nullptr);
}

double cpe_loss_with_grad(const std::vector<ProposalRecord>& batch, const CpeConfig& cfg,
                          std::vector<std::vector<double>>* grad) {
  cfg.validate();
  const int n = static_cast<int>(batch.size());
  if (grad) {
    grad->assign(n, {});
    for (int i = 0; i < n; ++i) (*grad)[i].assign(batch[i].z.size(), 0.0);
  }
  if (n == 0) return 0.0;

  const auto nz = normalized_embeddings(batch);
  const double tau = cfg.temperature;

  std::vector<double> weight(n);
  for (int i = 0; i < n; ++i) weight[i] = consistency_weight(batch[i].u, cfg) / n;

  std::vector<int> positives(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i && batch[j].y == batch[i].y) ++positives[i];

  if (n == 1) return 0.0;  // lone record: no partner, loss 0 by convention

  // similarity matrix in the normalized space (s[i][k] = cos/tau)
  std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int k = i + 1; k < n; ++k) sim[i][k] = sim[k][i] = dot(nz[i], nz[k]) / tau;

  // row softmax over k != i, max-subtracted
  std::vector<std::vector<double>> prob(n, std::vector<double>(n, 0.0));
  std::vector<double> lse(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, sim[i][k]);
    double se = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) se += std::exp(sim[i][k] - mx);
    lse[i] = mx + std::log(se);
    for (int k = 0; k < n; ++k)
      if (k != i) prob[i][k] = std::exp(sim[i][k] - mx) / se;
  }

  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (weight[i] == 0.0 || positives[i] == 0) continue;
    double acc = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i && batch[j].y == batch[i].y) acc += sim[i][j] - lse[i];
    loss += weight[i] * (-acc / positives[i]);
  }

  if (grad) {
    // dL/ds[i][k] = w_i * (p_ik - 1{y_k=y_i}/m_i) for contributing anchors
    std::vector<std::vector<double>> gs(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
      if (weight[i] == 0.0 || positives[i] == 0) continue;
      for (int k = 0; k < n; ++k) {
        if (k == i) continue;
        const double pos = (batch[k].y == batch[i].y) ? 1.0 / positives[i] : 0.0;
        gs[i][k] = weight[i] * (prob[i][k] - pos);
      }
    }
    for (int i = 0; i < n; ++i) {
      const size_t dim = batch[i].z.size();
      // gradient w.r.t. the normalized embedding
      std::vector<double> gn(dim, 0.0);
      for (int k = 0; k < n; ++k) {
        if (k == i) continue;
        const double c = (gs[i][k] + gs[k][i]) / tau;
        if (c == 0.0) continue;
        for (size_t d = 0; d < dim; ++d) gn[d] += c * nz[k][d];
      }
      // through z~ = z/||z||: project out the radial component
      double sq = 0.0;
      for (double v : batch[i].z) sq += v * v;
      const double norm = std::sqrt(sq);
      const double radial = dot(gn, nz[i]);
      for (size_t d = 0; d < dim; ++d) (*grad)[i][d] = (gn[d] - radial * nz[i][d]) / norm;
    }
  }
  return loss;
}

double total_finetune_loss(double l_rpn, double l_cls, double l_reg, double l_cpe,
                           double lambda) {
  const char* names[4] = {"l_rpn", "l_cls", "l_reg", "l_cpe"};
  const double vals[4] = {l_rpn, l_cls, l_reg, l_cpe};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(vals[i]))
      throw std::invalid_argument(std::string("total_finetune_loss: non-finite component ") +
                                  names[i]);
  if (!std::isfinite(lambda))
    throw std::invalid_argument("total_finetune_loss: non-finite lambda");
  return l_rpn + l_cls + l_reg + lambda * l_cpe;
}

}  // namespace fsce

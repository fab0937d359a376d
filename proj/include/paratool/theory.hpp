#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "paratool/gating.hpp"
#include "paratool/model.hpp"
#include "paratool/pipeline.hpp"

namespace paratool {

struct TheoryConfig {
  int manifest_inputs = 10;   // instances in the estimation manifest
  int alpha_draws = 50;       // composed-gradient draws per manifest input
  int holdout_draws = 100;    // fresh (input, alpha) pairs checked against the bound
  int regime_instances = 20;  // instances for the hard/soft/uniform comparison
  int beta_probes = 64;
  double probe_norm_lo = 1e-3;
  double probe_norm_hi = 1e-1;
  double epsilon_fraction = 0.1;  // eps = fraction * J(x)
  int radius_probes = 100;
  uint64_t seed = 0;
};

// Suprema taken over a recorded sample manifest; the manifest itself (instance
// indices, seed) rides along so the estimates are reproducible.
struct TheoryEstimates {
  double g_max = 0.0;    // G: max per-tool input-gradient norm
  double rho = 0.0;      // gradient alignment coefficient, floored at 0
  double delta_g = 0.0;  // max aggregation residual norm
  int zero_grad_excluded = 0;
  std::vector<int> manifest_instances;
  uint64_t seed = 0;
};

// G sqrt(rho + (1-rho) * ||alpha||^2) + delta_g, increasing in ||alpha||^2
// whenever rho < 1.
double theorem1_bound(double g_max, double rho, const CompositionWeights& alpha, double delta_g);
double theorem1_bound_l2(double g_max, double rho, double alpha_l2_squared, double delta_g);

// (sqrt(g^2 + 2 beta eps) - g) / beta; the beta -> 0 limit is eps / g.
// beta == 0 with g == 0 is unbounded and rejected.
double radius_lower_bound(double gnorm, double beta, double eps);

// Gradient of the action loss w.r.t. the input embeddings of the prompt
// (context) rows, flattened. Teacher-forced action rows are the target side
// and are excluded.
Tensor input_gradient(const TransformerModel& model, const ComposedDelta* delta,
                      const TokenSequence& seq);

// Loss of the sequence with the prompt-row embeddings shifted by
// `perturbation` (span rows stay untouched).
double perturbed_loss(const TransformerModel& model, const ComposedDelta* delta,
                      const TokenSequence& seq, const Tensor& perturbation);

// rho over per-tool gradient lists: per_tool[t][i] is tool t's gradient at
// manifest input i. Zero-norm gradients are excluded and counted.
double estimate_rho(const std::vector<std::vector<Tensor>>& per_tool, int* zero_excluded);

struct ManifestDraw {
  int input_index = 0;
  std::vector<double> alpha;  // over the full toolset order
  Tensor composed_grad;
};

// (G, delta_g) over the manifest: G from the per-tool gradients, delta_g from
// the draws' residuals against the alpha-weighted per-tool sums.
std::pair<double, double> estimate_G_delta(const std::vector<std::vector<Tensor>>& per_tool,
                                           const std::vector<ManifestDraw>& draws);

// max over probe directions of 2 (J(x+d) - J(x) - <g, d>) / ||d||^2, floored
// at 0. Directions are random with norms log-spaced in [lo, hi].
double estimate_beta(const std::function<double(const Tensor&)>& loss_at_offset,
                     const Tensor& grad, int probes, double lo, double hi, Rng& rng);

struct RegimeRecord {
  int instance = 0;
  std::string regime;  // hard | soft | uniform
  double alpha_l2sq = 0.0;
  double grad_norm = 0.0;
  double bound = 0.0;
  double beta = 0.0;
  double eps = 0.0;
  double radius_lb = 0.0;
  double probe_pass_rate = 0.0;
};

struct RegimeStats {
  double norm_mean = 0.0, norm_std = 0.0;
  double bound_mean = 0.0;
  double radius_mean = 0.0;
  double probe_pass_mean = 0.0;
  int count = 0;
};

struct RobustnessReport {
  TheoryEstimates estimates;
  std::vector<RegimeRecord> records;
  int manifest_violations = 0;
  int holdout_total = 0;
  int holdout_violations = 0;
  double holdout_max_excess = 0.0;
  std::map<std::string, RegimeStats> regime_stats;
};

RobustnessReport soft_vs_hard_report(const TransformerModel& model, const AdapterStore& store,
                                     const GateNetwork& gate,
                                     const std::map<int, Tensor>& doc_embeddings,
                                     const std::vector<TraceInstance>& instances,
                                     const Toolset& toolset, const Vocabulary& vocab,
                                     const TheoryConfig& config, int threads);

void save_robustness_report(const RobustnessReport& report, const std::string& jsonl_path,
                            const std::string& summary_path);

}  // namespace paratool

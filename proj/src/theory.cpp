#include "paratool/theory.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "paratool/parallel.hpp"

namespace paratool {

using ordered_json = nlohmann::ordered_json;

namespace {

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

double theorem1_bound_l2(double g_max, double rho, double alpha_l2_squared, double delta_g) {
  if (g_max < 0.0 || delta_g < 0.0 || rho < 0.0 || rho > 1.0) {
    throw std::invalid_argument("theorem1_bound: estimates out of range");
  }
  return g_max * std::sqrt(rho + (1.0 - rho) * alpha_l2_squared) + delta_g;
}

double theorem1_bound(double g_max, double rho, const CompositionWeights& alpha, double delta_g) {
  alpha.validate(1e-9);
  return theorem1_bound_l2(g_max, rho, alpha.l2_squared(), delta_g);
}

double radius_lower_bound(double gnorm, double beta, double eps) {
  if (gnorm < 0.0 || beta < 0.0 || eps <= 0.0) {
    throw std::invalid_argument("radius_lower_bound: bad inputs");
  }
  if (beta == 0.0) {
    if (gnorm == 0.0) {
      throw std::invalid_argument("radius_lower_bound: unbounded at beta=0, gnorm=0");
    }
    return eps / gnorm;
  }
  return (std::sqrt(gnorm * gnorm + 2.0 * beta * eps) - gnorm) / beta;
}

Tensor input_gradient(const TransformerModel& model, const ComposedDelta* delta,
                      const TokenSequence& seq) {
  Tape tape;
  BoundModel bound = bind_model(tape, model, false);
  BoundComposition bc;
  const BoundComposition* pbc = nullptr;
  if (delta != nullptr && !delta->empty()) {
    bc = bind_composition(tape, *delta, false);
    pbc = &bc;
  }
  Var x = tape.input(input_embeddings(model, seq.tokens), true);
  Var logits = model_forward_embedded(tape, bound, model.config, x, pbc);
  Var loss = action_nll(logits, seq);
  tape.backward(loss);

  const Tensor& gx = tape.grad(x);
  const int h = model.config.hidden;
  Tensor flat({seq.span_start * h});
  for (int i = 0; i < seq.span_start; ++i) {
    for (int j = 0; j < h; ++j) flat[static_cast<size_t>(i) * h + j] = gx.at(i, j);
  }
  return flat;
}

double perturbed_loss(const TransformerModel& model, const ComposedDelta* delta,
                      const TokenSequence& seq, const Tensor& perturbation) {
  const int h = model.config.hidden;
  if (static_cast<int>(perturbation.size()) != seq.span_start * h) {
    throw std::invalid_argument("perturbed_loss: perturbation length mismatch");
  }
  Tensor x = input_embeddings(model, seq.tokens);
  for (int i = 0; i < seq.span_start; ++i) {
    for (int j = 0; j < h; ++j) x.at(i, j) += perturbation[static_cast<size_t>(i) * h + j];
  }
  Tape tape;
  BoundModel bound = bind_model(tape, model, false);
  BoundComposition bc;
  const BoundComposition* pbc = nullptr;
  if (delta != nullptr && !delta->empty()) {
    bc = bind_composition(tape, *delta, false);
    pbc = &bc;
  }
  Var vx = tape.constant(std::move(x));
  Var logits = model_forward_embedded(tape, bound, model.config, vx, pbc);
  return tape.value(action_nll(logits, seq)).item();
}

double estimate_rho(const std::vector<std::vector<Tensor>>& per_tool, int* zero_excluded) {
  if (per_tool.size() < 2) throw std::invalid_argument("estimate_rho: need at least two tools");
  const size_t inputs = per_tool[0].size();
  if (inputs == 0) throw std::invalid_argument("estimate_rho: need at least one input");
  int excluded = 0;
  double best = -1.0;
  for (size_t i = 0; i < per_tool.size(); ++i) {
    for (size_t j = i + 1; j < per_tool.size(); ++j) {
      for (size_t k = 0; k < inputs; ++k) {
        const Tensor& gi = per_tool[i][k];
        const Tensor& gj = per_tool[j][k];
        if (l2_norm(gi) == 0.0 || l2_norm(gj) == 0.0) {
          ++excluded;
          continue;
        }
        best = std::max(best, cosine(gi, gj));
      }
    }
  }
  if (zero_excluded != nullptr) *zero_excluded = excluded;
  return std::max(0.0, best);
}

std::pair<double, double> estimate_G_delta(const std::vector<std::vector<Tensor>>& per_tool,
                                           const std::vector<ManifestDraw>& draws) {
  double g_max = 0.0;
  for (const auto& tool_grads : per_tool) {
    for (const auto& g : tool_grads) g_max = std::max(g_max, l2_norm(g));
  }
  double delta_g = 0.0;
  for (const auto& draw : draws) {
    Tensor residual = draw.composed_grad;
    for (size_t t = 0; t < per_tool.size(); ++t) {
      const Tensor& gt = per_tool[t][static_cast<size_t>(draw.input_index)];
      const double a = draw.alpha[t];
      for (size_t i = 0; i < residual.size(); ++i) residual[i] -= a * gt[i];
    }
    delta_g = std::max(delta_g, l2_norm(residual));
  }
  return {g_max, delta_g};
}

double estimate_beta(const std::function<double(const Tensor&)>& loss_at_offset,
                     const Tensor& grad, int probes, double lo, double hi, Rng& rng) {
  if (probes < 1) throw std::invalid_argument("estimate_beta: probes must be >= 1");
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("estimate_beta: bad norm range");
  const size_t dim = grad.size();
  const Tensor zero({static_cast<int>(dim)});
  const double j0 = loss_at_offset(zero);
  if (!std::isfinite(j0)) throw std::runtime_error("estimate_beta: non-finite base loss");

  double beta = 0.0;
  for (int p = 0; p < probes; ++p) {
    Tensor dir({static_cast<int>(dim)});
    for (size_t i = 0; i < dim; ++i) dir[i] = rng.normal();
    const double norm = l2_norm(dir);
    if (norm == 0.0) continue;
    const double target =
        probes == 1 ? lo
                    : lo * std::pow(hi / lo, static_cast<double>(p) / (probes - 1));
    double inner = 0.0;
    for (size_t i = 0; i < dim; ++i) {
      dir[i] *= target / norm;
      inner += grad[i] * dir[i];
    }
    const double j1 = loss_at_offset(dir);
    if (!std::isfinite(j1)) throw std::runtime_error("estimate_beta: non-finite probe");
    beta = std::max(beta, 2.0 * (j1 - j0 - inner) / (target * target));
  }
  return std::max(0.0, beta);
}

RobustnessReport soft_vs_hard_report(const TransformerModel& model, const AdapterStore& store,
                                     const GateNetwork& gate,
                                     const std::map<int, Tensor>& doc_embeddings,
                                     const std::vector<TraceInstance>& instances,
                                     const Toolset& toolset, const Vocabulary& vocab,
                                     const TheoryConfig& config, int threads) {
  if (instances.empty()) throw std::invalid_argument("soft_vs_hard_report: no instances");
  RobustnessReport report;
  Rng root(config.seed);

  // document-free instances only
  std::vector<const TraceInstance*> free_instances;
  for (const auto& ti : instances) {
    if (ti.format == PromptFormat::document_free) free_instances.push_back(&ti);
  }
  if (free_instances.empty()) {
    throw std::invalid_argument("soft_vs_hard_report: no document-free instances");
  }

  const std::vector<int> tool_ids = toolset.ids();
  const size_t n_tools = tool_ids.size();

  // ---- estimation manifest -------------------------------------------------
  const int m_inputs =
      std::min<int>(config.manifest_inputs, static_cast<int>(free_instances.size()));
  std::vector<int> manifest;
  {
    std::vector<int> order(free_instances.size());
    std::iota(order.begin(), order.end(), 0);
    Rng pick = root.split("manifest-pick");
    pick.shuffle(order);
    manifest.assign(order.begin(), order.begin() + m_inputs);
    std::sort(manifest.begin(), manifest.end());
  }
  report.estimates.manifest_instances = manifest;
  report.estimates.seed = config.seed;

  std::vector<TokenSequence> seqs(manifest.size());
  for (size_t k = 0; k < manifest.size(); ++k) {
    seqs[k] = make_training_sequence(*free_instances[static_cast<size_t>(manifest[k])], toolset,
                                     vocab);
  }

  // per-tool gradients on every manifest input
  std::vector<std::vector<Tensor>> per_tool(n_tools, std::vector<Tensor>(manifest.size()));
  {
    std::vector<std::pair<int, int>> jobs;
    for (size_t t = 0; t < n_tools; ++t) {
      for (size_t k = 0; k < manifest.size(); ++k) jobs.emplace_back(static_cast<int>(t), static_cast<int>(k));
    }
    parallel_for(static_cast<int>(jobs.size()), threads, [&](int j) {
      const auto [t, k] = jobs[static_cast<size_t>(j)];
      const ComposedDelta delta = compose_from_store(
          store, CompositionWeights::one_hot({tool_ids[static_cast<size_t>(t)]},
                                             tool_ids[static_cast<size_t>(t)]));
      per_tool[static_cast<size_t>(t)][static_cast<size_t>(k)] =
          input_gradient(model, &delta, seqs[static_cast<size_t>(k)]);
    });
  }

  // draw alphas over the full toolset: softmax of scaled gaussians, a mix of
  // temperatures from soft to sharp
  const auto draw_alpha = [&](Rng& rng) {
    static const double kTemps[] = {0.5, 1.0, 2.0, 4.0};
    const double tau = kTemps[rng.uniform_int(0, 3)];
    std::vector<double> a(n_tools);
    double mx = -1e300;
    for (double& v : a) {
      v = tau * rng.normal();
      mx = std::max(mx, v);
    }
    double denom = 0.0;
    for (double& v : a) {
      v = std::exp(v - mx);
      denom += v;
    }
    for (double& v : a) v /= denom;
    return a;
  };

  const auto composed_gradient = [&](const std::vector<double>& alpha, int seq_index) {
    CompositionWeights w;
    w.tool_ids = tool_ids;
    w.weights = alpha;
    const ComposedDelta delta = compose_from_store(store, w);
    return input_gradient(model, &delta, seqs[static_cast<size_t>(seq_index)]);
  };

  std::vector<ManifestDraw> draws(static_cast<size_t>(config.alpha_draws) * manifest.size());
  {
    Rng arng = root.split("alpha-draws");
    std::vector<std::vector<double>> alphas(draws.size());
    std::vector<int> inputs(draws.size());
    size_t d = 0;
    for (size_t k = 0; k < manifest.size(); ++k) {
      for (int a = 0; a < config.alpha_draws; ++a, ++d) {
        alphas[d] = draw_alpha(arng);
        inputs[d] = static_cast<int>(k);
      }
    }
    parallel_for(static_cast<int>(draws.size()), threads, [&](int i) {
      ManifestDraw md;
      md.input_index = inputs[static_cast<size_t>(i)];
      md.alpha = alphas[static_cast<size_t>(i)];
      md.composed_grad = composed_gradient(md.alpha, md.input_index);
      draws[static_cast<size_t>(i)] = std::move(md);
    });
  }

  report.estimates.rho = estimate_rho(per_tool, &report.estimates.zero_grad_excluded);
  const auto [g_max, delta_g] = estimate_G_delta(per_tool, draws);
  report.estimates.g_max = g_max;
  report.estimates.delta_g = delta_g;

  // zero violations inside the manifest, by the sup construction
  for (const auto& draw : draws) {
    double l2sq = 0.0;
    for (const double a : draw.alpha) l2sq += a * a;
    const double bound = theorem1_bound_l2(g_max, report.estimates.rho, l2sq, delta_g);
    if (l2_norm(draw.composed_grad) > bound * (1.0 + 1e-9) + 1e-12) ++report.manifest_violations;
  }

  // held-out alpha draws
  {
    Rng hrng = root.split("holdout");
    std::vector<std::vector<double>> alphas(static_cast<size_t>(config.holdout_draws));
    std::vector<int> inputs(alphas.size());
    for (size_t i = 0; i < alphas.size(); ++i) {
      alphas[i] = draw_alpha(hrng);
      inputs[i] = hrng.uniform_int(0, static_cast<int>(manifest.size()) - 1);
    }
    std::vector<double> excess(alphas.size(), 0.0);
    parallel_for(static_cast<int>(alphas.size()), threads, [&](int i) {
      const Tensor g = composed_gradient(alphas[static_cast<size_t>(i)],
                                         inputs[static_cast<size_t>(i)]);
      double l2sq = 0.0;
      for (const double a : alphas[static_cast<size_t>(i)]) l2sq += a * a;
      const double bound = theorem1_bound_l2(g_max, report.estimates.rho, l2sq, delta_g);
      excess[static_cast<size_t>(i)] = l2_norm(g) - bound;
    });
    report.holdout_total = static_cast<int>(alphas.size());
    for (const double e : excess) {
      if (e > 1e-9) ++report.holdout_violations;
      report.holdout_max_excess = std::max(report.holdout_max_excess, e);
    }
  }

  // ---- hard / soft / uniform regimes ---------------------------------------
  const int n_regime =
      std::min<int>(config.regime_instances, static_cast<int>(free_instances.size()));
  std::vector<int> regime_instances(static_cast<size_t>(n_regime));
  {
    std::vector<int> order(free_instances.size());
    std::iota(order.begin(), order.end(), 0);
    Rng pick = root.split("regime-pick");
    pick.shuffle(order);
    for (int i = 0; i < n_regime; ++i) regime_instances[static_cast<size_t>(i)] = order[static_cast<size_t>(i)];
    std::sort(regime_instances.begin(), regime_instances.end());
  }

  struct RegimeJob {
    int instance;
    std::string regime;
    CompositionWeights weights;
  };
  std::vector<RegimeJob> jobs;
  for (const int idx : regime_instances) {
    const TraceInstance& ti = *free_instances[static_cast<size_t>(idx)];
    const Tensor context = encode_context(model, format_instance(ti, toolset, vocab));
    std::vector<const Tensor*> docs;
    for (const int id : ti.candidates) docs.push_back(&doc_embeddings.at(id));
    const CompositionWeights soft = gate_scores(gate, context, ti.candidates, docs);
    const CompositionWeights hard = CompositionWeights::one_hot(ti.candidates, soft.argmax_tool());
    const CompositionWeights uniform = CompositionWeights::uniform(ti.candidates);
    jobs.push_back({idx, "hard", hard});
    jobs.push_back({idx, "soft", soft});
    jobs.push_back({idx, "uniform", uniform});
  }

  // shared per-instance smoothness estimate: the max over the three regimes
  std::map<int, double> shared_beta;
  std::map<int, double> shared_eps;
  std::vector<RegimeRecord> records(jobs.size());
  std::vector<double> betas(jobs.size(), 0.0);
  std::vector<double> j0s(jobs.size(), 0.0);
  std::vector<Tensor> grads(jobs.size());

  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const RegimeJob& job = jobs[static_cast<size_t>(i)];
    const TraceInstance& ti = *free_instances[static_cast<size_t>(job.instance)];
    const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
    const ComposedDelta delta = compose_from_store(store, job.weights);
    grads[static_cast<size_t>(i)] = input_gradient(model, &delta, seq);
    const Tensor zero({static_cast<int>(grads[static_cast<size_t>(i)].size())});
    j0s[static_cast<size_t>(i)] = perturbed_loss(model, &delta, seq, zero);
    Rng brng = root.split("beta").split(static_cast<uint64_t>(i));
    betas[static_cast<size_t>(i)] = estimate_beta(
        [&](const Tensor& offset) { return perturbed_loss(model, &delta, seq, offset); },
        grads[static_cast<size_t>(i)], config.beta_probes, config.probe_norm_lo,
        config.probe_norm_hi, brng);
  });

  for (size_t i = 0; i < jobs.size(); ++i) {
    const int inst = jobs[i].instance;
    shared_beta[inst] = std::max(shared_beta[inst], betas[i]);
    // epsilon from the soft regime's base loss (identical across regimes up to
    // the composed delta; use the per-job loss max for a shared budget)
    shared_eps[inst] = std::max(shared_eps[inst], config.epsilon_fraction * j0s[i]);
  }

  parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
    const RegimeJob& job = jobs[static_cast<size_t>(i)];
    const TraceInstance& ti = *free_instances[static_cast<size_t>(job.instance)];
    const TokenSequence seq = make_training_sequence(ti, toolset, vocab);
    const ComposedDelta delta = compose_from_store(store, job.weights);

    RegimeRecord rec;
    rec.instance = job.instance;
    rec.regime = job.regime;
    rec.alpha_l2sq = job.weights.l2_squared();
    rec.grad_norm = l2_norm(grads[static_cast<size_t>(i)]);
    rec.bound = theorem1_bound_l2(report.estimates.g_max, report.estimates.rho, rec.alpha_l2sq,
                                  report.estimates.delta_g);
    rec.beta = shared_beta.at(job.instance);
    rec.eps = shared_eps.at(job.instance);
    if (rec.eps > 0.0 && (rec.beta > 0.0 || rec.grad_norm > 0.0)) {
      rec.radius_lb = radius_lower_bound(rec.grad_norm, rec.beta, rec.eps);
      // empirical probe: random perturbations at the radius
      Rng prng = root.split("radius").split(static_cast<uint64_t>(i));
      int pass = 0;
      const size_t dim = grads[static_cast<size_t>(i)].size();
      for (int p = 0; p < config.radius_probes; ++p) {
        Tensor dir({static_cast<int>(dim)});
        double norm = 0.0;
        for (size_t d = 0; d < dim; ++d) {
          dir[d] = prng.normal();
          norm += dir[d] * dir[d];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
          ++pass;
          continue;
        }
        for (size_t d = 0; d < dim; ++d) dir[d] *= rec.radius_lb / norm;
        const double j1 = perturbed_loss(model, &delta, seq, dir);
        if (j1 - j0s[static_cast<size_t>(i)] <= rec.eps + 1e-12) ++pass;
      }
      rec.probe_pass_rate =
          config.radius_probes > 0 ? static_cast<double>(pass) / config.radius_probes : 1.0;
    }
    records[static_cast<size_t>(i)] = std::move(rec);
  });
  report.records = std::move(records);

  for (const auto& rec : report.records) {
    RegimeStats& st = report.regime_stats[rec.regime];
    st.norm_mean += rec.grad_norm;
    st.bound_mean += rec.bound;
    st.radius_mean += rec.radius_lb;
    st.probe_pass_mean += rec.probe_pass_rate;
    ++st.count;
  }
  for (auto& [name, st] : report.regime_stats) {
    (void)name;
    if (st.count == 0) continue;
    st.norm_mean /= st.count;
    st.bound_mean /= st.count;
    st.radius_mean /= st.count;
    st.probe_pass_mean /= st.count;
  }
  for (const auto& rec : report.records) {
    RegimeStats& st = report.regime_stats[rec.regime];
    const double d = rec.grad_norm - st.norm_mean;
    st.norm_std += d * d;
  }
  for (auto& [name, st] : report.regime_stats) {
    (void)name;
    if (st.count > 1) st.norm_std = std::sqrt(st.norm_std / (st.count - 1));
  }
  return report;
}

void save_robustness_report(const RobustnessReport& report, const std::string& jsonl_path,
                            const std::string& summary_path) {
  {
    std::ofstream os(jsonl_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + jsonl_path);
    ordered_json est;
    est["kind"] = "estimates";
    est["G"] = report.estimates.g_max;
    est["rho"] = report.estimates.rho;
    est["delta_g"] = report.estimates.delta_g;
    est["zero_grad_excluded"] = report.estimates.zero_grad_excluded;
    est["manifest_instances"] = report.estimates.manifest_instances;
    est["seed"] = report.estimates.seed;
    est["manifest_violations"] = report.manifest_violations;
    est["holdout_total"] = report.holdout_total;
    est["holdout_violations"] = report.holdout_violations;
    est["holdout_max_excess"] = report.holdout_max_excess;
    os << est.dump() << "\n";
    for (const auto& rec : report.records) {
      ordered_json j;
      j["kind"] = "record";
      j["instance"] = rec.instance;
      j["regime"] = rec.regime;
      j["alpha_l2sq"] = rec.alpha_l2sq;
      j["grad_norm"] = rec.grad_norm;
      j["bound"] = rec.bound;
      j["beta"] = rec.beta;
      j["eps"] = rec.eps;
      j["radius_lb"] = rec.radius_lb;
      j["probe_pass_rate"] = rec.probe_pass_rate;
      os << j.dump() << "\n";
    }
  }
  {
    std::ofstream os(summary_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + summary_path);
    os << std::fixed << std::setprecision(6);
    os << "estimates: G=" << report.estimates.g_max << " rho=" << report.estimates.rho
       << " delta_g=" << report.estimates.delta_g
       << " manifest_violations=" << report.manifest_violations << " holdout="
       << report.holdout_violations << "/" << report.holdout_total << "\n";
    os << std::left << std::setw(10) << "regime" << std::right << std::setw(12) << "n"
       << std::setw(14) << "norm_mean" << std::setw(14) << "norm_std" << std::setw(14)
       << "bound_mean" << std::setw(14) << "radius_mean" << std::setw(14) << "probe_pass"
       << "\n";
    for (const auto& [name, st] : report.regime_stats) {
      os << std::left << std::setw(10) << name << std::right << std::setw(12) << st.count
         << std::setw(14) << st.norm_mean << std::setw(14) << st.norm_std << std::setw(14)
         << st.bound_mean << std::setw(14) << st.radius_mean << std::setw(14)
         << st.probe_pass_mean << "\n";
    }
  }
}

}  // namespace paratool

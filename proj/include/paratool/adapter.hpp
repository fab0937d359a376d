#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "paratool/autodiff.hpp"
#include "paratool/rng.hpp"
#include "paratool/tensor.hpp"

namespace paratool {

struct AdapterConfig {
  int rank = 16;
  double scale = 64.0;
  bool attach_up = true;
  bool attach_down = true;
  double init_std = 0.02;
};

// Per-tool low-rank factors for the FFN matrices of every layer. A site's
// delta is (scale/rank) * A * B^T with A: out x r and B: in x r. B starts at
// zero so a fresh adapter is an exact no-op.
struct LowRankAdapter {
  int tool_id = -1;
  int rank = 0;
  double scale = 0.0;

  struct LayerFactors {
    Tensor up_a, up_b;      // up-projection site (out=ffn, in=hidden)
    Tensor down_a, down_b;  // down-projection site (out=hidden, in=ffn)
  };
  std::vector<LayerFactors> layers;

  double scale_over_rank() const { return scale / rank; }
  bool has_up() const { return !layers.empty() && !layers[0].up_a.empty(); }
  bool has_down() const { return !layers.empty() && !layers[0].down_a.empty(); }
  uint64_t factor_hash() const;
};

struct AdapterStore {
  AdapterConfig config;
  int model_layers = 0;
  int model_hidden = 0;
  int model_ffn = 0;
  std::map<int, LowRankAdapter> adapters;  // keyed by tool id, ordered

  const LowRankAdapter& at(int tool_id) const;
  LowRankAdapter& at(int tool_id);
};

// Simplex weights over an ordered candidate list.
struct CompositionWeights {
  std::vector<int> tool_ids;
  std::vector<double> weights;

  int size() const { return static_cast<int>(tool_ids.size()); }
  // index of the largest weight; ties broken by smaller tool id
  int argmax_index() const;
  int argmax_tool() const { return tool_ids[static_cast<size_t>(argmax_index())]; }
  double l2_squared() const;
  double entropy() const;
  void validate(double tol = 1e-9) const;

  static CompositionWeights uniform(const std::vector<int>& ids);
  static CompositionWeights one_hot(const std::vector<int>& ids, int tool_id);
};

// Lazy weighted composition; semantics are defined by materialize_site.
struct ComposedDelta {
  std::vector<const LowRankAdapter*> adapters;
  std::vector<double> weights;

  bool empty() const { return adapters.empty(); }
};

LowRankAdapter init_adapter(int tool_id, const AdapterConfig& config, int model_layers,
                            int model_hidden, int model_ffn, Rng& rng);

void init_store(AdapterStore& store, const std::vector<int>& tool_ids, const AdapterConfig& config,
                int model_layers, int model_hidden, int model_ffn, Rng& rng);

ComposedDelta compose(const std::vector<const LowRankAdapter*>& adapters,
                      const CompositionWeights& weights);
ComposedDelta compose_from_store(const AdapterStore& store, const CompositionWeights& weights);

// Dense sum_i w_i (s/r) A_i B_i^T at one site; the oracle for the factored path.
Tensor materialize_site(const ComposedDelta& delta, int layer, bool up_site, int out_dim,
                        int in_dim);

// y = W x + (materialized delta) x computed without forming any dense delta.
// x is a length-in vector, W is out x in.
Tensor apply_site_vector(const Tensor& x, const Tensor& w, const ComposedDelta& delta, int layer,
                         bool up_site);

// ---- tape bindings ------------------------------------------------------

struct BoundAdapter {
  struct Site {
    Var a, b;
    bool attached = false;
  };
  std::vector<Site> up, down;  // per layer
  double scale_over_rank = 0.0;
  int tool_id = -1;
};

struct BoundComposition {
  std::vector<BoundAdapter> adapters;
  std::vector<double> weights;
};

BoundAdapter bind_adapter(Tape& tape, const LowRankAdapter& adapter, bool trainable = true);
BoundComposition bind_composition(Tape& tape, const ComposedDelta& delta, bool trainable = true);

// y = x W^T + sum_i w_i c_i (x B_i) A_i^T for the site, never forming A B^T
Var apply_low_rank(Var x, Var w, const BoundComposition* comp, int layer, bool up_site);

// ---- store persistence ---------------------------------------------------

void save_store(const AdapterStore& store, const std::string& path);
// tool_filter empty -> load everything; unknown requested id -> error
AdapterStore load_store(const std::string& path,
                        const std::set<int>& tool_filter = {});

}  // namespace paratool

#include "paratool/adapter.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace paratool {

namespace {

Tensor normal_tensor(std::vector<int> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

uint64_t hash_bytes(uint64_t h, const void* p, size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  for (size_t i = 0; i < n; ++i) {
    h ^= c[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t hash_tensor(uint64_t h, const Tensor& t) {
  return t.empty() ? h : hash_bytes(h, t.data(), t.size() * sizeof(double));
}

}  // namespace

uint64_t LowRankAdapter::factor_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& lf : layers) {
    h = hash_tensor(h, lf.up_a);
    h = hash_tensor(h, lf.up_b);
    h = hash_tensor(h, lf.down_a);
    h = hash_tensor(h, lf.down_b);
  }
  return h;
}

const LowRankAdapter& AdapterStore::at(int tool_id) const {
  const auto it = adapters.find(tool_id);
  if (it == adapters.end()) throw std::out_of_range("no adapter for tool id");
  return it->second;
}

LowRankAdapter& AdapterStore::at(int tool_id) {
  const auto it = adapters.find(tool_id);
  if (it == adapters.end()) throw std::out_of_range("no adapter for tool id");
  return it->second;
}

int CompositionWeights::argmax_index() const {
  if (tool_ids.empty()) throw std::invalid_argument("empty composition");
  int best = 0;
  for (int i = 1; i < size(); ++i) {
    const auto si = static_cast<size_t>(i);
    const auto sb = static_cast<size_t>(best);
    if (weights[si] > weights[sb] ||
        (weights[si] == weights[sb] && tool_ids[si] < tool_ids[sb])) {
      best = i;
    }
  }
  return best;
}

double CompositionWeights::l2_squared() const {
  double s = 0.0;
  for (const double w : weights) s += w * w;
  return s;
}

double CompositionWeights::entropy() const {
  double h = 0.0;
  for (const double w : weights) {
    if (w > 0.0) h -= w * std::log(w);
  }
  return h;
}

void CompositionWeights::validate(double tol) const {
  if (tool_ids.size() != weights.size()) {
    throw std::invalid_argument("composition ids/weights length mismatch");
  }
  double s = 0.0;
  for (const double w : weights) {
    if (w < 0.0) throw std::invalid_argument("composition weight below zero");
    s += w;
  }
  if (std::fabs(s - 1.0) > tol) throw std::invalid_argument("composition weights off the simplex");
}

CompositionWeights CompositionWeights::uniform(const std::vector<int>& ids) {
  CompositionWeights w;
  w.tool_ids = ids;
  w.weights.assign(ids.size(), 1.0 / static_cast<double>(ids.size()));
  return w;
}

CompositionWeights CompositionWeights::one_hot(const std::vector<int>& ids, int tool_id) {
  CompositionWeights w;
  w.tool_ids = ids;
  w.weights.assign(ids.size(), 0.0);
  bool found = false;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == tool_id) {
      w.weights[i] = 1.0;
      found = true;
      break;
    }
  }
  if (!found) throw std::invalid_argument("one_hot: tool id not among candidates");
  return w;
}

LowRankAdapter init_adapter(int tool_id, const AdapterConfig& config, int model_layers,
                            int model_hidden, int model_ffn, Rng& rng) {
  if (config.rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
  LowRankAdapter a;
  a.tool_id = tool_id;
  a.rank = config.rank;
  a.scale = config.scale;
  a.layers.resize(static_cast<size_t>(model_layers));
  for (auto& lf : a.layers) {
    if (config.attach_up) {
      lf.up_a = normal_tensor({model_ffn, config.rank}, config.init_std, rng);
      lf.up_b = Tensor::zeros({model_hidden, config.rank});
    }
    if (config.attach_down) {
      lf.down_a = normal_tensor({model_hidden, config.rank}, config.init_std, rng);
      lf.down_b = Tensor::zeros({model_ffn, config.rank});
    }
  }
  return a;
}

void init_store(AdapterStore& store, const std::vector<int>& tool_ids, const AdapterConfig& config,
                int model_layers, int model_hidden, int model_ffn, Rng& rng) {
  store.config = config;
  store.model_layers = model_layers;
  store.model_hidden = model_hidden;
  store.model_ffn = model_ffn;
  store.adapters.clear();
  for (const int id : tool_ids) {
    Rng sub = rng.split(static_cast<uint64_t>(id));
    store.adapters.emplace(id,
                           init_adapter(id, config, model_layers, model_hidden, model_ffn, sub));
  }
}

ComposedDelta compose(const std::vector<const LowRankAdapter*>& adapters,
                      const CompositionWeights& weights) {
  if (adapters.size() != weights.weights.size()) {
    throw std::invalid_argument("compose: adapters/weights length mismatch");
  }
  weights.validate(1e-9);
  ComposedDelta d;
  d.adapters = adapters;
  d.weights = weights.weights;
  return d;
}

ComposedDelta compose_from_store(const AdapterStore& store, const CompositionWeights& weights) {
  std::vector<const LowRankAdapter*> refs;
  refs.reserve(weights.tool_ids.size());
  for (const int id : weights.tool_ids) refs.push_back(&store.at(id));
  return compose(refs, weights);
}

Tensor materialize_site(const ComposedDelta& delta, int layer, bool up_site, int out_dim,
                        int in_dim) {
  Tensor dense({out_dim, in_dim});
  for (size_t k = 0; k < delta.adapters.size(); ++k) {
    const LowRankAdapter& ad = *delta.adapters[k];
    const auto& lf = ad.layers[static_cast<size_t>(layer)];
    const Tensor& a = up_site ? lf.up_a : lf.down_a;
    const Tensor& b = up_site ? lf.up_b : lf.down_b;
    if (a.empty()) continue;
    const double c = delta.weights[k] * ad.scale_over_rank();
    const int r_cols = a.cols();
    for (int i = 0; i < out_dim; ++i) {
      for (int j = 0; j < in_dim; ++j) {
        double acc = 0.0;
        for (int r = 0; r < r_cols; ++r) acc += a.at(i, r) * b.at(j, r);
        dense.at(i, j) += c * acc;
      }
    }
    add_macs(static_cast<uint64_t>(out_dim) * static_cast<uint64_t>(in_dim) *
             static_cast<uint64_t>(r_cols));
  }
  return dense;
}

Tensor apply_site_vector(const Tensor& x, const Tensor& w, const ComposedDelta& delta, int layer,
                         bool up_site) {
  const int out_dim = w.rows();
  const int in_dim = w.cols();
  if (static_cast<int>(x.size()) != in_dim) {
    throw std::invalid_argument("apply: activation length does not match the site");
  }
  Tensor y({out_dim});
  for (int i = 0; i < out_dim; ++i) {
    double acc = 0.0;
    for (int j = 0; j < in_dim; ++j) acc += w.at(i, j) * x[static_cast<size_t>(j)];
    y[static_cast<size_t>(i)] = acc;
  }
  add_macs(static_cast<uint64_t>(out_dim) * static_cast<uint64_t>(in_dim));

  std::vector<double> tmp;
  for (size_t k = 0; k < delta.adapters.size(); ++k) {
    const LowRankAdapter& ad = *delta.adapters[k];
    const auto& lf = ad.layers[static_cast<size_t>(layer)];
    const Tensor& a = up_site ? lf.up_a : lf.down_a;
    const Tensor& b = up_site ? lf.up_b : lf.down_b;
    if (a.empty()) continue;
    const double c = delta.weights[k] * ad.scale_over_rank();
    const int r_cols = a.cols();
    tmp.assign(static_cast<size_t>(r_cols), 0.0);
    for (int r = 0; r < r_cols; ++r) {
      double acc = 0.0;
      for (int j = 0; j < in_dim; ++j) acc += b.at(j, r) * x[static_cast<size_t>(j)];
      tmp[static_cast<size_t>(r)] = acc;
    }
    for (int i = 0; i < out_dim; ++i) {
      double acc = 0.0;
      for (int r = 0; r < r_cols; ++r) acc += a.at(i, r) * tmp[static_cast<size_t>(r)];
      y[static_cast<size_t>(i)] += c * acc;
    }
    add_macs(static_cast<uint64_t>(r_cols) * static_cast<uint64_t>(in_dim + out_dim));
  }
  return y;
}

BoundAdapter bind_adapter(Tape& tape, const LowRankAdapter& adapter, bool trainable) {
  BoundAdapter b;
  b.tool_id = adapter.tool_id;
  b.scale_over_rank = adapter.scale_over_rank();
  b.up.resize(adapter.layers.size());
  b.down.resize(adapter.layers.size());
  for (size_t l = 0; l < adapter.layers.size(); ++l) {
    const auto& lf = adapter.layers[l];
    if (!lf.up_a.empty()) {
      b.up[l].a = tape.input(lf.up_a, trainable);
      b.up[l].b = tape.input(lf.up_b, trainable);
      b.up[l].attached = true;
    }
    if (!lf.down_a.empty()) {
      b.down[l].a = tape.input(lf.down_a, trainable);
      b.down[l].b = tape.input(lf.down_b, trainable);
      b.down[l].attached = true;
    }
  }
  return b;
}

BoundComposition bind_composition(Tape& tape, const ComposedDelta& delta, bool trainable) {
  BoundComposition bc;
  bc.weights = delta.weights;
  bc.adapters.reserve(delta.adapters.size());
  for (const LowRankAdapter* a : delta.adapters) {
    bc.adapters.push_back(bind_adapter(tape, *a, trainable));
  }
  return bc;
}

Var apply_low_rank(Var x, Var w, const BoundComposition* comp, int layer, bool up_site) {
  Var y = matmul_nt(x, w);
  if (comp == nullptr) return y;
  for (size_t k = 0; k < comp->adapters.size(); ++k) {
    const BoundAdapter& ad = comp->adapters[k];
    const auto& site = up_site ? ad.up[static_cast<size_t>(layer)]
                               : ad.down[static_cast<size_t>(layer)];
    if (!site.attached) continue;
    Var t = matmul(x, site.b);       // S x r
    Var u = matmul_nt(t, site.a);    // S x out
    y = add(y, scale(u, comp->weights[k] * ad.scale_over_rank));
  }
  return y;
}

// ---- persistence ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'T', 'A', 'S'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("adapter store: truncated file");
  return v;
}

void write_tensor_data(std::ostream& os, const Tensor& t) {
  if (!t.empty()) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

void read_tensor_data(std::istream& is, Tensor& t) {
  if (!t.empty()) {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("adapter store: truncated tensor block");
  }
}

size_t adapter_payload_bytes(const AdapterStore& store) {
  size_t doubles = 0;
  const auto& c = store.config;
  if (c.attach_up) {
    doubles += static_cast<size_t>(store.model_ffn + store.model_hidden) * c.rank;
  }
  if (c.attach_down) {
    doubles += static_cast<size_t>(store.model_hidden + store.model_ffn) * c.rank;
  }
  return doubles * static_cast<size_t>(store.model_layers) * sizeof(double);
}

}  // namespace

void save_store(const AdapterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("adapter store: cannot open for writing: " + path);

  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint32_t>(store.config.rank));
  write_pod(os, store.config.scale);
  write_pod(os, static_cast<uint8_t>(store.config.attach_up));
  write_pod(os, static_cast<uint8_t>(store.config.attach_down));
  write_pod(os, store.config.init_std);
  write_pod(os, static_cast<uint32_t>(store.model_layers));
  write_pod(os, static_cast<uint32_t>(store.model_hidden));
  write_pod(os, static_cast<uint32_t>(store.model_ffn));
  write_pod(os, static_cast<uint32_t>(store.adapters.size()));

  const size_t header_end = 4 + 4 + 4 + 8 + 1 + 1 + 8 + 4 + 4 + 4 + 4;
  const size_t index_bytes = store.adapters.size() * (4 + 8 + 8);
  const size_t block = adapter_payload_bytes(store);

  size_t offset = header_end + index_bytes;
  for (const auto& [id, adapter] : store.adapters) {
    (void)adapter;
    write_pod(os, static_cast<int32_t>(id));
    write_pod(os, static_cast<uint64_t>(offset));
    write_pod(os, static_cast<uint64_t>(block));
    offset += block;
  }

  for (const auto& [id, adapter] : store.adapters) {
    (void)id;
    for (const auto& lf : adapter.layers) {
      write_tensor_data(os, lf.up_a);
      write_tensor_data(os, lf.up_b);
      write_tensor_data(os, lf.down_a);
      write_tensor_data(os, lf.down_b);
    }
  }
  if (!os) throw std::runtime_error("adapter store: write failed: " + path);
}

AdapterStore load_store(const std::string& path, const std::set<int>& tool_filter) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("adapter store: cannot open: " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("adapter store: bad magic (not an adapter store file)");
  }
  const auto version = read_pod<uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("adapter store: unsupported version");

  AdapterStore store;
  store.config.rank = static_cast<int>(read_pod<uint32_t>(is));
  store.config.scale = read_pod<double>(is);
  store.config.attach_up = read_pod<uint8_t>(is) != 0;
  store.config.attach_down = read_pod<uint8_t>(is) != 0;
  store.config.init_std = read_pod<double>(is);
  store.model_layers = static_cast<int>(read_pod<uint32_t>(is));
  store.model_hidden = static_cast<int>(read_pod<uint32_t>(is));
  store.model_ffn = static_cast<int>(read_pod<uint32_t>(is));
  const auto count = read_pod<uint32_t>(is);

  struct Entry {
    int id;
    uint64_t offset, bytes;
  };
  std::vector<Entry> index;
  index.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Entry e{};
    e.id = static_cast<int>(read_pod<int32_t>(is));
    e.offset = read_pod<uint64_t>(is);
    e.bytes = read_pod<uint64_t>(is);
    index.push_back(e);
  }

  for (const int wanted : tool_filter) {
    bool found = false;
    for (const auto& e : index) {
      if (e.id == wanted) {
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("adapter store: unknown tool id requested");
  }

  for (const auto& e : index) {
    if (!tool_filter.empty() && tool_filter.count(e.id) == 0) continue;
    is.seekg(static_cast<std::streamoff>(e.offset));
    LowRankAdapter a;
    a.tool_id = e.id;
    a.rank = store.config.rank;
    a.scale = store.config.scale;
    a.layers.resize(static_cast<size_t>(store.model_layers));
    for (auto& lf : a.layers) {
      if (store.config.attach_up) {
        lf.up_a = Tensor::zeros({store.model_ffn, store.config.rank});
        lf.up_b = Tensor::zeros({store.model_hidden, store.config.rank});
        read_tensor_data(is, lf.up_a);
        read_tensor_data(is, lf.up_b);
      }
      if (store.config.attach_down) {
        lf.down_a = Tensor::zeros({store.model_hidden, store.config.rank});
        lf.down_b = Tensor::zeros({store.model_ffn, store.config.rank});
        read_tensor_data(is, lf.down_a);
        read_tensor_data(is, lf.down_b);
      }
    }
    store.adapters.emplace(e.id, std::move(a));
  }
  return store;
}

}  // namespace paratool

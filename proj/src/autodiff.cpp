#include "paratool/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace paratool {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape, "operands must live on one tape");
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw std::runtime_error(std::string("non-finite values in ") + where);
}

}  // namespace

void Tape::check(Var v) const {
  require(v.tape == this && v.idx >= 0 && v.idx < node_count(), "bad var");
}

Var Tape::input(Tensor value, bool trainable) {
  require_finite(value, "tape input");
  Node n;
  n.value = std::move(value);
  n.needs_grad = trainable;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Tensor value, std::initializer_list<int> parents,
               std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  for (const int p : parents) {
    if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
  }
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[static_cast<size_t>(v.idx)].value;
}

const Tensor& Tape::grad(Var v) {
  return grad_mut(v);
}

Tensor& Tape::grad_mut(Var v) {
  check(v);
  Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (consumed_) throw std::runtime_error("tape already consumed by a previous backward");
  if (value(loss).size() != 1) throw std::invalid_argument("backward requires a scalar loss");
  consumed_ = true;

  grad_mut(loss)[0] = 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    auto& node = nodes_[static_cast<size_t>(i)];
    if (node.back && node.needs_grad && !node.grad.empty()) node.back(*this);
  }
}

// ---- elementwise ------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "sub: shape mismatch");
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "mul: shape mismatch");
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& av2 = tp.value(Var{&tp, ai});
    const Tensor& bv2 = tp.value(Var{&tp, bi});
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, c, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var vabs(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::fabs(av[i]);
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& av2 = tp.value(Var{&tp, ai});
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (size_t i = 0; i < g.size(); ++i) {
      const double s = av2[i] > 0.0 ? 1.0 : (av2[i] < 0.0 ? -1.0 : 0.0);
      ga[i] += g[i] * s;
    }
  });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& av2 = tp.value(Var{&tp, ai});
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (size_t i = 0; i < g.size(); ++i) {
      if (av2[i] > 0.0) ga[i] += g[i];
    }
  });
}

// ---- matrix products --------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.cols() == bv.rows(), "matmul: inner dimensions disagree");
  Tensor out({av.rows(), bv.cols()});
  matmul_into(av, bv, out, false, false, false);
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    // dA += G B^T ; dB += A^T G
    if (tp.needs_grad(ai)) {
      matmul_into(g, tp.value(Var{&tp, bi}), tp.grad_mut(Var{&tp, ai}), false, true, true);
    }
    if (tp.needs_grad(bi)) {
      matmul_into(tp.value(Var{&tp, ai}), g, tp.grad_mut(Var{&tp, bi}), true, false, true);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.cols() == bv.cols(), "matmul_nt: inner dimensions disagree");
  Tensor out({av.rows(), bv.rows()});
  matmul_into(av, bv, out, false, true, false);
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    // C = A B^T: dA += G B ; dB += G^T A
    if (tp.needs_grad(ai)) {
      matmul_into(g, tp.value(Var{&tp, bi}), tp.grad_mut(Var{&tp, ai}), false, false, true);
    }
    if (tp.needs_grad(bi)) {
      matmul_into(g, tp.value(Var{&tp, ai}), tp.grad_mut(Var{&tp, bi}), true, false, true);
    }
  });
}

// ---- row-wise normalizations ------------------------------------------

Var softmax(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const int rows = av.rows(), cols = av.cols();
  require(cols > 0, "softmax: empty rows");
  Tensor out(av.shape());
  for (int i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) mx = std::max(mx, av.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j < cols; ++j) out.at(i, j) /= denom;
  }
  require_finite(out, "softmax");
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& p = tp.value(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    const int rows2 = p.rows(), cols2 = p.cols();
    for (int i = 0; i < rows2; ++i) {
      double inner = 0.0;
      for (int j = 0; j < cols2; ++j) inner += g.at(i, j) * p.at(i, j);
      for (int j = 0; j < cols2; ++j) ga.at(i, j) += p.at(i, j) * (g.at(i, j) - inner);
    }
  });
}

Var causal_softmax(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const int rows = av.rows(), cols = av.cols();
  require(rows == cols, "causal_softmax: expects square score matrix");
  Tensor out(av.shape());
  for (int i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j <= i; ++j) mx = std::max(mx, av.at(i, j));
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) {
      const double e = std::exp(av.at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (int j = 0; j <= i; ++j) out.at(i, j) /= denom;
  }
  require_finite(out, "causal_softmax");
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& p = tp.value(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    const int rows2 = p.rows();
    for (int i = 0; i < rows2; ++i) {
      double inner = 0.0;
      for (int j = 0; j <= i; ++j) inner += g.at(i, j) * p.at(i, j);
      for (int j = 0; j <= i; ++j) ga.at(i, j) += p.at(i, j) * (g.at(i, j) - inner);
    }
  });
}

Var log_softmax(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const int rows = av.rows(), cols = av.cols();
  require(cols > 0, "log_softmax: empty rows");
  Tensor out(av.shape());
  for (int i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) mx = std::max(mx, av.at(i, j));
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) denom += std::exp(av.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (int j = 0; j < cols; ++j) out.at(i, j) = av.at(i, j) - lse;
  }
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& lp = tp.value(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    const int rows2 = lp.rows(), cols2 = lp.cols();
    for (int i = 0; i < rows2; ++i) {
      double gsum = 0.0;
      for (int j = 0; j < cols2; ++j) gsum += g.at(i, j);
      for (int j = 0; j < cols2; ++j) ga.at(i, j) += g.at(i, j) - std::exp(lp.at(i, j)) * gsum;
    }
  });
}

Var layer_norm(Var a, double eps) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const int rows = av.rows(), cols = av.cols();
  require(cols > 0, "layer_norm: empty rows");
  Tensor out(av.shape());
  Tensor inv_sd({rows});
  for (int i = 0; i < rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += av.at(i, j);
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = av.at(i, j) - mean;
      var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sd[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < cols; ++j) out.at(i, j) = (av.at(i, j) - mean) * inv;
  }
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r, inv_sd](Tape& tp) {
    const Tensor& g = tp.grad(r);
    const Tensor& y = tp.value(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    const int rows2 = y.rows(), cols2 = y.cols();
    for (int i = 0; i < rows2; ++i) {
      double gmean = 0.0, gymean = 0.0;
      for (int j = 0; j < cols2; ++j) {
        gmean += g.at(i, j);
        gymean += g.at(i, j) * y.at(i, j);
      }
      gmean /= cols2;
      gymean /= cols2;
      const double inv = inv_sd[static_cast<size_t>(i)];
      for (int j = 0; j < cols2; ++j) {
        ga.at(i, j) += inv * (g.at(i, j) - gmean - y.at(i, j) * gymean);
      }
    }
  });
}

// ---- lookups and losses -----------------------------------------------

Var embedding(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Tensor& tv = t.value(table);
  require(tv.rank() == 2, "embedding: table must be 2-d");
  require(!ids.empty(), "embedding: empty id list");
  const int cols = tv.cols();
  Tensor out({static_cast<int>(ids.size()), cols});
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "embedding: id out of range");
    for (int j = 0; j < cols; ++j) out.at(static_cast<int>(i), j) = tv.at(ids[i], j);
  }
  const int ti = table.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ti}, [ti, r, ids](Tape& tp) {
    const Tensor& g = tp.grad(r);
    Tensor& gt = tp.grad_mut(Var{&tp, ti});
    const int cols2 = g.cols();
    for (size_t i = 0; i < ids.size(); ++i) {
      for (int j = 0; j < cols2; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
    }
  });
}

Var cross_entropy(Var probs, const std::vector<int>& targets) {
  Tape& t = *probs.tape;
  const Tensor& pv = t.value(probs);
  const int rows = pv.rows(), cols = pv.cols();
  require(static_cast<int>(targets.size()) == rows, "cross_entropy: one target per row");
  double loss = 0.0;
  for (int i = 0; i < rows; ++i) {
    const int tgt = targets[static_cast<size_t>(i)];
    require(tgt >= 0 && tgt < cols, "cross_entropy: target out of range");
    loss -= std::log(pv.at(i, tgt));
  }
  loss /= rows;
  if (!std::isfinite(loss)) throw std::runtime_error("cross_entropy: non-finite loss");
  const int pi = probs.idx;
  Var r{&t, t.node_count()};
  return t.emit(Tensor::scalar(loss), {pi}, [pi, r, targets, rows](Tape& tp) {
    const double g = tp.grad(r)[0];
    const Tensor& pv2 = tp.value(Var{&tp, pi});
    Tensor& gp = tp.grad_mut(Var{&tp, pi});
    for (int i = 0; i < rows; ++i) {
      const int tgt = targets[static_cast<size_t>(i)];
      gp.at(i, tgt) += g * (-1.0 / (pv2.at(i, tgt) * rows));
    }
  });
}

Var nll_rows(Var logp, const std::vector<int>& rows, const std::vector<int>& targets) {
  Tape& t = *logp.tape;
  const Tensor& lv = t.value(logp);
  require(!rows.empty() && rows.size() == targets.size(), "nll_rows: rows/targets mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < lv.rows(), "nll_rows: row out of range");
    require(targets[i] >= 0 && targets[i] < lv.cols(), "nll_rows: target out of range");
    loss -= lv.at(rows[i], targets[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  loss *= inv_n;
  const int li = logp.idx;
  Var r{&t, t.node_count()};
  return t.emit(Tensor::scalar(loss), {li}, [li, r, rows, targets, inv_n](Tape& tp) {
    const double g = tp.grad(r)[0];
    Tensor& gl = tp.grad_mut(Var{&tp, li});
    for (size_t i = 0; i < rows.size(); ++i) gl.at(rows[i], targets[i]) -= g * inv_n;
  });
}

// ---- layout ops --------------------------------------------------------

Var concat_rows(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.cols() == bv.cols(), "concat_rows: column mismatch");
  Tensor out({av.rows() + bv.rows(), av.cols()});
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j);
  for (int i = 0; i < bv.rows(); ++i)
    for (int j = 0; j < bv.cols(); ++j) out.at(av.rows() + i, j) = bv.at(i, j);
  const int ai = a.idx, bi = b.idx, arows = av.rows();
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, arows, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (int i = 0; i < ga.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) ga.at(i, j) += g.at(i, j);
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (int i = 0; i < gb.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gb.at(i, j) += g.at(arows + i, j);
    }
  });
}

Var concat_cols(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rows() == bv.rows(), "concat_cols: row mismatch");
  Tensor out({av.rows(), av.cols() + bv.cols()});
  for (int i = 0; i < av.rows(); ++i) {
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j);
    for (int j = 0; j < bv.cols(); ++j) out.at(i, av.cols() + j) = bv.at(i, j);
  }
  const int ai = a.idx, bi = b.idx, acols = av.cols();
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, acols, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(i, j);
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < gb.cols(); ++j) gb.at(i, j) += g.at(i, acols + j);
    }
  });
}

Var slice_rows(Var a, int start, int len) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  require(start >= 0 && len > 0 && start + len <= av.rows(), "slice_rows: bad range");
  Tensor out({len, av.cols()});
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(start + i, j);
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, start, len, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(start + i, j) += g.at(i, j);
  });
}

Var slice_cols(Var a, int start, int len) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  require(start >= 0 && len > 0 && start + len <= av.cols(), "slice_cols: bad range");
  Tensor out({av.rows(), len});
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = av.at(i, start + j);
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, start, len, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < len; ++j) ga.at(i, start + j) += g.at(i, j);
  });
}

Var dot(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.size() == bv.size(), "dot: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  add_macs(av.size());
  const int ai = a.idx, bi = b.idx;
  Var r{&t, t.node_count()};
  return t.emit(Tensor::scalar(acc), {ai, bi}, [ai, bi, r](Tape& tp) {
    const double g = tp.grad(r)[0];
    const Tensor& av2 = tp.value(Var{&tp, ai});
    const Tensor& bv2 = tp.value(Var{&tp, bi});
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (size_t i = 0; i < av2.size(); ++i) ga[i] += g * bv2[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (size_t i = 0; i < bv2.size(); ++i) gb[i] += g * av2[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i];
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(Tensor::scalar(acc), {ai}, [ai, r](Tape& tp) {
    const double g = tp.grad(r)[0];
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out({av.cols(), av.rows()});
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
  const int ai = a.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai}, [ai, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    Tensor& ga = tp.grad_mut(Var{&tp, ai});
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
  });
}

Var add_rowwise(Var a, Var bias) {
  require_same_tape(a, bias);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(bias);
  require(bv.rows() == 1 && bv.cols() == av.cols(), "add_rowwise: bias shape mismatch");
  Tensor out(av.shape());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + bv[static_cast<size_t>(j)];
  const int ai = a.idx, bi = bias.idx;
  Var r{&t, t.node_count()};
  return t.emit(std::move(out), {ai, bi}, [ai, bi, r](Tape& tp) {
    const Tensor& g = tp.grad(r);
    if (tp.needs_grad(ai)) {
      Tensor& ga = tp.grad_mut(Var{&tp, ai});
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(bi)) {
      Tensor& gb = tp.grad_mut(Var{&tp, bi});
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gb[static_cast<size_t>(j)] += g.at(i, j);
    }
  });
}

// ---- finite differences -------------------------------------------------

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
  Tensor analytic;
  {
    Tape tape;
    Var vx = tape.input(x);
    Var loss = f(tape, vx);
    if (tape.value(loss).size() != 1) throw std::invalid_argument("grad_check: f must be scalar");
    tape.backward(loss);
    analytic = tape.grad(vx);
  }

  const auto eval = [&](const Tensor& at) {
    Tape tape;
    Var vx = tape.input(at);
    const double v = tape.value(f(tape, vx)).item();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite evaluation");
    return v;
  };

  double worst = 0.0;
  Tensor probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace paratool

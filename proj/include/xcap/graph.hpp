#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcap/rng.hpp"
#include "xcap/tensor.hpp"
#include "xcap/util.hpp"

namespace xcap {

// Handle to a node in a Graph. Plain index; cheap to copy.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape. Ops evaluate eagerly as they are recorded;
// backward() walks the tape in reverse and accumulates gradients into every
// node that (transitively) depends on a parameter. The op set is exactly what
// the captioner needs; this is not a general-purpose autodiff.
//
// Single-threaded per instance. Distinct graphs share nothing mutable, so
// they may live on distinct threads.
template <typename Real>
class Graph {
 public:
  // Leaf holding a constant value; no gradient is tracked.
  Var input(Tensor<Real> value) {
    check(value.all_finite(), "graph: non-finite input rejected");
    return push(Op::kInput, std::move(value), -1, -1, false);
  }

  // Leaf bound to an external parameter tensor (not copied). The tensor must
  // outlive the graph and stay unmodified until backward() has run.
  Var param(const Tensor<Real>* tensor) {
    check(tensor != nullptr && !tensor->empty(), "graph: null parameter");
    Var v = push(Op::kParam, Tensor<Real>(), -1, -1, true);
    nodes_[v.id].external = tensor;
    return v;
  }

  // out[m x n] = a[m x k] . b[k x n]
  Var matmul(Var a, Var b) {
    const Tensor<Real>& ta = val(a);
    const Tensor<Real>& tb = val(b);
    check(ta.cols() == tb.rows(), "matmul: inner dims ", ta.cols(), " vs ",
          tb.rows());
    Tensor<Real> out = Tensor<Real>::matrix(ta.rows(), tb.cols());
    out.mat().noalias() = ta.mat() * tb.mat();
    return push(Op::kMatmul, std::move(out), a.id, b.id, needs(a) || needs(b));
  }

  // out[m] = w[m x k] . x[k]
  Var matvec(Var w, Var x) {
    const Tensor<Real>& tw = val(w);
    const Tensor<Real>& tx = val(x);
    check(tw.cols() == static_cast<int>(tx.size()), "matvec: dims ", tw.cols(),
          " vs ", tx.size());
    Tensor<Real> out = Tensor<Real>::vector(tw.rows());
    out.vec().noalias() = tw.mat() * tx.vec();
    return push(Op::kMatvec, std::move(out), w.id, x.id, needs(w) || needs(x));
  }

  // Weighted-sum reduction over row groups: m is [(B*G) x D], w is [B x G],
  // out[b] = sum_g w(b,g) * m.row(b*G+g). Realizes "alpha (.) a" as one
  // context vector per batch row.
  Var rows_weighted_sum(Var m, Var w) {
    const Tensor<Real>& tm = val(m);
    const Tensor<Real>& tw = val(w);
    const int batch = tw.rows();
    const int group = tw.cols();
    check(tm.rows() == batch * group, "rows_weighted_sum: ", tm.rows(),
          " rows vs ", batch, "x", group);
    Tensor<Real> out = Tensor<Real>::matrix(batch, tm.cols());
    for (int b = 0; b < batch; ++b) {
      out.mat().row(b).noalias() =
          tw.mat().row(b) * tm.mat().middleRows(b * group, group);
    }
    return push(Op::kRowsWeightedSum, std::move(out), m.id, w.id,
                needs(m) || needs(w));
  }

  Var add(Var a, Var b) {
    const Tensor<Real>& ta = val(a);
    const Tensor<Real>& tb = val(b);
    check(ta.same_shape(tb), "add: shape mismatch");
    Tensor<Real> out = ta;
    out.vec() += tb.vec();
    return push(Op::kAdd, std::move(out), a.id, b.id, needs(a) || needs(b));
  }

  // out = m with v added to every row.
  Var add_rowvec(Var m, Var v) {
    const Tensor<Real>& tm = val(m);
    const Tensor<Real>& tv = val(v);
    check(static_cast<int>(tv.size()) == tm.cols(), "add_rowvec: dims");
    Tensor<Real> out = tm;
    out.mat().rowwise() += tv.vec().transpose();
    return push(Op::kAddRowvec, std::move(out), m.id, v.id,
                needs(m) || needs(v));
  }

  // m is [(B*G) x C], v is [B x C]; row r of m gets v.row(r / G) added.
  Var add_rowvec_grouped(Var m, Var v) {
    const Tensor<Real>& tm = val(m);
    const Tensor<Real>& tv = val(v);
    const int batch = tv.rows();
    check(batch > 0 && tm.rows() % batch == 0 && tm.cols() == tv.cols(),
          "add_rowvec_grouped: shapes ", tm.rows(), "x", tm.cols(), " vs ",
          tv.rows(), "x", tv.cols());
    const int group = tm.rows() / batch;
    Tensor<Real> out = tm;
    for (int b = 0; b < batch; ++b) {
      out.mat().middleRows(b * group, group).rowwise() +=
          tv.mat().row(b);
    }
    return push(Op::kAddRowvecGrouped, std::move(out), m.id, v.id,
                needs(m) || needs(v));
  }

  Var mul(Var a, Var b) {
    const Tensor<Real>& ta = val(a);
    const Tensor<Real>& tb = val(b);
    check(ta.same_shape(tb), "mul: shape mismatch");
    Tensor<Real> out = ta;
    out.vec().array() *= tb.vec().array();
    return push(Op::kMul, std::move(out), a.id, b.id, needs(a) || needs(b));
  }

  Var tanh_(Var x) {
    Tensor<Real> out = val(x);
    out.vec() = out.vec().array().tanh();
    return push(Op::kTanh, std::move(out), x.id, -1, needs(x));
  }

  Var sigmoid_(Var x) {
    Tensor<Real> out = val(x);
    out.vec() = (Real(1) / (Real(1) + (-out.vec().array()).exp()));
    return push(Op::kSigmoid, std::move(out), x.id, -1, needs(x));
  }

  Var log_(Var x) {
    Tensor<Real> out = val(x);
    out.vec() = out.vec().array().log();
    return push(Op::kLog, std::move(out), x.id, -1, needs(x));
  }

  // Row-wise softmax; a rank-1 input is treated as a single row.
  Var softmax_rows(Var x) {
    Tensor<Real> out = val(x);
    const int cols = out.rank() == 1 ? static_cast<int>(out.size())
                                     : out.cols();
    const int rows = static_cast<int>(out.size()) / cols;
    for (int r = 0; r < rows; ++r) {
      softmax_inplace(out.data() + static_cast<std::size_t>(r) * cols, cols);
    }
    return push(Op::kSoftmaxRows, std::move(out), x.id, -1, needs(x));
  }

  // Row gather from an embedding table: out.row(i) = table.row(ids[i]).
  Var embed_rows(Var table, std::vector<int> ids) {
    const Tensor<Real>& tt = val(table);
    check(!ids.empty(), "embed_rows: empty id list");
    for (int id : ids) {
      check(id >= 0 && id < tt.rows(), "embed_rows: token id ", id,
            " out of range [0, ", tt.rows(), ")");
    }
    Tensor<Real> out =
        Tensor<Real>::matrix(static_cast<int>(ids.size()), tt.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.mat().row(static_cast<int>(i)) = tt.mat().row(ids[i]);
    }
    Var v = push(Op::kEmbedRows, std::move(out), table.id, -1, needs(table));
    nodes_[v.id].ids = std::move(ids);
    return v;
  }

  // Rank-1 concatenation.
  Var concat(Var a, Var b) {
    const Tensor<Real>& ta = val(a);
    const Tensor<Real>& tb = val(b);
    check(ta.rank() == 1 && tb.rank() == 1, "concat: rank-1 only");
    Tensor<Real> out =
        Tensor<Real>::vector(static_cast<int>(ta.size() + tb.size()));
    out.vec().head(ta.size()) = ta.vec();
    out.vec().tail(tb.size()) = tb.vec();
    return push(Op::kConcat, std::move(out), a.id, b.id, needs(a) || needs(b));
  }

  // Column slice [off, off+n).
  Var cols(Var m, int off, int n) {
    const Tensor<Real>& tm = val(m);
    check(off >= 0 && n > 0 && off + n <= tm.cols(), "cols: slice [", off,
          ", ", off + n, ") out of ", tm.cols());
    Tensor<Real> out = Tensor<Real>::matrix(tm.rows(), n);
    out.mat() = tm.mat().middleCols(off, n);
    Var v = push(Op::kCols, std::move(out), m.id, -1, needs(m));
    nodes_[v.id].aux0 = off;
    return v;
  }

  // Same data, new shape.
  Var reshape(Var x, int rows, int cols) {
    const Tensor<Real>& tx = val(x);
    check(static_cast<std::size_t>(rows) * cols == tx.size(),
          "reshape: size mismatch");
    Tensor<Real> out = Tensor<Real>::matrix(rows, cols);
    std::copy(tx.data(), tx.data() + tx.size(), out.data());
    return push(Op::kReshape, std::move(out), x.id, -1, needs(x));
  }

  // out[b] = mask[b] ? m(b, ids[b]) : 1. The masked-out value of 1 keeps a
  // following log() at exactly zero for padded rows.
  Var pick_rows(Var m, std::vector<int> ids, std::vector<std::uint8_t> mask) {
    const Tensor<Real>& tm = val(m);
    check(static_cast<int>(ids.size()) == tm.rows() &&
              mask.size() == ids.size(),
          "pick_rows: id/mask count vs rows");
    Tensor<Real> out = Tensor<Real>::vector(tm.rows());
    for (int b = 0; b < tm.rows(); ++b) {
      if (mask[b]) {
        check(ids[b] >= 0 && ids[b] < tm.cols(), "pick_rows: index ", ids[b],
              " out of range [0, ", tm.cols(), ")");
        out[b] = tm(b, ids[b]);
      } else {
        out[b] = Real(1);
      }
    }
    Var v = push(Op::kPickRows, std::move(out), m.id, -1, needs(m));
    nodes_[v.id].ids = std::move(ids);
    nodes_[v.id].mask = std::move(mask);
    return v;
  }

  // Scalar dot product with a constant weight vector.
  Var dot_const(Var x, std::vector<Real> w) {
    const Tensor<Real>& tx = val(x);
    check(w.size() == tx.size(), "dot_const: length mismatch");
    Real s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += tx[i] * w[i];
    Var v = push(Op::kDotConst, Tensor<Real>::scalar(s), x.id, -1, needs(x));
    nodes_[v.id].weights = std::move(w);
    return v;
  }

  Var scale(Var x, Real c) {
    Tensor<Real> out = val(x);
    out.vec() *= c;
    Var v = push(Op::kScale, std::move(out), x.id, -1, needs(x));
    nodes_[v.id].raux = c;
    return v;
  }

  // Inverted dropout: keep with probability keep_rate and scale kept entries
  // by 1/keep_rate, so inference is the identity. training=false or
  // keep_rate=1 records nothing and returns x unchanged.
  Var dropout(Var x, Real keep_rate, RngStream& rng, bool training) {
    check(keep_rate > Real(0) && keep_rate <= Real(1),
          "dropout: keep_rate must be in (0, 1], got ",
          static_cast<double>(keep_rate));
    if (!training || keep_rate == Real(1)) return x;
    const Tensor<Real>& tx = val(x);
    std::vector<Real> mask(tx.size());
    const Real inv = Real(1) / keep_rate;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.bernoulli(static_cast<double>(keep_rate)) ? inv : Real(0);
    }
    Tensor<Real> out = tx;
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
    Var v = push(Op::kDropout, std::move(out), x.id, -1, needs(x));
    nodes_[v.id].weights = std::move(mask);
    return v;
  }

  const Tensor<Real>& value(Var v) const { return val(v); }

  // Gradient of the last backward() loss w.r.t. node v. Zero-shaped tensors
  // never appear: any reachable parameter has a grad slot after backward().
  const Tensor<Real>& grad(Var v) const {
    const Node& n = node(v);
    check(!n.grad.empty(), "graph: no gradient for this node (did backward run?)");
    return n.grad;
  }

  // Reverse pass from a scalar loss. Zeroes every gradient slot first, so
  // repeated calls are idempotent.
  void backward(Var loss) {
    const Node& ln = node(loss);
    check(ln.value.size() == 1, "backward: loss must be scalar, has ",
          ln.value.size(), " elements");
    for (Node& n : nodes_) {
      if (!n.needs_grad) continue;
      const Tensor<Real>& shape_src =
          n.external != nullptr ? *n.external : n.value;
      if (n.grad.empty()) {
        n.grad = shape_src.rank() == 1
                     ? Tensor<Real>::vector(shape_src.rows())
                     : Tensor<Real>::matrix(shape_src.rows(), shape_src.cols());
      } else {
        n.grad.set_zero();
      }
    }
    if (!node(loss).needs_grad) return;  // loss independent of parameters
    nodes_[loss.id].grad[0] = Real(1);
    for (int i = loss.id; i >= 0; --i) {
      backprop_node(i);
    }
  }

  void reset() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kParam,
    kMatmul,
    kMatvec,
    kRowsWeightedSum,
    kAdd,
    kAddRowvec,
    kAddRowvecGrouped,
    kMul,
    kTanh,
    kSigmoid,
    kLog,
    kSoftmaxRows,
    kEmbedRows,
    kConcat,
    kCols,
    kReshape,
    kPickRows,
    kDotConst,
    kScale,
    kDropout,
  };

  struct Node {
    Op op;
    int in0 = -1;
    int in1 = -1;
    int aux0 = 0;
    Real raux = 0;
    bool needs_grad = false;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    std::vector<Real> weights;
  };

  Var push(Op op, Tensor<Real> value, int in0, int in1, bool needs_grad) {
    Node n;
    n.op = op;
    n.in0 = in0;
    n.in1 = in1;
    n.needs_grad = needs_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(Var v) const {
    check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()),
          "graph: invalid var");
    return nodes_[v.id];
  }

  const Tensor<Real>& val(Var v) const {
    const Node& n = node(v);
    return n.external != nullptr ? *n.external : n.value;
  }
  bool needs(Var v) const { return node(v).needs_grad; }

  bool wants(int id) const { return id >= 0 && nodes_[id].needs_grad; }
  Tensor<Real>& g(int id) { return nodes_[id].grad; }
  const Tensor<Real>& v(int id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }

  void backprop_node(int i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) return;
    const Tensor<Real>& gy = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kMatmul:
        if (wants(n.in0)) g(n.in0).mat().noalias() += gy.mat() * v(n.in1).mat().transpose();
        if (wants(n.in1)) g(n.in1).mat().noalias() += v(n.in0).mat().transpose() * gy.mat();
        break;
      case Op::kMatvec:
        if (wants(n.in0)) g(n.in0).mat().noalias() += gy.vec() * v(n.in1).vec().transpose();
        if (wants(n.in1)) g(n.in1).vec().noalias() += v(n.in0).mat().transpose() * gy.vec();
        break;
      case Op::kRowsWeightedSum: {
        const Tensor<Real>& w = v(n.in1);
        const int batch = w.rows();
        const int group = w.cols();
        for (int b = 0; b < batch; ++b) {
          if (wants(n.in0)) {
            g(n.in0).mat().middleRows(b * group, group).noalias() +=
                w.mat().row(b).transpose() * gy.mat().row(b);
          }
          if (wants(n.in1)) {
            g(n.in1).mat().row(b).noalias() +=
                gy.mat().row(b) *
                v(n.in0).mat().middleRows(b * group, group).transpose();
          }
        }
        break;
      }
      case Op::kAdd:
        if (wants(n.in0)) g(n.in0).vec() += gy.vec();
        if (wants(n.in1)) g(n.in1).vec() += gy.vec();
        break;
      case Op::kAddRowvec:
        if (wants(n.in0)) g(n.in0).vec() += gy.vec();
        if (wants(n.in1)) g(n.in1).vec() += gy.mat().colwise().sum().transpose();
        break;
      case Op::kAddRowvecGrouped: {
        if (wants(n.in0)) g(n.in0).vec() += gy.vec();
        if (wants(n.in1)) {
          const int batch = v(n.in1).rows();
          const int group = v(n.in0).rows() / batch;
          for (int b = 0; b < batch; ++b) {
            g(n.in1).mat().row(b) +=
                gy.mat().middleRows(b * group, group).colwise().sum();
          }
        }
        break;
      }
      case Op::kMul:
        if (wants(n.in0)) g(n.in0).vec().array() += gy.vec().array() * v(n.in1).vec().array();
        if (wants(n.in1)) g(n.in1).vec().array() += gy.vec().array() * v(n.in0).vec().array();
        break;
      case Op::kTanh:
        if (wants(n.in0)) {
          g(n.in0).vec().array() +=
              gy.vec().array() * (Real(1) - n.value.vec().array().square());
        }
        break;
      case Op::kSigmoid:
        if (wants(n.in0)) {
          g(n.in0).vec().array() +=
              gy.vec().array() * n.value.vec().array() *
              (Real(1) - n.value.vec().array());
        }
        break;
      case Op::kLog:
        if (wants(n.in0)) {
          g(n.in0).vec().array() += gy.vec().array() / v(n.in0).vec().array();
        }
        break;
      case Op::kSoftmaxRows: {
        if (!wants(n.in0)) break;
        const int cols = n.value.rank() == 1
                             ? static_cast<int>(n.value.size())
                             : n.value.cols();
        const int rows = static_cast<int>(n.value.size()) / cols;
        for (int r = 0; r < rows; ++r) {
          const Real* s = n.value.data() + static_cast<std::size_t>(r) * cols;
          const Real* dy = gy.data() + static_cast<std::size_t>(r) * cols;
          Real* dx = g(n.in0).data() + static_cast<std::size_t>(r) * cols;
          Real dot = 0;
          for (int c = 0; c < cols; ++c) dot += dy[c] * s[c];
          for (int c = 0; c < cols; ++c) dx[c] += s[c] * (dy[c] - dot);
        }
        break;
      }
      case Op::kEmbedRows:
        if (wants(n.in0)) {
          for (std::size_t r = 0; r < n.ids.size(); ++r) {
            g(n.in0).mat().row(n.ids[r]) += gy.mat().row(static_cast<int>(r));
          }
        }
        break;
      case Op::kConcat: {
        const auto na = v(n.in0).size();
        if (wants(n.in0)) g(n.in0).vec() += gy.vec().head(na);
        if (wants(n.in1)) g(n.in1).vec() += gy.vec().tail(v(n.in1).size());
        break;
      }
      case Op::kCols:
        if (wants(n.in0)) {
          g(n.in0).mat().middleCols(n.aux0, n.value.cols()) += gy.mat();
        }
        break;
      case Op::kReshape:
        if (wants(n.in0)) g(n.in0).vec() += gy.vec();
        break;
      case Op::kPickRows:
        if (wants(n.in0)) {
          for (int b = 0; b < n.value.rows(); ++b) {
            if (n.mask[b]) g(n.in0)(b, n.ids[b]) += gy[b];
          }
        }
        break;
      case Op::kDotConst:
        if (wants(n.in0)) {
          for (std::size_t k = 0; k < n.weights.size(); ++k) {
            g(n.in0)[k] += gy[0] * n.weights[k];
          }
        }
        break;
      case Op::kScale:
        if (wants(n.in0)) g(n.in0).vec() += gy.vec() * n.raux;
        break;
      case Op::kDropout:
        if (wants(n.in0)) {
          for (std::size_t k = 0; k < n.weights.size(); ++k) {
            g(n.in0)[k] += gy[k] * n.weights[k];
          }
        }
        break;
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace xcap

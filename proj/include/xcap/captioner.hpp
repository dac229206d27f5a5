#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcap/grammar.hpp"
#include "xcap/graph.hpp"
#include "xcap/rng.hpp"
#include "xcap/tensor.hpp"
#include "xcap/util.hpp"

namespace xcap {

// Fixed CNN activation grid: `regions` spatial cells of `feat_dim` channels,
// row-major over the grid. The model's sole image-side input.
struct FeatureMap {
  int regions = 0;
  int feat_dim = 0;
  std::vector<float> values;  // regions x feat_dim, row-major

  void validate() const {
    check(regions > 0 && feat_dim > 0, "feature map: bad dims");
    check(values.size() ==
              static_cast<std::size_t>(regions) * static_cast<std::size_t>(feat_dim),
          "feature map: expected ", regions, "x", feat_dim, " values, got ",
          values.size());
    for (float v : values) {
      check(std::isfinite(v), "feature map: non-finite value rejected");
    }
  }

  template <typename Real>
  Tensor<Real> to_tensor() const {
    Tensor<Real> t = Tensor<Real>::matrix(regions, feat_dim);
    for (std::size_t i = 0; i < values.size(); ++i) {
      t[i] = static_cast<Real>(values[i]);
    }
    return t;
  }
};

struct ModelDims {
  int regions = 64;    // C, an 8x8 grid
  int feat_dim = 412;  // D
  int hidden = 512;
  int embed = 256;
  int attn = 256;  // width of the additive attention scorer
  int vocab = 0;   // K

  static ModelDims full(int vocab) { return ModelDims{64, 412, 512, 256, 256, vocab}; }

  // Shrunk model for finite-difference gradient audits.
  static ModelDims reduced(int vocab) { return ModelDims{4, 12, 16, 8, 8, vocab}; }

  bool operator==(const ModelDims&) const = default;
};

// Indices into CaptionerParams::tensors, fixed order.
enum ParamIdx : int {
  kEmbedding = 0,
  kAttWFeat,
  kAttWHid,
  kAttV,
  kLstm0Wx,
  kLstm0Wh,
  kLstm0B,
  kLstm1Wx,
  kLstm1Wh,
  kLstm1B,
  kOutWHid,
  kOutWEmb,
  kOutWCtx,
  kOutWLogit,
  kOutBLogit,
  kParamCount,
};

// All learnable weights, as uniquely named tensors in a fixed order (the
// checkpoint identity). Weight matrices are stored [in x out] so a batch of
// row vectors multiplies without transposes.
template <typename Real>
struct CaptionerParams {
  ModelDims dims;
  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;

  static CaptionerParams zeros(const ModelDims& d) {
    check(d.vocab > 0, "captioner: vocabulary size not set");
    const int h4 = 4 * d.hidden;
    CaptionerParams p;
    p.dims = d;
    auto add = [&p](const std::string& name, Tensor<Real> t) {
      p.names.push_back(name);
      p.tensors.push_back(std::move(t));
    };
    add("embedding", Tensor<Real>::matrix(d.vocab, d.embed));
    add("att_w_feat", Tensor<Real>::matrix(d.feat_dim, d.attn));
    add("att_w_hid", Tensor<Real>::matrix(d.hidden, d.attn));
    add("att_v", Tensor<Real>::vector(d.attn));
    add("lstm0_w_x", Tensor<Real>::matrix(d.feat_dim, h4));
    add("lstm0_w_h", Tensor<Real>::matrix(d.hidden, h4));
    add("lstm0_b", Tensor<Real>::vector(h4));
    add("lstm1_w_x", Tensor<Real>::matrix(d.hidden, h4));
    add("lstm1_w_h", Tensor<Real>::matrix(d.hidden, h4));
    add("lstm1_b", Tensor<Real>::vector(h4));
    add("out_w_hid", Tensor<Real>::matrix(d.hidden, d.embed));
    add("out_w_emb", Tensor<Real>::matrix(d.embed, d.embed));
    add("out_w_ctx", Tensor<Real>::matrix(d.feat_dim, d.embed));
    add("out_w_logit", Tensor<Real>::matrix(d.embed, d.vocab));
    add("out_b_logit", Tensor<Real>::vector(d.vocab));
    return p;
  }

  // Uniform(-0.08, 0.08) weights, zero biases, forget-gate bias 1.
  static CaptionerParams init(const ModelDims& d, std::uint64_t seed) {
    CaptionerParams p = zeros(d);
    RngStream rng(seed);
    for (int i = 0; i < kParamCount; ++i) {
      if (i == kLstm0B || i == kLstm1B || i == kOutBLogit) continue;
      Tensor<Real>& t = p.tensors[i];
      for (std::size_t k = 0; k < t.size(); ++k) {
        t[k] = static_cast<Real>((rng.next_double() * 2.0 - 1.0) * 0.08);
      }
    }
    for (int b : {kLstm0B, kLstm1B}) {
      Tensor<Real>& t = p.tensors[b];
      for (int k = d.hidden; k < 2 * d.hidden; ++k) t[k] = Real(1);
    }
    return p;
  }

  const Tensor<Real>& at(ParamIdx i) const { return tensors[i]; }
  Tensor<Real>& at(ParamIdx i) { return tensors[i]; }

  const Tensor<Real>* find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return &tensors[i];
    }
    return nullptr;
  }

  template <typename Other>
  CaptionerParams<Other> cast() const {
    CaptionerParams<Other> out = CaptionerParams<Other>::zeros(dims);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      out.tensors[i] = tensors[i].template cast<Other>();
    }
    return out;
  }
};

template <typename Real>
struct DecoderState {
  Tensor<Real> h0, c0, h1, c1;
  int prev_token = Vocabulary::kSot;

  static DecoderState initial(const ModelDims& d) {
    DecoderState s;
    s.h0 = Tensor<Real>::vector(d.hidden);
    s.c0 = Tensor<Real>::vector(d.hidden);
    s.h1 = Tensor<Real>::vector(d.hidden);
    s.c1 = Tensor<Real>::vector(d.hidden);
    return s;
  }
};

template <typename Real>
struct AttendResult {
  Tensor<Real> alpha;    // simplex over regions
  Tensor<Real> context;  // attention-weighted feature vector
};

// Additive attention: e_c = v . tanh(Wh h_prev + Wa a_c), alpha = softmax(e),
// context = sum_c alpha_c a_c.
template <typename Real>
AttendResult<Real> attend(const CaptionerParams<Real>& p,
                          const Tensor<Real>& h_prev,
                          const Tensor<Real>& feat) {
  const ModelDims& d = p.dims;
  check(feat.rows() == d.regions && feat.cols() == d.feat_dim,
        "attend: feature map must be ", d.regions, "x", d.feat_dim);
  check(static_cast<int>(h_prev.size()) == d.hidden, "attend: hidden size");
  using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
  RowVec hp = h_prev.vec().transpose() * p.at(kAttWHid).mat();
  AttendResult<Real> out;
  out.alpha = Tensor<Real>::vector(d.regions);
  typename Tensor<Real>::Matrix scored =
      ((feat.mat() * p.at(kAttWFeat).mat()).rowwise() + hp).array().tanh();
  out.alpha.vec().noalias() = scored * p.at(kAttV).vec();
  softmax_inplace(out.alpha.data(), d.regions);
  out.context = Tensor<Real>::vector(d.feat_dim);
  out.context.vec().noalias() = feat.mat().transpose() * out.alpha.vec();
  return out;
}

namespace detail {

// One LSTM cell step, gates packed [input | forget | cell | output].
template <typename Real>
void lstm_cell(const Tensor<Real>& wx, const Tensor<Real>& wh,
               const Tensor<Real>& b, const Tensor<Real>& x,
               Tensor<Real>& h, Tensor<Real>& c) {
  const int hidden = static_cast<int>(h.size());
  Eigen::Matrix<Real, Eigen::Dynamic, 1> gates =
      wx.mat().transpose() * x.vec() + wh.mat().transpose() * h.vec() +
      b.vec();
  auto seg = [&](int k) { return gates.segment(k * hidden, hidden).array(); };
  auto sig = [](auto a) { return Real(1) / (Real(1) + (-a).exp()); };
  c.vec().array() =
      sig(seg(1)) * c.vec().array() + sig(seg(0)) * seg(2).tanh();
  h.vec().array() = sig(seg(3)) * c.vec().array().tanh();
}

template <typename Real>
void dropout_vec(Tensor<Real>& x, Real keep_rate, RngStream& rng) {
  const Real inv = Real(1) / keep_rate;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.bernoulli(static_cast<double>(keep_rate)) ? x[i] * inv : Real(0);
  }
}

}  // namespace detail

template <typename Real>
struct StepResult {
  DecoderState<Real> state;
  Tensor<Real> dist;   // next-token distribution, K entries
  Tensor<Real> alpha;  // attention over regions
};

// One decoder step. Attention reads h1 of the previous step; the deep output
// layer combines h1, the embedded previous word, and the attended context.
// With training=false (or keep_rate 1) no dropout is applied and rng may be
// null.
template <typename Real>
StepResult<Real> step(const CaptionerParams<Real>& p,
                      const DecoderState<Real>& state, int y_prev,
                      const Tensor<Real>& feat, Real keep_rate,
                      RngStream* rng, bool training) {
  const ModelDims& d = p.dims;
  check(y_prev >= 0 && y_prev < d.vocab, "step: token id ", y_prev,
        " out of range [0, ", d.vocab, ")");
  check(keep_rate > Real(0) && keep_rate <= Real(1), "step: keep_rate");
  const bool drop = training && keep_rate < Real(1);
  check(!drop || rng != nullptr, "step: dropout requires an rng stream");

  StepResult<Real> out;
  out.state = state;
  out.state.prev_token = y_prev;
  AttendResult<Real> att = attend(p, state.h1, feat);
  out.alpha = att.alpha;

  Tensor<Real> z0 = att.context;
  if (drop) detail::dropout_vec(z0, keep_rate, *rng);
  detail::lstm_cell(p.at(kLstm0Wx), p.at(kLstm0Wh), p.at(kLstm0B), z0,
                    out.state.h0, out.state.c0);

  Tensor<Real> z1 = out.state.h0;
  if (drop) detail::dropout_vec(z1, keep_rate, *rng);
  detail::lstm_cell(p.at(kLstm1Wx), p.at(kLstm1Wh), p.at(kLstm1B), z1,
                    out.state.h1, out.state.c1);

  Eigen::Matrix<Real, Eigen::Dynamic, 1> merged =
      p.at(kOutWHid).mat().transpose() * out.state.h1.vec() +
      p.at(kOutWEmb).mat().transpose() *
          p.at(kEmbedding).mat().row(y_prev).transpose() +
      p.at(kOutWCtx).mat().transpose() * att.context.vec();
  out.dist = Tensor<Real>::vector(d.vocab);
  out.dist.vec().noalias() =
      p.at(kOutWLogit).mat().transpose() * merged + p.at(kOutBLogit).vec();
  softmax_inplace(out.dist.data(), d.vocab);
  return out;
}

struct DecodeResult {
  std::vector<int> tokens;  // SOT ... (EOT if emitted)
  std::vector<std::vector<double>> attention;  // one row per emitted token
};

// Greedy argmax decoding with attention trace; ties break to the lowest
// token id. Pure function of (params, feat): dropout is disabled.
template <typename Real>
DecodeResult decode_greedy(const CaptionerParams<Real>& p,
                           const Tensor<Real>& feat, int max_len) {
  check(max_len >= 1, "decode: max_len must be >= 1");
  DecodeResult out;
  out.tokens.push_back(Vocabulary::kSot);
  DecoderState<Real> state = DecoderState<Real>::initial(p.dims);
  int y = Vocabulary::kSot;
  for (int t = 0; t < max_len; ++t) {
    StepResult<Real> r =
        step(p, state, y, feat, Real(1), nullptr, /*training=*/false);
    state = std::move(r.state);
    int best = 0;
    for (int k = 1; k < p.dims.vocab; ++k) {
      if (r.dist[k] > r.dist[best]) best = k;
    }
    y = best;
    out.tokens.push_back(y);
    std::vector<double> row(p.dims.regions);
    for (int c = 0; c < p.dims.regions; ++c) {
      row[c] = static_cast<double>(r.alpha[c]);
    }
    out.attention.push_back(std::move(row));
    if (y == Vocabulary::kEot) break;
  }
  return out;
}

template <typename Real>
struct LossGraphRefs {
  Var loss;                      // scalar
  std::vector<Var> param_vars;   // aligned with CaptionerParams order
};

// Teacher-forced, length-normalised cross-entropy over a batch, recorded on
// `g`. Each target must be SOT ... EOT; shorter sequences are padded to the
// batch maximum and padded steps carry zero loss weight. The scalar is
// mean_b [ -(1/L_b) sum_t log p(gold_t) ].
//
// Dropout masks are drawn from a stream seeded with `dropout_seed`, so a
// rebuild with the same seed reproduces the loss bit for bit.
template <typename Real>
LossGraphRefs<Real> build_batch_loss(Graph<Real>& g,
                                     const CaptionerParams<Real>& p,
                                     const std::vector<Tensor<Real>>& feats,
                                     const std::vector<std::vector<int>>& targets,
                                     Real keep_rate, std::uint64_t dropout_seed,
                                     bool training) {
  const ModelDims& d = p.dims;
  const int batch = static_cast<int>(targets.size());
  check(batch > 0, "loss: empty batch");
  check(feats.size() == targets.size(), "loss: ", feats.size(),
        " feature maps vs ", targets.size(), " targets");
  int max_steps = 0;
  for (const auto& t : targets) {
    check(t.size() >= 2, "loss: target must be at least SOT,EOT");
    check(t.front() == Vocabulary::kSot, "loss: target must begin with SOT");
    check(t.back() == Vocabulary::kEot, "loss: target must end with EOT");
    for (int id : t) {
      check(id >= 0 && id < d.vocab, "loss: token id ", id, " out of range");
    }
    max_steps = std::max(max_steps, static_cast<int>(t.size()) - 1);
  }

  LossGraphRefs<Real> refs;
  refs.param_vars.reserve(kParamCount);
  for (int i = 0; i < kParamCount; ++i) {
    refs.param_vars.push_back(g.param(&p.tensors[i]));
  }
  auto pv = [&refs](ParamIdx i) { return refs.param_vars[i]; };

  // Stack the feature maps: [(B*C) x D].
  Tensor<Real> stacked = Tensor<Real>::matrix(batch * d.regions, d.feat_dim);
  for (int b = 0; b < batch; ++b) {
    check(feats[b].rows() == d.regions && feats[b].cols() == d.feat_dim,
          "loss: feature map ", b, " must be ", d.regions, "x", d.feat_dim);
    std::copy(feats[b].data(), feats[b].data() + feats[b].size(),
              stacked.data() + static_cast<std::size_t>(b) * feats[b].size());
  }
  Var a_all = g.input(std::move(stacked));
  Var proj_a = g.matmul(a_all, pv(kAttWFeat));  // per-region scores, reused each step

  RngStream drop_rng(dropout_seed);
  Var h0 = g.input(Tensor<Real>::matrix(batch, d.hidden));
  Var c0 = g.input(Tensor<Real>::matrix(batch, d.hidden));
  Var h1 = g.input(Tensor<Real>::matrix(batch, d.hidden));
  Var c1 = g.input(Tensor<Real>::matrix(batch, d.hidden));

  auto lstm = [&](Var x, Var& h, Var& c, ParamIdx wx, ParamIdx wh,
                  ParamIdx bias) {
    Var gates = g.add_rowvec(
        g.add(g.matmul(x, pv(wx)), g.matmul(h, pv(wh))), pv(bias));
    Var gi = g.sigmoid_(g.cols(gates, 0, d.hidden));
    Var gf = g.sigmoid_(g.cols(gates, d.hidden, d.hidden));
    Var gg = g.tanh_(g.cols(gates, 2 * d.hidden, d.hidden));
    Var go = g.sigmoid_(g.cols(gates, 3 * d.hidden, d.hidden));
    c = g.add(g.mul(gf, c), g.mul(gi, gg));
    h = g.mul(go, g.tanh_(c));
  };

  Var total;
  for (int t = 0; t < max_steps; ++t) {
    std::vector<int> prev_ids(batch), gold_ids(batch);
    std::vector<std::uint8_t> live(batch);
    std::vector<Real> weights(batch);
    for (int b = 0; b < batch; ++b) {
      const auto& tgt = targets[b];
      const int steps_b = static_cast<int>(tgt.size()) - 1;
      const bool on = t < steps_b;
      live[b] = on ? 1 : 0;
      prev_ids[b] = on ? tgt[t] : Vocabulary::kPad;
      gold_ids[b] = on ? tgt[t + 1] : Vocabulary::kPad;
      weights[b] = on ? Real(-1) / (Real(steps_b) * Real(batch)) : Real(0);
    }

    // Attention over regions, queried by the previous top-layer state.
    Var hp = g.matmul(h1, pv(kAttWHid));
    Var scored = g.tanh_(g.add_rowvec_grouped(proj_a, hp));
    Var alpha = g.softmax_rows(g.reshape(g.matvec(scored, pv(kAttV)),
                                         batch, d.regions));
    Var ctx = g.rows_weighted_sum(a_all, alpha);

    Var z0 = g.dropout(ctx, keep_rate, drop_rng, training);
    lstm(z0, h0, c0, kLstm0Wx, kLstm0Wh, kLstm0B);
    Var z1 = g.dropout(h0, keep_rate, drop_rng, training);
    lstm(z1, h1, c1, kLstm1Wx, kLstm1Wh, kLstm1B);

    Var emb = g.embed_rows(pv(kEmbedding), prev_ids);
    Var merged = g.add(g.add(g.matmul(h1, pv(kOutWHid)),
                             g.matmul(emb, pv(kOutWEmb))),
                       g.matmul(ctx, pv(kOutWCtx)));
    Var probs = g.softmax_rows(
        g.add_rowvec(g.matmul(merged, pv(kOutWLogit)), pv(kOutBLogit)));
    Var step_loss = g.dot_const(
        g.log_(g.pick_rows(probs, std::move(gold_ids), std::move(live))),
        std::move(weights));
    total = total.valid() ? g.add(total, step_loss) : step_loss;
  }
  refs.loss = total;
  return refs;
}

// Teacher-forced loss for a single sample; the batched graph with B = 1.
template <typename Real>
double sequence_loss(const CaptionerParams<Real>& p, const Tensor<Real>& feat,
                     const std::vector<int>& target, Real keep_rate,
                     std::uint64_t dropout_seed, bool training) {
  check(!target.empty(), "sequence_loss: empty target rejected");
  Graph<Real> g;
  LossGraphRefs<Real> refs =
      build_batch_loss(g, p, {feat}, {target}, keep_rate, dropout_seed,
                       training);
  return static_cast<double>(g.value(refs.loss)[0]);
}

}  // namespace xcap

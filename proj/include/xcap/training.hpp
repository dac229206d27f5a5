#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "xcap/captioner.hpp"
#include "xcap/synthdata.hpp"
#include "xcap/util.hpp"

namespace xcap {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double keep_rate = 0.8;       // dropout keep probability
  double augment_sigma = 0.02;  // gaussian feature noise, train split only
  double grad_clip_norm = 5.0;  // global-norm clip; <= 0 disables
  std::uint64_t seed = 1;
  int early_stop_patience = 10;   // epochs without val improvement; <= 0 disables
  double stop_train_loss = 0.0;   // stop once train loss drops below; <= 0 disables

  void validate() const {
    check(epochs > 0, "train: epochs must be positive");
    check(batch_size > 0, "train: batch_size must be positive");
    check(learning_rate >= 0.0, "train: learning_rate must be >= 0");
    check(keep_rate > 0.0 && keep_rate <= 1.0,
          "train: keep_rate must be in (0, 1], got ", keep_rate);
    check(augment_sigma >= 0.0, "train: augment_sigma must be >= 0");
  }
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;

  // epoch,train_loss,val_loss,seconds — full-precision losses so equal runs
  // produce identical rows; seconds is wall time and excluded from the
  // reproducibility contract.
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    check(out.good(), "history: cannot write ", path);
    out << "epoch,train_loss,val_loss,seconds\n";
    char buf[160];
    for (const EpochStats& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.3f\n", e.epoch,
                    e.train_loss, e.val_loss, e.seconds);
      out << buf;
    }
    check(out.good(), "history: write failed for ", path);
  }

  // Timing excluded: reproducibility is about the loss trajectory.
  bool same_losses(const TrainHistory& o) const {
    if (epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const bool val_equal =
          (std::isnan(epochs[i].val_loss) && std::isnan(o.epochs[i].val_loss)) ||
          epochs[i].val_loss == o.epochs[i].val_loss;
      if (epochs[i].epoch != o.epochs[i].epoch ||
          epochs[i].train_loss != o.epochs[i].train_loss || !val_equal) {
        return false;
      }
    }
    return true;
  }
};

// Adam with bias correction; state allocated lazily on first step.
template <typename Real>
class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  // grads[i] pairs with params.tensors[i]; every gradient is multiplied by
  // `scale` (the clip factor) on the fly.
  void step(CaptionerParams<Real>& params,
            const std::vector<const Tensor<Real>*>& grads, Real lr,
            Real scale = Real(1)) {
    check(grads.size() == params.tensors.size(), "adam: gradient count");
    if (m_.empty()) {
      for (const Tensor<Real>& t : params.tensors) {
        m_.push_back(t.rank() == 1 ? Tensor<Real>::vector(t.rows())
                                   : Tensor<Real>::matrix(t.rows(), t.cols()));
        v_.push_back(m_.back());
      }
    }
    ++t_;
    const Real corr1 = Real(1) - static_cast<Real>(std::pow(kBeta1, t_));
    const Real corr2 = Real(1) - static_cast<Real>(std::pow(kBeta2, t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor<Real>& theta = params.tensors[i];
      const Tensor<Real>& g = *grads[i];
      check(g.size() == theta.size(), "adam: gradient shape for ",
            params.names[i]);
      Tensor<Real>& m = m_[i];
      Tensor<Real>& v = v_[i];
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const Real gk = g[k] * scale;
        m[k] = static_cast<Real>(kBeta1) * m[k] +
               (Real(1) - static_cast<Real>(kBeta1)) * gk;
        v[k] = static_cast<Real>(kBeta2) * v[k] +
               (Real(1) - static_cast<Real>(kBeta2)) * gk * gk;
        const Real mhat = m[k] / corr1;
        const Real vhat = v[k] / corr2;
        theta[k] -= lr * mhat / (std::sqrt(vhat) + static_cast<Real>(kEps));
      }
    }
  }

 private:
  std::vector<Tensor<Real>> m_, v_;
  long t_ = 0;
};

template <typename Real>
double global_grad_norm(const std::vector<const Tensor<Real>*>& grads) {
  double sq = 0.0;
  for (const Tensor<Real>* g : grads) {
    for (std::size_t k = 0; k < g->size(); ++k) {
      const double x = static_cast<double>((*g)[k]);
      sq += x * x;
    }
  }
  return std::sqrt(sq);
}

template <typename Real>
struct TrainResult {
  CaptionerParams<Real> params;  // best by val loss, else final
  TrainHistory history;
};

namespace detail {

// rng lanes under the training seed
constexpr std::uint64_t kLaneShuffle = 1;
constexpr std::uint64_t kLaneAugment = 2;
constexpr std::uint64_t kLaneDropout = 3;

template <typename Real>
Tensor<Real> feature_tensor(const Dataset& ds, std::size_t i, double sigma,
                            RngStream* rng) {
  const auto view = ds.feature_view(i);
  Tensor<Real> t = Tensor<Real>::matrix(ds.regions, ds.feat_dim);
  for (std::size_t k = 0; k < view.size(); ++k) {
    double v = static_cast<double>(view[k]);
    if (rng != nullptr && sigma > 0.0) v += sigma * rng->next_gaussian();
    t[k] = static_cast<Real>(v);
  }
  return t;
}

// Mean loss over a dataset without dropout or augmentation.
template <typename Real>
double evaluate_loss(const CaptionerParams<Real>& params, const Dataset& ds,
                     int batch_size) {
  double total = 0.0;
  Graph<Real> g;
  for (std::size_t start = 0; start < ds.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(ds.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor<Real>> feats;
    std::vector<std::vector<int>> targets;
    for (std::size_t i = start; i < end; ++i) {
      feats.push_back(feature_tensor<Real>(ds, i, 0.0, nullptr));
      targets.push_back(ds.records[i].tokens);
    }
    g.reset();
    LossGraphRefs<Real> refs = build_batch_loss(
        g, params, feats, targets, Real(1), 0, /*training=*/false);
    total += static_cast<double>(g.value(refs.loss)[0]) *
             static_cast<double>(end - start);
  }
  return total / static_cast<double>(ds.size());
}

}  // namespace detail

// Teacher-forced minibatch training. Shuffles per epoch, buckets by sentence
// length to limit padding, applies feature-noise augmentation and dropout,
// clips the global gradient norm and updates with Adam. Tracks the best
// validation loss when `val` is non-null and non-empty; otherwise the final
// parameters are returned. Deterministic for a fixed config and dataset.
template <typename Real>
TrainResult<Real> train(const Dataset& train_split, const Dataset* val_split,
                        const ModelDims& dims, const TrainConfig& cfg) {
  cfg.validate();
  check(!train_split.records.empty(), "train: empty train split");
  check(train_split.regions == dims.regions &&
            train_split.feat_dim == dims.feat_dim,
        "train: dataset features ", train_split.regions, "x",
        train_split.feat_dim, " do not match model ", dims.regions, "x",
        dims.feat_dim);
  for (const DatasetRecord& r : train_split.records) {
    for (int id : r.tokens) {
      check(id >= 0 && id < dims.vocab, "train: record ", r.id, " token id ",
            id, " outside vocabulary of size ", dims.vocab);
    }
  }
  const bool has_val = val_split != nullptr && !val_split->records.empty();

  CaptionerParams<Real> params = CaptionerParams<Real>::init(dims, cfg.seed);
  AdamOptimizer<Real> adam;
  RngStream root(cfg.seed);
  const std::size_t n = train_split.size();

  TrainResult<Real> result;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  Graph<Real> graph;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream shuffle_rng =
        root.split(detail::kLaneShuffle).split(static_cast<std::uint64_t>(epoch));
    shuffle(order, shuffle_rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return train_split.records[a].tokens.size() <
                              train_split.records[b].tokens.size();
                     });

    RngStream augment_root =
        root.split(detail::kLaneAugment).split(static_cast<std::uint64_t>(epoch));
    RngStream dropout_root =
        root.split(detail::kLaneDropout).split(static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n;
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor<Real>> feats;
      std::vector<std::vector<int>> targets;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        RngStream aug = augment_root.split(static_cast<std::uint64_t>(idx));
        feats.push_back(detail::feature_tensor<Real>(
            train_split, idx, cfg.augment_sigma, &aug));
        targets.push_back(train_split.records[idx].tokens);
      }
      graph.reset();
      LossGraphRefs<Real> refs = build_batch_loss(
          graph, params, feats, targets, static_cast<Real>(cfg.keep_rate),
          dropout_root.split(static_cast<std::uint64_t>(batch_index)).next_u64(),
          /*training=*/true);
      const double batch_loss = static_cast<double>(graph.value(refs.loss)[0]);
      check(std::isfinite(batch_loss), "train: non-finite loss at epoch ",
            epoch, ", batch ", batch_index);
      graph.backward(refs.loss);

      std::vector<const Tensor<Real>*> grads;
      grads.reserve(refs.param_vars.size());
      for (Var v : refs.param_vars) grads.push_back(&graph.grad(v));
      Real scale = Real(1);
      if (cfg.grad_clip_norm > 0.0) {
        const double norm = global_grad_norm(grads);
        if (norm > cfg.grad_clip_norm) {
          scale = static_cast<Real>(cfg.grad_clip_norm / norm);
        }
      }
      adam.step(params, grads, static_cast<Real>(cfg.learning_rate), scale);
      loss_sum += batch_loss * static_cast<double>(end - start);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    if (has_val) {
      stats.val_loss =
          detail::evaluate_loss(params, *val_split, cfg.batch_size);
    }
    stats.seconds = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - epoch_start)
                        .count();
    result.history.epochs.push_back(stats);

    if (has_val) {
      if (stats.val_loss < best_val) {
        best_val = stats.val_loss;
        result.params = params;
        epochs_since_best = 0;
      } else {
        ++epochs_since_best;
      }
      if (cfg.early_stop_patience > 0 &&
          epochs_since_best >= cfg.early_stop_patience) {
        break;
      }
    }
    if (cfg.stop_train_loss > 0.0 && stats.train_loss < cfg.stop_train_loss) {
      break;
    }
  }
  if (!has_val) result.params = std::move(params);
  return result;
}

// ---- checkpoint format ----
// magic "XCAP", version u16, vocab u32, tensor count u32; per tensor:
// name length u16 + name, rank u8, dims u32 each, raw float32
// little-endian data.

constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void write_u16(std::ofstream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF),
                     static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

inline bool read_u16(std::ifstream& in, std::uint16_t& v) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) return false;
  v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  return true;
}

inline bool read_u32(std::ifstream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void write_f32(std::ofstream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline bool read_f32(std::ifstream& in, float& v) {
  std::uint32_t bits;
  if (!read_u32(in, bits)) return false;
  std::memcpy(&v, &bits, 4);
  return true;
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const CaptionerParams<Real>& params,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "checkpoint: cannot write ", path);
  out.write("XCAP", 4);
  detail::write_u16(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(params.dims.vocab));
  detail::write_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const std::string& name = params.names[i];
    const Tensor<Real>& t = params.tensors[i];
    detail::write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    detail::write_u32(out, static_cast<std::uint32_t>(t.rows()));
    if (t.rank() == 2) detail::write_u32(out, static_cast<std::uint32_t>(t.cols()));
    for (std::size_t k = 0; k < t.size(); ++k) {
      detail::write_f32(out, static_cast<float>(t[k]));
    }
  }
  check(out.good(), "checkpoint: write failed for ", path);
}

inline int peek_checkpoint_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "checkpoint: cannot read ", path);
  char magic[4];
  check(static_cast<bool>(in.read(magic, 4)) && std::string(magic, 4) == "XCAP",
        "checkpoint: bad magic in ", path);
  std::uint16_t version = 0;
  check(detail::read_u16(in, version) && version == kCheckpointVersion,
        "checkpoint: unsupported version in ", path);
  std::uint32_t vocab = 0;
  check(detail::read_u32(in, vocab), "checkpoint: truncated header in ", path);
  return static_cast<int>(vocab);
}

// Loads a checkpoint and validates it against the expected model definition;
// name or shape mismatches are rejected with the offending tensor named.
template <typename Real>
CaptionerParams<Real> load_checkpoint(const std::string& path,
                                      const ModelDims& dims) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "checkpoint: cannot read ", path);
  char magic[4];
  check(static_cast<bool>(in.read(magic, 4)) && std::string(magic, 4) == "XCAP",
        "checkpoint: bad magic in ", path);
  std::uint16_t version = 0;
  check(detail::read_u16(in, version), "checkpoint: truncated header");
  check(version == kCheckpointVersion, "checkpoint: version ", version,
        " unsupported (expected ", kCheckpointVersion, ")");
  std::uint32_t vocab = 0, count = 0;
  check(detail::read_u32(in, vocab) && detail::read_u32(in, count),
        "checkpoint: truncated header");
  check(static_cast<int>(vocab) == dims.vocab,
        "checkpoint: vocabulary size ", vocab,
        " does not match model vocabulary size ", dims.vocab);

  CaptionerParams<Real> params = CaptionerParams<Real>::zeros(dims);
  check(count == params.tensors.size(), "checkpoint: has ", count,
        " tensors, model expects ", params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const std::string& want = params.names[i];
    std::uint16_t name_len = 0;
    check(detail::read_u16(in, name_len),
          "checkpoint: truncated, missing tensor '", want, "'");
    std::string name(name_len, '\0');
    check(static_cast<bool>(in.read(name.data(), name_len)),
          "checkpoint: truncated, missing tensor '", want, "'");
    check(name == want, "checkpoint: tensor ", i, " is '", name,
          "', expected '", want, "'");
    int rank = in.get();
    check(rank == 1 || rank == 2, "checkpoint: tensor '", name, "' has rank ",
          rank);
    std::uint32_t rows = 0, cols = 1;
    check(detail::read_u32(in, rows) && (rank == 1 || detail::read_u32(in, cols)),
          "checkpoint: truncated dims for tensor '", name, "'");
    Tensor<Real>& t = params.tensors[i];
    check(rank == t.rank() && static_cast<int>(rows) == t.rows() &&
              static_cast<int>(cols) == t.cols(),
          "checkpoint: tensor '", name, "' has shape ", rows, "x", cols,
          ", model expects ", t.rows(), "x", t.cols());
    for (std::size_t k = 0; k < t.size(); ++k) {
      float v = 0;
      check(detail::read_f32(in, v), "checkpoint: truncated data in tensor '",
            name, "'");
      check(std::isfinite(v), "checkpoint: non-finite value in tensor '", name,
            "'");
      t[k] = static_cast<Real>(v);
    }
  }
  in.peek();
  check(in.eof(), "checkpoint: trailing bytes after last tensor in ", path);
  return params;
}

}  // namespace xcap

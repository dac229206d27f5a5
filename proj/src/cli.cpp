#include "xcap/cli.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xcap/captioner.hpp"
#include "xcap/evaluation.hpp"
#include "xcap/gradcheck.hpp"
#include "xcap/grammar.hpp"
#include "xcap/synthdata.hpp"
#include "xcap/training.hpp"
#include "xcap/util.hpp"

namespace xcap {

namespace {

using json = nlohmann::json;

// Values resolve as: explicit flag > --config JSON > built-in default.
// bind() every option first, then finalize() with the config path.
class ConfigOverlay {
 public:
  template <typename T>
  void bind(const CLI::Option* opt, const std::string& key, T& target) {
    known_.insert(key);
    if (opt->count() > 0) return;  // explicit flag wins
    setters_.emplace_back(key, [&target, key](const json& v) {
      try {
        target = v.get<T>();
      } catch (const json::exception& e) {
        fail("config: bad value for '", key, "': ", e.what());
      }
    });
  }

  void finalize(const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    check(in.good(), "config: cannot read ", path);
    json cfg;
    try {
      in >> cfg;
    } catch (const json::exception& e) {
      fail("config: invalid JSON in ", path, ": ", e.what());
    }
    check(cfg.is_object(), "config: top level must be a JSON object");
    for (const auto& [key, _] : cfg.items()) {
      check(known_.count(key) != 0, "config: unknown key '", key, "'");
    }
    for (const auto& [key, setter] : setters_) {
      if (cfg.contains(key)) setter(cfg.at(key));
    }
  }

 private:
  std::vector<std::pair<std::string, std::function<void(const json&)>>>
      setters_;
  std::set<std::string> known_;
};

void print_summary(const json& j) { std::cout << "SUMMARY " << j.dump() << "\n"; }

std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int id : tokens) {
    if (id == Vocabulary::kSot) continue;
    if (id == Vocabulary::kEot) break;
    out.push_back(id);
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

struct DecodedSplit {
  std::vector<std::vector<int>> content;  // specials stripped
  std::vector<AttentionTrace> traces;
};

DecodedSplit decode_split(const CaptionerParams<float>& params,
                          const Dataset& ds, int max_len) {
  DecodedSplit out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor<float> feat = ds.feature_map(i).to_tensor<float>();
    DecodeResult r = decode_greedy(params, feat, max_len);
    out.content.push_back(strip_specials(r.tokens));
    AttentionTrace trace;
    trace.rows = std::move(r.attention);
    out.traces.push_back(std::move(trace));
  }
  return out;
}

CaptionerParams<float> load_model(const std::string& path, int vocab_size) {
  const int ckpt_vocab = peek_checkpoint_vocab(path);
  check(ckpt_vocab == vocab_size, "checkpoint vocabulary size ", ckpt_vocab,
        " does not match grammar vocabulary size ", vocab_size);
  return load_checkpoint<float>(path, ModelDims::full(vocab_size));
}

int cmd_synth(const SynthConfig& cfg, const std::string& out_dir) {
  const SynthSummary s = generate_dataset(cfg, out_dir);
  print_summary({{"command", "synth"},
                 {"out", s.out_dir},
                 {"records", s.total},
                 {"fractures", s.fractures},
                 {"seed", cfg.seed}});
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& ckpt_path,
              std::string history_path, const TrainConfig& cfg) {
  const Vocabulary vocab = Vocabulary::build();
  const Dataset train_split = load_dataset(data_dir, "train");
  const Dataset val_split = load_dataset(data_dir, "val");
  const ModelDims dims = ModelDims::full(vocab.size());
  TrainResult<float> result =
      train<float>(train_split, &val_split, dims, cfg);
  save_checkpoint(result.params, ckpt_path);
  if (history_path.empty()) history_path = ckpt_path + ".history.csv";
  result.history.write_csv(history_path);

  double best_val = std::numeric_limits<double>::quiet_NaN();
  for (const EpochStats& e : result.history.epochs) {
    if (std::isnan(best_val) || e.val_loss < best_val) best_val = e.val_loss;
  }
  json summary = {{"command", "train"},
                  {"checkpoint", ckpt_path},
                  {"history", history_path},
                  {"epochs_run", result.history.epochs.size()}};
  if (!std::isnan(best_val)) summary["best_val_loss"] = best_val;
  print_summary(summary);
  return 0;
}

std::string sanitize_token(const std::string& token) {
  std::string out;
  for (char ch : token) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out += ch;
  }
  return out.empty() ? "tok" : out;
}

int cmd_generate(const std::string& model_path, const std::string& data_dir,
                 const std::string& split, const std::string& ids_csv,
                 const std::string& attention_dir, int max_len) {
  const Vocabulary vocab = Vocabulary::build();
  const CaptionerParams<float> params = load_model(model_path, vocab.size());
  const Dataset ds = load_dataset(data_dir, split);

  std::set<std::string> wanted;
  if (!ids_csv.empty()) {
    std::string cur;
    for (char ch : ids_csv + ",") {
      if (ch == ',') {
        if (!cur.empty()) wanted.insert(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
  }

  int generated = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DatasetRecord& rec = ds.records[i];
    if (!wanted.empty() && wanted.count(rec.id) == 0) continue;
    Tensor<float> feat = ds.feature_map(i).to_tensor<float>();
    DecodeResult r = decode_greedy(params, feat, max_len);
    const std::vector<int> content = strip_specials(r.tokens);
    std::cout << rec.id << '\t' << join_words(vocab.decode(content)) << "\n";
    ++generated;
    if (!attention_dir.empty()) {
      std::vector<std::string> emitted;
      for (std::size_t t = 1; t < r.tokens.size(); ++t) {
        emitted.push_back(sanitize_token(vocab.token(r.tokens[t])));
      }
      AttentionTrace trace;
      trace.rows = std::move(r.attention);
      export_attention(trace, emitted, attention_dir + "/" + rec.id);
    }
  }
  check(wanted.empty() || generated == static_cast<int>(wanted.size()),
        "generate: some requested ids were not found in split '", split, "'");
  print_summary({{"command", "generate"}, {"generated", generated}});
  return 0;
}

json eval_split(const CaptionerParams<float>& params, const Vocabulary& vocab,
                const Dataset& ds, int max_len, bool* bleu_defined) {
  const DecodedSplit decoded = decode_split(params, ds, max_len);

  // attention rows must be simplexes
  for (const AttentionTrace& trace : decoded.traces) {
    for (const std::vector<double>& row : trace.rows) {
      double sum = 0.0;
      for (double v : row) {
        check(v >= 0.0 && v <= 1.0, "eval: attention weight out of [0,1]");
        sum += v;
      }
      check(std::abs(sum - 1.0) <= 1e-6, "eval: attention row sums to ", sum);
    }
  }

  std::vector<std::vector<int>> cands, refs;
  std::vector<std::vector<std::string>> pred_words;
  std::vector<CaseDescription> gold;
  json focus_by_id = json::object();
  double focus_sum = 0.0;
  int negatives = 0, negatives_exact = 0;
  const std::vector<int> negative_sentence =
      vocab.encode(render(CaseDescription::no_fracture()));

  for (std::size_t i = 0; i < ds.size(); ++i) {
    const DatasetRecord& rec = ds.records[i];
    if (rec.labels.is_fracture()) {
      cands.push_back(decoded.content[i]);
      refs.push_back(strip_specials(rec.tokens));
      pred_words.push_back(vocab.decode(decoded.content[i]));
      gold.push_back(rec.labels);
      const double focus =
          attention_focus(decoded.traces[i], *rec.labels.fracture);
      focus_by_id[rec.id] = focus;
      focus_sum += focus;
    } else {
      ++negatives;
      if (decoded.content[i] == negative_sentence) ++negatives_exact;
    }
  }

  json out;
  *bleu_defined = !cands.empty();
  if (!cands.empty()) {
    const BleuReport b = bleu(cands, refs);
    for (int n = 1; n < 4; ++n) {
      check(b.precisions[n - 1] + 1e-9 >= b.precisions[n],
            "eval: n-gram precisions not monotone: p", n, "=",
            b.precisions[n - 1], " < p", n + 1, "=", b.precisions[n]);
    }
    out["bleu"] = {{"p1", b.precisions[0]},
                   {"p2", b.precisions[1]},
                   {"p3", b.precisions[2]},
                   {"p4", b.precisions[3]},
                   {"bp", b.brevity_penalty},
                   {"cumulative", b.cumulative}};
    const ContentReport c = content_accuracy(pred_words, gold);
    out["content"] = {{"location_acc", c.location_acc},
                      {"character_acc", c.character_acc},
                      {"off_by_one", c.off_by_one},
                      {"unparseable", c.unparseable},
                      {"n", c.n}};
    out["attention_focus"] = {
        {"mean", focus_sum / static_cast<double>(cands.size())},
        {"per_record", focus_by_id}};
  }
  out["negatives"] = {
      {"n", negatives},
      {"exact", negatives_exact},
      {"exact_rate", negatives > 0
                         ? static_cast<double>(negatives_exact) / negatives
                         : 1.0}};
  return out;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& split, const std::string& report_path,
             int max_len) {
  const Vocabulary vocab = Vocabulary::build();
  const CaptionerParams<float> params = load_model(model_path, vocab.size());
  const Dataset ds = load_dataset(data_dir, split);
  check(!ds.records.empty(), "eval: split '", split, "' is empty");

  bool bleu_defined = false;
  const json report = eval_split(params, vocab, ds, max_len, &bleu_defined);

  if (bleu_defined) {
    const json& b = report.at("bleu");
    const json& c = report.at("content");
    std::printf("n-gram precision (fracture cases, %%)\n");
    for (int n = 1; n <= 4; ++n) {
      std::printf("  %d-gram              %6.1f\n", n,
                  b.at("p" + std::to_string(n)).get<double>());
    }
    std::printf("  brevity penalty     %6.3f\n", b.at("bp").get<double>());
    std::printf("  cumulative BLEU-4   %6.1f\n",
                b.at("cumulative").get<double>());
    std::printf("content accuracy over %d fracture cases (%%)\n",
                c.at("n").get<int>());
    std::printf("  location            %6.1f\n",
                c.at("location_acc").get<double>());
    std::printf("  fracture character  %6.1f\n",
                c.at("character_acc").get<double>());
    std::printf("  off-by-one location %6d\n", c.at("off_by_one").get<int>());
    std::printf("  unparseable         %6d\n", c.at("unparseable").get<int>());
    std::printf("attention focus (mean fraction in planted block)  %.3f\n",
                report.at("attention_focus").at("mean").get<double>());
  }
  const json& neg = report.at("negatives");
  std::printf("negative cases: %d/%d exact\n", neg.at("exact").get<int>(),
              neg.at("n").get<int>());

  if (!report_path.empty()) {
    std::ofstream out(report_path);
    check(out.good(), "eval: cannot write ", report_path);
    out << report.dump(2) << '\n';
    check(out.good(), "eval: write failed for ", report_path);
  }
  json summary = {{"command", "eval"}, {"records", ds.records.size()}};
  if (bleu_defined) {
    summary["bleu4"] = report.at("bleu").at("cumulative");
    summary["location_acc"] = report.at("content").at("location_acc");
    summary["character_acc"] = report.at("content").at("character_acc");
  }
  summary["negative_exact_rate"] = report.at("negatives").at("exact_rate");
  print_summary(summary);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double eps, double threshold) {
  const Vocabulary vocab = Vocabulary::build();
  const ModelDims dims = ModelDims::reduced(vocab.size());
  CaptionerParams<double> params = CaptionerParams<double>::init(dims, seed);

  RngStream rng(seed ^ 0xFEA7);
  Tensor<double> feat = Tensor<double>::matrix(dims.regions, dims.feat_dim);
  for (std::size_t i = 0; i < feat.size(); ++i) feat[i] = rng.next_gaussian();

  FractureLabels labels;
  labels.displacement = Displacement::kSeverelyDisplaced;
  labels.comminuted = true;
  labels.impacted = true;
  labels.avulsed_fragment = true;
  labels.location = Location::kTranscervical;
  std::vector<int> target = {Vocabulary::kSot};
  for (int id : vocab.encode(render(CaseDescription::of(labels)))) {
    target.push_back(id);
  }
  target.push_back(Vocabulary::kEot);

  const double keep_rate = 0.8;
  const std::uint64_t dropout_seed = seed + 17;

  Graph<double> g;
  LossGraphRefs<double> refs = build_batch_loss(
      g, params, {feat}, {target}, keep_rate, dropout_seed, /*training=*/true);
  g.backward(refs.loss);
  std::map<std::string, Tensor<double>> analytic;
  for (int i = 0; i < kParamCount; ++i) {
    analytic.emplace(params.names[i], g.grad(refs.param_vars[i]));
  }

  // The finite differences run through the captioner instantiated at long
  // double; otherwise differencing noise at step 1e-5 swamps parameters whose
  // true gradient is near zero.
  CaptionerParams<long double> pld = params.cast<long double>();
  Tensor<long double> fld = feat.cast<long double>();
  std::vector<std::pair<std::string, Tensor<long double>*>> live;
  for (int i = 0; i < kParamCount; ++i) {
    live.emplace_back(pld.names[i], &pld.tensors[i]);
  }
  std::function<long double()> loss_fn = [&]() -> long double {
    Graph<long double> fresh;
    LossGraphRefs<long double> r =
        build_batch_loss(fresh, pld, {fld}, {target},
                         static_cast<long double>(keep_rate), dropout_seed,
                         /*training=*/true);
    return fresh.value(r.loss)[0];
  };
  const GradCheckReport report =
      check_gradients<long double, double>(live, loss_fn, analytic, eps);
  std::printf("%-14s %14s\n", "parameter", "max rel error");
  for (const GradCheckEntry& e : report.entries) {
    std::printf("%-14s %14.3e\n", e.name.c_str(), e.max_rel_error);
  }
  const double worst = report.max_rel_error();
  std::printf("max over all parameters: %.3e (threshold %.1e)\n", worst,
              threshold);
  print_summary({{"command", "gradcheck"},
                 {"max_rel_error", worst},
                 {"threshold", threshold},
                 {"ok", worst < threshold}});
  return worst < threshold ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"attention-LSTM explanation captioner"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  SynthConfig synth_cfg;
  std::string synth_out, synth_config;
  auto* so_out = synth->add_option("--out", synth_out, "output directory")
                     ->required();
  auto* so_train = synth->add_option("--train", synth_cfg.train_count,
                                     "train record count");
  auto* so_val = synth->add_option("--val", synth_cfg.val_count,
                                   "val record count");
  auto* so_test = synth->add_option("--test", synth_cfg.test_count,
                                    "test record count");
  auto* so_rate = synth->add_option("--fracture-rate", synth_cfg.fracture_rate,
                                    "fraction of fracture cases");
  auto* so_sigma = synth->add_option("--noise-sigma", synth_cfg.noise_sigma,
                                     "background noise sigma");
  auto* so_strength = synth->add_option(
      "--signal-strength", synth_cfg.signal_strength, "planted signal scale");
  auto* so_seed = synth->add_option("--seed", synth_cfg.seed, "rng seed");
  synth->add_option("--config", synth_config, "JSON config mirroring flags");

  // train
  auto* tr = app.add_subcommand("train", "train the captioner");
  TrainConfig train_cfg;
  std::string train_data, train_out, train_history, train_config;
  auto* to_data = tr->add_option("--data", train_data, "dataset directory")
                      ->required();
  auto* to_out = tr->add_option("--out", train_out, "checkpoint path")
                     ->required();
  auto* to_epochs = tr->add_option("--epochs", train_cfg.epochs, "max epochs");
  auto* to_lr = tr->add_option("--lr", train_cfg.learning_rate,
                               "Adam learning rate");
  auto* to_batch = tr->add_option("--batch", train_cfg.batch_size,
                                  "minibatch size");
  auto* to_keep = tr->add_option("--keep-rate", train_cfg.keep_rate,
                                 "dropout keep probability");
  auto* to_aug = tr->add_option("--augment-sigma", train_cfg.augment_sigma,
                                "train-time feature noise sigma");
  auto* to_clip = tr->add_option("--grad-clip", train_cfg.grad_clip_norm,
                                 "global gradient norm clip");
  auto* to_seed = tr->add_option("--seed", train_cfg.seed, "rng seed");
  auto* to_patience = tr->add_option("--patience",
                                     train_cfg.early_stop_patience,
                                     "early-stop patience in epochs");
  auto* to_stop = tr->add_option("--stop-train-loss",
                                 train_cfg.stop_train_loss,
                                 "stop once train loss drops below");
  auto* to_history = tr->add_option("--history", train_history,
                                    "history CSV path");
  tr->add_option("--config", train_config, "JSON config mirroring flags");

  // generate
  auto* gen = app.add_subcommand("generate", "decode sentences for a split");
  std::string gen_model, gen_data, gen_split = "test", gen_ids, gen_att,
              gen_config;
  int gen_max_len = 20;
  auto* go_model = gen->add_option("--model", gen_model, "checkpoint path")
                       ->required();
  auto* go_data = gen->add_option("--data", gen_data, "dataset directory")
                      ->required();
  auto* go_split = gen->add_option("--split", gen_split, "train|val|test");
  auto* go_ids = gen->add_option("--ids", gen_ids,
                                 "comma-separated record ids to decode");
  auto* go_att = gen->add_option("--attention-out", gen_att,
                                 "directory for attention heatmap export");
  auto* go_maxlen = gen->add_option("--max-len", gen_max_len,
                                    "decoding length limit");
  gen->add_option("--config", gen_config, "JSON config mirroring flags");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a split");
  std::string eval_model, eval_data, eval_split_name = "test", eval_out,
              eval_config;
  int eval_max_len = 20;
  auto* eo_model = ev->add_option("--model", eval_model, "checkpoint path")
                       ->required();
  auto* eo_data = ev->add_option("--data", eval_data, "dataset directory")
                      ->required();
  auto* eo_split = ev->add_option("--split", eval_split_name,
                                  "train|val|test");
  auto* eo_out = ev->add_option("--out", eval_out, "report JSON path");
  auto* eo_maxlen = ev->add_option("--max-len", eval_max_len,
                                   "decoding length limit");
  ev->add_option("--config", eval_config, "JSON config mirroring flags");

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference gradient audit on the reduced model");
  std::uint64_t gc_seed = 1;
  double gc_eps = 1e-5, gc_threshold = 1e-4;
  std::string gc_config;
  auto* co_seed = gc->add_option("--seed", gc_seed, "rng seed");
  auto* co_eps = gc->add_option("--eps", gc_eps, "finite-difference step");
  auto* co_threshold = gc->add_option("--threshold", gc_threshold,
                                      "max acceptable relative error");
  gc->add_option("--config", gc_config, "JSON config mirroring flags");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      ConfigOverlay cfg;
      cfg.bind(so_out, "out", synth_out);
      cfg.bind(so_train, "train", synth_cfg.train_count);
      cfg.bind(so_val, "val", synth_cfg.val_count);
      cfg.bind(so_test, "test", synth_cfg.test_count);
      cfg.bind(so_rate, "fracture-rate", synth_cfg.fracture_rate);
      cfg.bind(so_sigma, "noise-sigma", synth_cfg.noise_sigma);
      cfg.bind(so_strength, "signal-strength", synth_cfg.signal_strength);
      cfg.bind(so_seed, "seed", synth_cfg.seed);
      cfg.finalize(synth_config);
      return cmd_synth(synth_cfg, synth_out);
    }
    if (tr->parsed()) {
      ConfigOverlay cfg;
      cfg.bind(to_data, "data", train_data);
      cfg.bind(to_out, "out", train_out);
      cfg.bind(to_epochs, "epochs", train_cfg.epochs);
      cfg.bind(to_lr, "lr", train_cfg.learning_rate);
      cfg.bind(to_batch, "batch", train_cfg.batch_size);
      cfg.bind(to_keep, "keep-rate", train_cfg.keep_rate);
      cfg.bind(to_aug, "augment-sigma", train_cfg.augment_sigma);
      cfg.bind(to_clip, "grad-clip", train_cfg.grad_clip_norm);
      cfg.bind(to_seed, "seed", train_cfg.seed);
      cfg.bind(to_patience, "patience", train_cfg.early_stop_patience);
      cfg.bind(to_stop, "stop-train-loss", train_cfg.stop_train_loss);
      cfg.bind(to_history, "history", train_history);
      cfg.finalize(train_config);
      return cmd_train(train_data, train_out, train_history, train_cfg);
    }
    if (gen->parsed()) {
      ConfigOverlay cfg;
      cfg.bind(go_model, "model", gen_model);
      cfg.bind(go_data, "data", gen_data);
      cfg.bind(go_split, "split", gen_split);
      cfg.bind(go_ids, "ids", gen_ids);
      cfg.bind(go_att, "attention-out", gen_att);
      cfg.bind(go_maxlen, "max-len", gen_max_len);
      cfg.finalize(gen_config);
      return cmd_generate(gen_model, gen_data, gen_split, gen_ids, gen_att,
                          gen_max_len);
    }
    if (ev->parsed()) {
      ConfigOverlay cfg;
      cfg.bind(eo_model, "model", eval_model);
      cfg.bind(eo_data, "data", eval_data);
      cfg.bind(eo_split, "split", eval_split_name);
      cfg.bind(eo_out, "out", eval_out);
      cfg.bind(eo_maxlen, "max-len", eval_max_len);
      cfg.finalize(eval_config);
      return cmd_eval(eval_model, eval_data, eval_split_name, eval_out,
                      eval_max_len);
    }
    if (gc->parsed()) {
      ConfigOverlay cfg;
      cfg.bind(co_seed, "seed", gc_seed);
      cfg.bind(co_eps, "eps", gc_eps);
      cfg.bind(co_threshold, "threshold", gc_threshold);
      cfg.finalize(gc_config);
      return cmd_gradcheck(gc_seed, gc_eps, gc_threshold);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n" << app.help() << "\n";
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace xcap

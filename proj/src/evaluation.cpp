#include "xcap/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "xcap/synthdata.hpp"
#include "xcap/util.hpp"

namespace xcap {

namespace {

using NgramCounts = std::map<std::vector<int>, long>;

NgramCounts ngram_counts(const std::vector<int>& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<int>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

BleuReport bleu(const std::vector<std::vector<int>>& candidates,
                const std::vector<std::vector<int>>& references) {
  check(!candidates.empty(), "bleu: empty corpus rejected");
  check(candidates.size() == references.size(), "bleu: ", candidates.size(),
        " candidates vs ", references.size(), " references");

  BleuReport report;
  std::array<long, 4> matched = {0, 0, 0, 0};
  std::array<long, 4> total = {0, 0, 0, 0};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    report.candidate_length += static_cast<long>(candidates[i].size());
    report.reference_length += static_cast<long>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      const NgramCounts cand = ngram_counts(candidates[i], n);
      const NgramCounts ref = ngram_counts(references[i], n);
      for (const auto& [gram, count] : cand) {
        total[n - 1] += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 0; n < 4; ++n) {
    const double p =
        total[n] > 0 ? static_cast<double>(matched[n]) / total[n] : 0.0;
    report.precisions[n] = 100.0 * p;
    if (p > 0.0) {
      log_sum += 0.25 * std::log(p);
    } else {
      any_zero = true;
    }
  }
  report.brevity_penalty =
      (report.candidate_length < report.reference_length &&
       report.candidate_length > 0)
          ? std::exp(1.0 - static_cast<double>(report.reference_length) /
                               report.candidate_length)
          : 1.0;
  report.cumulative =
      any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum);
  return report;
}

ContentReport content_accuracy(
    const std::vector<std::vector<std::string>>& predicted,
    const std::vector<CaseDescription>& gold) {
  check(predicted.size() == gold.size(), "content: ", predicted.size(),
        " predictions vs ", gold.size(), " gold cases");
  ContentReport report;
  report.n = static_cast<int>(gold.size());
  int loc_ok = 0, char_ok = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const std::optional<CaseDescription> parsed = parse(predicted[i]);
    if (!parsed.has_value()) {
      ++report.unparseable;
      continue;
    }
    if (parsed->is_fracture() != gold[i].is_fracture()) continue;
    if (!parsed->is_fracture()) {
      // both negative: trivially appropriate on both axes
      ++loc_ok;
      ++char_ok;
      continue;
    }
    const FractureLabels& p = *parsed->fracture;
    const FractureLabels& g = *gold[i].fracture;
    if (p.location == g.location) {
      ++loc_ok;
    } else if (std::abs(static_cast<int>(p.location) -
                        static_cast<int>(g.location)) == 1) {
      ++report.off_by_one;
    }
    if (p.displacement == g.displacement && p.comminuted == g.comminuted &&
        p.impacted == g.impacted && p.avulsed_fragment == g.avulsed_fragment) {
      ++char_ok;
    }
  }
  if (report.n > 0) {
    report.location_acc = 100.0 * loc_ok / report.n;
    report.character_acc = 100.0 * char_ok / report.n;
  }
  return report;
}

void export_attention(const AttentionTrace& trace,
                      const std::vector<std::string>& tokens,
                      const std::string& out_dir) {
  check(trace.rows.size() == tokens.size(), "attention export: ",
        trace.rows.size(), " rows vs ", tokens.size(), " tokens");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "attention export: cannot create ", out_dir, ": ", ec.message());

  std::ofstream index(out_dir + "/index.csv");
  check(index.good(), "attention export: cannot write index.csv");
  index << "step,token,csv,pgm\n";

  for (std::size_t t = 0; t < trace.rows.size(); ++t) {
    const std::vector<double>& row = trace.rows[t];
    const int side = static_cast<int>(std::lround(std::sqrt(
        static_cast<double>(row.size()))));
    check(side * side == static_cast<int>(row.size()),
          "attention export: row of ", row.size(), " is not a square grid");

    char name[64];
    std::snprintf(name, sizeof(name), "step_%02zu_%s", t, tokens[t].c_str());
    const std::string csv_name = std::string(name) + ".csv";
    const std::string pgm_name = std::string(name) + ".pgm";

    std::ofstream csv(out_dir + "/" + csv_name);
    check(csv.good(), "attention export: cannot write ", csv_name);
    char buf[48];
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        std::snprintf(buf, sizeof(buf), "%.9g", row[r * side + c]);
        csv << buf << (c + 1 == side ? '\n' : ',');
      }
    }

    double row_max = 0.0;
    for (double v : row) row_max = std::max(row_max, v);
    std::ofstream pgm(out_dir + "/" + pgm_name, std::ios::binary);
    check(pgm.good(), "attention export: cannot write ", pgm_name);
    pgm << "P5\n" << side << " " << side << "\n255\n";
    for (double v : row) {
      const int px =
          row_max > 0.0
              ? static_cast<int>(std::lround(255.0 * std::clamp(v / row_max, 0.0, 1.0)))
              : 0;
      pgm.put(static_cast<char>(px));
    }
    check(pgm.good(), "attention export: write failed for ", pgm_name);
    index << t << ',' << tokens[t] << ',' << csv_name << ',' << pgm_name
          << '\n';
  }
  check(index.good(), "attention export: write failed for index.csv");
}

double attention_focus(const AttentionTrace& trace, const FractureLabels& f) {
  if (trace.rows.empty()) return 0.0;
  const SignalBlock block = signal_block(f.location);
  int inside = 0;
  for (const std::vector<double>& row : trace.rows) {
    const int side = static_cast<int>(std::lround(std::sqrt(
        static_cast<double>(row.size()))));
    check(side * side == static_cast<int>(row.size()),
          "attention focus: row is not a square grid");
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = static_cast<int>(c);
    }
    const int r = best / side;
    const int c = best % side;
    if (r >= block.row0 - 1 && r <= block.row1 + 1 && c >= block.col0 - 1 &&
        c <= block.col1 + 1) {
      ++inside;
    }
  }
  return static_cast<double>(inside) / static_cast<double>(trace.rows.size());
}

}  // namespace xcap

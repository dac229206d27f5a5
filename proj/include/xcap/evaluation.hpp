#pragma once

#include <array>
#include <string>
#include <vector>

#include "xcap/grammar.hpp"

namespace xcap {

struct BleuReport {
  std::array<double, 4> precisions = {0, 0, 0, 0};  // p1..p4, percent
  double brevity_penalty = 1.0;                     // in (0, 1]
  double cumulative = 0.0;                          // BLEU-4, percent
  long candidate_length = 0;
  long reference_length = 0;
};

// Corpus-level BLEU with a single reference per candidate: clipped modified
// n-gram precision for n = 1..4, brevity penalty exp(1 - r/c) when c < r,
// cumulative score BP * exp(mean ln p_n); any p_n = 0 zeroes the cumulative
// score. No smoothing. Tokens are vocabulary ids without specials.
BleuReport bleu(const std::vector<std::vector<int>>& candidates,
                const std::vector<std::vector<int>>& references);

struct ContentReport {
  double location_acc = 0.0;   // percent
  double character_acc = 0.0;  // percent
  int off_by_one = 0;          // adjacent-location errors
  int unparseable = 0;
  int n = 0;  // denominator for both accuracies
};

// Parses each predicted sentence and scores it against the gold description.
// Location is correct iff the parsed location matches; character is correct
// iff displacement and all three flags match. Unparseable predictions, and
// fracture/no-fracture confusions in either direction, count wrong on both
// axes. Off-by-one locations follow the subcapital - transcervical -
// basicervical adjacency.
ContentReport content_accuracy(
    const std::vector<std::vector<std::string>>& predicted,
    const std::vector<CaseDescription>& gold);

// Attention rows, one per emitted token, each a simplex over grid regions.
struct AttentionTrace {
  std::vector<std::vector<double>> rows;
};

// Per token: an 8x8 CSV of raw weights and an 8-bit 8x8 grayscale PGM scaled
// so the row maximum maps to 255, plus an index.csv mapping token positions
// to files.
void export_attention(const AttentionTrace& trace,
                      const std::vector<std::string>& tokens,
                      const std::string& out_dir);

// Fraction of steps whose argmax region lands inside the planted location
// block dilated by one cell. Diagnostic only.
double attention_focus(const AttentionTrace& trace, const FractureLabels& f);

}  // namespace xcap

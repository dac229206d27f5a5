#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xcap/captioner.hpp"
#include "xcap/grammar.hpp"
#include "xcap/rng.hpp"

namespace xcap {

struct SynthConfig {
  int train_count = 2000;
  int val_count = 200;
  int test_count = 200;
  double fracture_rate = 0.5;
  double noise_sigma = 0.1;
  double signal_strength = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct DatasetRecord {
  std::string id;
  std::string split;  // train | val | test
  CaseDescription labels;
  std::vector<int> tokens;  // SOT ... EOT
  std::int64_t feature_index = 0;
};

// One loaded split: records plus their feature blocks, contiguous in record
// order.
struct Dataset {
  int regions = 0;
  int feat_dim = 0;
  std::vector<DatasetRecord> records;
  std::vector<float> features;

  std::size_t size() const { return records.size(); }
  std::span<const float> feature_view(std::size_t i) const;
  FeatureMap feature_map(std::size_t i) const;
};

// Inclusive 2x2 grid block (8x8 grid, 0-based rows/cols) that carries the
// planted signal for a fracture location.
struct SignalBlock {
  int row0, row1, col0, col1;

  bool contains(int row, int col) const {
    return row >= row0 && row <= row1 && col >= col0 && col <= col1;
  }
};

SignalBlock signal_block(Location loc);

// Ten fixed mutually orthonormal directions in feature space: one per
// displacement degree, then comminuted, impacted, avulsed, then one per
// location. Orthonormality is verified (1e-10) on first use. The location
// directions make a region's content depend on the anatomical site, as real
// classifier activations do; without them the attended feature sum is
// identical across sites and no decoder could name the location.
const std::vector<std::vector<double>>& signal_directions();

// Gaussian background everywhere; for fractures, every cell of the location
// block additionally receives signal_strength times the sum of the active
// label directions (displacement, set flags, location). Deterministic in the
// stream.
FeatureMap generate_record(const CaseDescription& c, RngStream rng,
                           double noise_sigma, double signal_strength);

struct SynthSummary {
  int total = 0;
  int fractures = 0;
  std::string out_dir;
};

// Writes manifest.json, features.f32 and vocab.txt. Pure function of the
// config: equal configs give byte-identical directories.
SynthSummary generate_dataset(const SynthConfig& cfg,
                              const std::string& out_dir);

Dataset load_dataset(const std::string& dir, const std::string& split);

}  // namespace xcap

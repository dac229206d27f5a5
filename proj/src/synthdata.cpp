#include "xcap/synthdata.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "xcap/util.hpp"

namespace xcap {

namespace {

using json = nlohmann::json;

constexpr int kGridSide = 8;
constexpr int kRegions = 64;
constexpr int kFeatDim = 412;
constexpr int kDirectionCount = kDisplacementCount + 3 + kLocationCount;
constexpr std::uint64_t kDirectionSeed = 0x51D3A7EC70125ULL;

json labels_to_json(const CaseDescription& c) {
  json j;
  j["fracture"] = c.is_fracture();
  if (c.is_fracture()) {
    const FractureLabels& f = *c.fracture;
    j["displacement"] = to_string(f.displacement);
    j["comminuted"] = f.comminuted;
    j["impacted"] = f.impacted;
    j["avulsed_fragment"] = f.avulsed_fragment;
    j["location"] = to_string(f.location);
  }
  return j;
}

CaseDescription labels_from_json(const json& j) {
  check(j.contains("fracture"), "dataset: record labels missing 'fracture'");
  if (!j.at("fracture").get<bool>()) return CaseDescription::no_fracture();
  FractureLabels f;
  f.displacement =
      displacement_from_string(j.at("displacement").get<std::string>());
  f.comminuted = j.at("comminuted").get<bool>();
  f.impacted = j.at("impacted").get<bool>();
  f.avulsed_fragment = j.at("avulsed_fragment").get<bool>();
  f.location = location_from_string(j.at("location").get<std::string>());
  return CaseDescription::of(f);
}

std::string record_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rec-%06d", index);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  check(train_count >= 0 && val_count >= 0 && test_count >= 0,
        "synth: counts must be >= 0");
  check(fracture_rate >= 0.0 && fracture_rate <= 1.0,
        "synth: fracture_rate must be in [0, 1], got ", fracture_rate);
  check(noise_sigma >= 0.0, "synth: noise_sigma must be >= 0");
  check(signal_strength >= 0.0, "synth: signal_strength must be >= 0");
}

std::span<const float> Dataset::feature_view(std::size_t i) const {
  check(i < records.size(), "dataset: record index out of range");
  const std::size_t block =
      static_cast<std::size_t>(regions) * static_cast<std::size_t>(feat_dim);
  return std::span<const float>(features.data() + i * block, block);
}

FeatureMap Dataset::feature_map(std::size_t i) const {
  const auto view = feature_view(i);
  FeatureMap fm;
  fm.regions = regions;
  fm.feat_dim = feat_dim;
  fm.values.assign(view.begin(), view.end());
  return fm;
}

SignalBlock signal_block(Location loc) {
  switch (loc) {
    case Location::kSubcapital:
      return {1, 2, 1, 2};
    case Location::kTranscervical:
      return {1, 2, 5, 6};
    case Location::kBasicervical:
      return {5, 6, 1, 2};
  }
  fail("synth: invalid location");
}

const std::vector<std::vector<double>>& signal_directions() {
  static const std::vector<std::vector<double>> dirs = [] {
    RngStream rng(kDirectionSeed);
    std::vector<std::vector<double>> v(kDirectionCount,
                                       std::vector<double>(kFeatDim));
    for (auto& d : v) {
      for (double& x : d) x = rng.next_gaussian();
    }
    // Gram-Schmidt, two passes for orthogonality well below tolerance.
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < kDirectionCount; ++i) {
        for (int j = 0; j < i; ++j) {
          double dot = 0;
          for (int k = 0; k < kFeatDim; ++k) dot += v[i][k] * v[j][k];
          for (int k = 0; k < kFeatDim; ++k) v[i][k] -= dot * v[j][k];
        }
        double norm = 0;
        for (double x : v[i]) norm += x * x;
        norm = std::sqrt(norm);
        check(norm > 1e-6, "synth: degenerate signal direction");
        for (double& x : v[i]) x /= norm;
      }
    }
    for (int i = 0; i < kDirectionCount; ++i) {
      for (int j = 0; j <= i; ++j) {
        double dot = 0;
        for (int k = 0; k < kFeatDim; ++k) dot += v[i][k] * v[j][k];
        const double want = i == j ? 1.0 : 0.0;
        check(std::abs(dot - want) <= 1e-10,
              "synth: signal directions not orthonormal (", i, ",", j, ")");
      }
    }
    return v;
  }();
  return dirs;
}

FeatureMap generate_record(const CaseDescription& c, RngStream rng,
                           double noise_sigma, double signal_strength) {
  FeatureMap fm;
  fm.regions = kRegions;
  fm.feat_dim = kFeatDim;
  fm.values.resize(static_cast<std::size_t>(kRegions) * kFeatDim);
  std::vector<double> block_signal;
  if (c.is_fracture()) {
    const FractureLabels& f = *c.fracture;
    const auto& dirs = signal_directions();
    block_signal.assign(kFeatDim, 0.0);
    auto accumulate = [&](int dir) {
      for (int k = 0; k < kFeatDim; ++k) {
        block_signal[k] += signal_strength * dirs[dir][k];
      }
    };
    accumulate(static_cast<int>(f.displacement));
    if (f.comminuted) accumulate(kDisplacementCount + 0);
    if (f.impacted) accumulate(kDisplacementCount + 1);
    if (f.avulsed_fragment) accumulate(kDisplacementCount + 2);
    accumulate(kDisplacementCount + 3 + static_cast<int>(f.location));
  }
  for (int region = 0; region < kRegions; ++region) {
    const int row = region / kGridSide;
    const int col = region % kGridSide;
    const bool planted =
        c.is_fracture() && signal_block(c.fracture->location).contains(row, col);
    float* cell = fm.values.data() + static_cast<std::size_t>(region) * kFeatDim;
    for (int k = 0; k < kFeatDim; ++k) {
      double value = noise_sigma * rng.next_gaussian();
      if (planted) value += block_signal[k];
      cell[k] = static_cast<float>(value);
    }
  }
  return fm;
}

SynthSummary generate_dataset(const SynthConfig& cfg,
                              const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "synth: cannot create output directory ", out_dir, ": ",
        ec.message());

  const Vocabulary vocab = Vocabulary::build();
  const auto& cases = all_cases();
  const int total = cfg.train_count + cfg.val_count + cfg.test_count;

  const std::string blob_path = out_dir + "/features.f32";
  std::ofstream blob(blob_path, std::ios::binary);
  check(blob.good(), "synth: cannot write ", blob_path);

  RngStream root(cfg.seed);
  json records = json::array();
  int fractures = 0;
  for (int i = 0; i < total; ++i) {
    RngStream rec_rng = root.split(static_cast<std::uint64_t>(i));
    RngStream label_rng = rec_rng.split(0);
    RngStream feat_rng = rec_rng.split(1);

    CaseDescription c = CaseDescription::no_fracture();
    if (label_rng.bernoulli(cfg.fracture_rate)) {
      // cases[0] is the negative; 1.. are the 96 label combinations.
      c = cases[1 + label_rng.next_below(
                        static_cast<std::uint32_t>(cases.size() - 1))];
      ++fractures;
    }
    FeatureMap fm =
        generate_record(c, feat_rng, cfg.noise_sigma, cfg.signal_strength);
    blob.write(reinterpret_cast<const char*>(fm.values.data()),
               static_cast<std::streamsize>(fm.values.size() * sizeof(float)));
    check(blob.good(), "synth: write failed for ", blob_path);

    std::vector<int> tokens = {Vocabulary::kSot};
    for (int id : vocab.encode(render(c))) tokens.push_back(id);
    tokens.push_back(Vocabulary::kEot);

    json r;
    r["id"] = record_id(i);
    r["split"] = i < cfg.train_count
                     ? "train"
                     : (i < cfg.train_count + cfg.val_count ? "val" : "test");
    r["labels"] = labels_to_json(c);
    r["tokens"] = tokens;
    r["feature_index"] = i;
    records.push_back(std::move(r));
  }
  blob.close();

  json manifest;
  manifest["regions"] = kRegions;
  manifest["feature_dim"] = kFeatDim;
  manifest["record_count"] = total;
  manifest["config"] = {{"train", cfg.train_count},
                        {"val", cfg.val_count},
                        {"test", cfg.test_count},
                        {"fracture_rate", cfg.fracture_rate},
                        {"noise_sigma", cfg.noise_sigma},
                        {"signal_strength", cfg.signal_strength},
                        {"seed", cfg.seed}};
  manifest["records"] = std::move(records);

  const std::string manifest_path = out_dir + "/manifest.json";
  std::ofstream mf(manifest_path);
  check(mf.good(), "synth: cannot write ", manifest_path);
  mf << manifest.dump(2) << '\n';
  check(mf.good(), "synth: write failed for ", manifest_path);

  vocab.save(out_dir + "/vocab.txt");
  return SynthSummary{total, fractures, out_dir};
}

Dataset load_dataset(const std::string& dir, const std::string& split) {
  check(split == "train" || split == "val" || split == "test",
        "dataset: unknown split '", split, "' (expected train, val or test)");
  const std::string manifest_path = dir + "/manifest.json";
  std::ifstream mf(manifest_path);
  check(mf.good(), "dataset: cannot read ", manifest_path);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    fail("dataset: corrupt manifest ", manifest_path, ": ", e.what());
  }

  Dataset ds;
  try {
    ds.regions = manifest.at("regions").get<int>();
    ds.feat_dim = manifest.at("feature_dim").get<int>();
    const int total = manifest.at("record_count").get<int>();
    check(ds.regions > 0 && ds.feat_dim > 0 && total >= 0,
          "dataset: bad manifest header");
    check(manifest.at("records").size() == static_cast<std::size_t>(total),
          "dataset: manifest record_count ", total, " but ",
          manifest.at("records").size(), " records listed");
    for (const json& r : manifest.at("records")) {
      if (r.at("split").get<std::string>() != split) continue;
      DatasetRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.split = split;
      rec.labels = labels_from_json(r.at("labels"));
      rec.tokens = r.at("tokens").get<std::vector<int>>();
      rec.feature_index = r.at("feature_index").get<std::int64_t>();
      check(rec.feature_index >= 0 && rec.feature_index < total,
            "dataset: record ", rec.id, " has feature_index out of range");
      ds.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    fail("dataset: corrupt manifest ", manifest_path, ": ", e.what());
  }

  const std::string blob_path = dir + "/features.f32";
  std::ifstream blob(blob_path, std::ios::binary | std::ios::ate);
  check(blob.good(), "dataset: cannot read ", blob_path);
  const std::int64_t file_size = static_cast<std::int64_t>(blob.tellg());
  const std::int64_t block =
      static_cast<std::int64_t>(ds.regions) * ds.feat_dim *
      static_cast<std::int64_t>(sizeof(float));
  const std::size_t values_per_record =
      static_cast<std::size_t>(ds.regions) * ds.feat_dim;
  ds.features.resize(values_per_record * ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const DatasetRecord& rec = ds.records[i];
    const std::int64_t offset = rec.feature_index * block;
    check(offset + block <= file_size, "dataset: ", blob_path,
          " truncated at record ", rec.id, " (need ", offset + block,
          " bytes, file has ", file_size, ")");
    blob.seekg(offset);
    blob.read(reinterpret_cast<char*>(ds.features.data() + i * values_per_record),
              block);
    check(blob.good(), "dataset: read failed at record ", rec.id);
  }
  for (float v : ds.features) {
    check(std::isfinite(v), "dataset: non-finite feature value in ", blob_path);
  }
  return ds;
}

}  // namespace xcap

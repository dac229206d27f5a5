#pragma once

#include <compare>
#include <optional>
#include <string>
#include <vector>

namespace xcap {

enum class Displacement {
  kUndisplaced,
  kMildlyDisplaced,
  kModeratelyDisplaced,
  kSeverelyDisplaced,
};

enum class Location {
  kSubcapital,
  kTranscervical,
  kBasicervical,
};

constexpr int kDisplacementCount = 4;
constexpr int kLocationCount = 3;

// Enum tag names ("mildly_displaced", "subcapital") used in JSON and configs.
const std::string& to_string(Displacement d);
const std::string& to_string(Location l);
Displacement displacement_from_string(const std::string& s);
Location location_from_string(const std::string& s);

struct FractureLabels {
  Displacement displacement = Displacement::kUndisplaced;
  bool comminuted = false;
  bool impacted = false;
  bool avulsed_fragment = false;
  Location location = Location::kSubcapital;

  auto operator<=>(const FractureLabels&) const = default;
};

// Either a described fracture or the explicit no-fracture finding.
struct CaseDescription {
  std::optional<FractureLabels> fracture;

  static CaseDescription no_fracture() { return CaseDescription{}; }
  static CaseDescription of(const FractureLabels& labels) {
    return CaseDescription{labels};
  }
  bool is_fracture() const { return fracture.has_value(); }

  auto operator<=>(const CaseDescription&) const = default;
};

// All 97 descriptions: the negative case plus the 96 label combinations, in
// a fixed enumeration order.
const std::vector<CaseDescription>& all_cases();

// Canonical sentence for a description, as lower-case word tokens without
// specials. Deterministic; the "a"/"an" article follows the vowel rule.
std::vector<std::string> render(const CaseDescription& c);

// Exact inverse of render on its image; anything outside the 97 rendered
// sentences yields nullopt (unparseable).
std::optional<CaseDescription> parse(const std::vector<std::string>& tokens);

// Lower-cases, strips punctuation, splits on whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Closed vocabulary over the rendered language plus the four specials.
class Vocabulary {
 public:
  static constexpr int kSot = 0;
  static constexpr int kEot = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;

  // Enumerates every renderable sentence, collects the distinct words, and
  // orders them lexicographically after the specials. Stable across runs.
  static Vocabulary build();

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;

  std::vector<int> encode(const std::vector<std::string>& words) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  // One token per line; ids implicit by line number.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
};

}  // namespace xcap

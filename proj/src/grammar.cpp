#include "xcap/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "xcap/util.hpp"

namespace xcap {

namespace {

const std::vector<std::string> kDisplacementTags = {
    "undisplaced", "mildly_displaced", "moderately_displaced",
    "severely_displaced"};
const std::vector<std::string> kLocationTags = {"subcapital", "transcervical",
                                                "basicervical"};

// Sentence words for each displacement degree.
std::vector<std::string> displacement_words(Displacement d) {
  switch (d) {
    case Displacement::kUndisplaced:
      return {"undisplaced"};
    case Displacement::kMildlyDisplaced:
      return {"mildly", "displaced"};
    case Displacement::kModeratelyDisplaced:
      return {"moderately", "displaced"};
    case Displacement::kSeverelyDisplaced:
      return {"severely", "displaced"};
  }
  fail("grammar: invalid displacement");
}

bool vowel_initial(const std::string& word) {
  if (word.empty()) return false;
  switch (word[0]) {
    case 'a':
    case 'e':
    case 'i':
    case 'o':
    case 'u':
      return true;
    default:
      return false;
  }
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// render image -> description, built once from all_cases(). Doubles as the
// injectivity check: a duplicate sentence would clobber an entry and break
// the exhaustive round-trip tests immediately, so we assert instead.
const std::map<std::string, CaseDescription>& inverse_map() {
  static const std::map<std::string, CaseDescription> map = [] {
    std::map<std::string, CaseDescription> m;
    for (const CaseDescription& c : all_cases()) {
      const std::string key = join(render(c));
      check(m.emplace(key, c).second,
            "grammar: render is not injective, duplicate sentence: ", key);
    }
    return m;
  }();
  return map;
}

}  // namespace

const std::string& to_string(Displacement d) {
  return kDisplacementTags[static_cast<int>(d)];
}

const std::string& to_string(Location l) {
  return kLocationTags[static_cast<int>(l)];
}

Displacement displacement_from_string(const std::string& s) {
  for (int i = 0; i < kDisplacementCount; ++i) {
    if (kDisplacementTags[i] == s) return static_cast<Displacement>(i);
  }
  fail("grammar: unknown displacement '", s, "'");
}

Location location_from_string(const std::string& s) {
  for (int i = 0; i < kLocationCount; ++i) {
    if (kLocationTags[i] == s) return static_cast<Location>(i);
  }
  fail("grammar: unknown location '", s, "'");
}

const std::vector<CaseDescription>& all_cases() {
  static const std::vector<CaseDescription> cases = [] {
    std::vector<CaseDescription> v;
    v.push_back(CaseDescription::no_fracture());
    for (int d = 0; d < kDisplacementCount; ++d) {
      for (int com = 0; com < 2; ++com) {
        for (int imp = 0; imp < 2; ++imp) {
          for (int avu = 0; avu < 2; ++avu) {
            for (int loc = 0; loc < kLocationCount; ++loc) {
              FractureLabels f;
              f.displacement = static_cast<Displacement>(d);
              f.comminuted = com != 0;
              f.impacted = imp != 0;
              f.avulsed_fragment = avu != 0;
              f.location = static_cast<Location>(loc);
              v.push_back(CaseDescription::of(f));
            }
          }
        }
      }
    }
    return v;
  }();
  return cases;
}

std::vector<std::string> render(const CaseDescription& c) {
  if (!c.is_fracture()) {
    return {"no", "fracture", "was", "identified", "on", "this", "study"};
  }
  const FractureLabels& f = *c.fracture;
  const std::vector<std::string> degree = displacement_words(f.displacement);
  std::vector<std::string> out = {"there", "is",
                                  vowel_initial(degree.front()) ? "an" : "a"};
  out.insert(out.end(), degree.begin(), degree.end());
  if (f.comminuted) out.push_back("comminuted");
  if (f.impacted) out.push_back("impacted");
  out.insert(out.end(), {"fracture", "of", "the", to_string(f.location),
                         "neck", "of", "femur"});
  if (f.avulsed_fragment) {
    out.insert(out.end(), {"with", "an", "avulsed", "fragment"});
  }
  return out;
}

std::optional<CaseDescription> parse(const std::vector<std::string>& tokens) {
  const auto& map = inverse_map();
  const auto it = map.find(join(tokens));
  if (it == map.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalpha(u)) {
      cleaned += static_cast<char>(std::tolower(u));
    } else if (std::isspace(u)) {
      cleaned += ' ';
    }
    // punctuation dropped
  }
  std::vector<std::string> tokens;
  std::istringstream is(cleaned);
  std::string word;
  while (is >> word) tokens.push_back(word);
  return tokens;
}

Vocabulary Vocabulary::build() {
  std::set<std::string> words;
  for (const CaseDescription& c : all_cases()) {
    for (const std::string& w : render(c)) words.insert(w);
  }
  Vocabulary v;
  v.tokens_ = {"<sot>", "<eot>", "<unk>", "<pad>"};
  v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
  return v;
}

int Vocabulary::id(const std::string& token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  return kUnk;
}

const std::string& Vocabulary::token(int id) const {
  check(id >= 0 && id < size(), "vocabulary: id ", id, " out of range [0, ",
        size(), ")");
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(
    const std::vector<std::string>& words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (int i : ids) words.push_back(token(i));
  return words;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  check(out.good(), "vocabulary: cannot write ", path);
  for (const std::string& t : tokens_) out << t << '\n';
  check(out.good(), "vocabulary: write failed for ", path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "vocabulary: cannot read ", path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.tokens_.push_back(line);
  }
  check(v.size() > 4, "vocabulary: file ", path, " has no content tokens");
  return v;
}

}  // namespace xcap

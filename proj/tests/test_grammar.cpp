#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "xcap/grammar.hpp"

using namespace xcap;

namespace {

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

TEST_CASE("grammar: template renderings match the canonical sentences") {
  FractureLabels severe;
  severe.displacement = Displacement::kSeverelyDisplaced;
  severe.comminuted = true;
  severe.impacted = false;
  severe.avulsed_fragment = true;
  severe.location = Location::kSubcapital;
  CHECK(join(render(CaseDescription::of(severe))) ==
        "there is a severely displaced comminuted fracture of the subcapital "
        "neck of femur with an avulsed fragment");

  CHECK(join(render(CaseDescription::no_fracture())) ==
        "no fracture was identified on this study");

  FractureLabels impacted;
  impacted.displacement = Displacement::kUndisplaced;
  impacted.comminuted = false;
  impacted.impacted = true;
  impacted.avulsed_fragment = false;
  impacted.location = Location::kTranscervical;
  CHECK(join(render(CaseDescription::of(impacted))) ==
        "there is an undisplaced impacted fracture of the transcervical neck "
        "of femur");
}

TEST_CASE("grammar: article selection follows the vowel rule") {
  for (const CaseDescription& c : all_cases()) {
    if (!c.is_fracture()) continue;
    const auto tokens = render(c);
    REQUIRE(tokens.size() > 3);
    const bool an = tokens[2] == "an";
    CHECK((an || tokens[2] == "a"));
    const std::string& next = tokens[3];
    const bool vowel = next[0] == 'a' || next[0] == 'e' || next[0] == 'i' ||
                       next[0] == 'o' || next[0] == 'u';
    CHECK(an == vowel);
  }
}

TEST_CASE("grammar: exhaustive parse-render round trip over all 97 cases") {
  const auto& cases = all_cases();
  CHECK(cases.size() == 97);
  std::set<std::string> sentences;
  for (const CaseDescription& c : cases) {
    const auto tokens = render(c);
    sentences.insert(join(tokens));
    const auto back = parse(tokens);
    REQUIRE(back.has_value());
    CHECK(*back == c);
  }
  // injectivity: 97 distinct sentences
  CHECK(sentences.size() == 97);
}

TEST_CASE("grammar: sentence lengths span 7 to 18 tokens") {
  std::size_t shortest = 1000, longest = 0;
  for (const CaseDescription& c : all_cases()) {
    const auto tokens = render(c);
    shortest = std::min(shortest, tokens.size());
    longest = std::max(longest, tokens.size());
  }
  CHECK(shortest == 7);   // the negative sentence
  CHECK(longest == 18);   // two-word degree + both flags + avulsed clause
}

TEST_CASE("grammar: out-of-language sentences are unparseable values") {
  CHECK(!parse({"there", "is", "a", "fracture", "femur"}).has_value());
  CHECK(!parse({}).has_value());
  CHECK(!parse({"no", "fracture"}).has_value());
  // wrong article for the degree is outside the rendered language
  CHECK(!parse({"there", "is", "a", "undisplaced", "fracture", "of", "the",
                "subcapital", "neck", "of", "femur"})
             .has_value());
  CHECK(parse({"no", "fracture", "was", "identified", "on", "this", "study"})
            .has_value());
}

TEST_CASE("grammar: vocabulary closure has K = 32 with fixed specials") {
  const Vocabulary v = Vocabulary::build();
  CHECK(v.size() == 32);  // 28 grammar words + 4 specials
  CHECK(v.token(Vocabulary::kSot) == "<sot>");
  CHECK(v.token(Vocabulary::kEot) == "<eot>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(Vocabulary::kSot == 0);
  CHECK(Vocabulary::kEot == 1);
  CHECK(Vocabulary::kUnk == 2);
  CHECK(Vocabulary::kPad == 3);

  // every rendered sentence tokenizes with zero UNKs
  for (const CaseDescription& c : all_cases()) {
    for (int id : v.encode(render(c))) {
      CHECK(id != Vocabulary::kUnk);
      CHECK(id >= 4);
    }
  }
  CHECK(v.id("no-such-word") == Vocabulary::kUnk);

  // ids are stable across builds
  const Vocabulary v2 = Vocabulary::build();
  for (int i = 0; i < v.size(); ++i) CHECK(v.token(i) == v2.token(i));

  // content tokens sorted lexicographically after the specials
  for (int i = 5; i < v.size(); ++i) CHECK(v.token(i - 1) < v.token(i));
}

TEST_CASE("grammar: tokenizer lower-cases and strips punctuation") {
  const auto tokens = tokenize(
      "There is a severely displaced, comminuted fracture of the subcapital "
      "neck of femur.");
  CHECK(join(tokens) ==
        "there is a severely displaced comminuted fracture of the subcapital "
        "neck of femur");
  CHECK(tokenize("").empty());
  CHECK(tokenize("  ,. !?  ").empty());
}

TEST_CASE("grammar: vocabulary serializes one token per line") {
  const Vocabulary v = Vocabulary::build();
  const std::string path =
      (std::filesystem::temp_directory_path() / "xcap_vocab_test.txt").string();
  v.save(path);
  const Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(loaded.token(i) == v.token(i));
  std::filesystem::remove(path);
}

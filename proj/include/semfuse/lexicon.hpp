#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace semfuse {

struct Intensifier {
  std::string word;
  double strength = 0.0;  // r* in [0, 1]
};

// The fixed word lists of the synthetic task. Held-out adjectives are members
// of their polarity class that never appear in training sentences.
struct Lexicon {
  std::vector<std::string> subjects;
  // Default pronoun for each subject, parallel to `subjects`.
  std::vector<std::string> subject_pronouns;
  std::vector<std::string> verbs;
  std::vector<std::string> objects;
  std::vector<Intensifier> intensifiers;
  std::vector<std::string> positive_adjectives;
  std::vector<std::string> negative_adjectives;
  std::vector<std::string> heldout_positive;
  std::vector<std::string> heldout_negative;
  std::vector<std::string> pronouns;
  std::string article = "the";
  std::string comma = ",";
  std::vector<std::string> end_punctuation;

  static Lexicon standard();

  // Throws ConfigError on an inconsistent lexicon.
  void validate() const;

  double strength_of(std::string_view intensifier) const;
  // +1 / -1 for adjectives, 0 otherwise.
  int polarity_of(std::string_view word) const;
  bool is_heldout(std::string_view adjective) const;
  std::vector<std::string> seen_adjectives(int polarity) const;
};

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary() = default;
  // Specials first, then subjects, verbs, objects, "the", ",", intensifiers,
  // positive adjectives, negative adjectives, pronouns and end punctuation.
  explicit Vocabulary(const Lexicon& lexicon);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(std::string_view token) const;
  // Throws DataError for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

Vocabulary build_vocabulary(const Lexicon& lexicon);

// Token-id views of the lexicon used by losses, annotation and decoding.
struct TokenClasses {
  std::vector<int> subjects;
  std::vector<int> verbs;
  std::vector<int> objects;
  std::vector<int> intensifiers;
  std::vector<double> intensifier_strength;  // parallel to `intensifiers`
  std::vector<int> positive_adjectives;
  std::vector<int> negative_adjectives;
  std::vector<int> heldout_adjectives;
  std::vector<int> pronouns;
  int article = -1;
  int comma = -1;
  int period = -1;
  int exclaim = -1;
  int question = -1;
  std::vector<int> end_punctuation;

  TokenClasses() = default;
  TokenClasses(const Lexicon& lexicon, const Vocabulary& vocab);

  bool is_adjective(int id) const;
  // +1 / -1 / 0.
  int polarity(int id) const;
  bool is_heldout(int id) const;
  const std::vector<int>& adjective_class(int polarity) const {
    return polarity > 0 ? positive_adjectives : negative_adjectives;
  }
};

}  // namespace semfuse

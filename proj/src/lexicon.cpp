#include "semfuse/lexicon.hpp"

#include <algorithm>

#include "semfuse/errors.hpp"

namespace semfuse {

namespace {

bool contains_word(const std::vector<std::string>& words, std::string_view w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

bool contains_id(const std::vector<int>& ids, int id) {
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

Lexicon Lexicon::standard() {
  Lexicon lex;
  lex.subjects = {"Alice", "Bob", "Carol", "Dave", "Eve"};
  lex.subject_pronouns = {"she", "he", "she", "he", "she"};
  lex.verbs = {"finishes", "reviews", "trains", "starts", "cooks"};
  lex.objects = {"task", "paper", "model", "project", "meal"};
  lex.intensifiers = {{"slightly", 0.2},
                      {"moderately", 0.5},
                      {"very", 0.8},
                      {"extremely", 1.0}};
  lex.positive_adjectives = {"good", "great", "excellent", "pleasant",
                             "wonderful"};
  lex.negative_adjectives = {"bad", "poor", "terrible", "unpleasant", "awful"};
  lex.heldout_positive = {"wonderful", "excellent", "great"};
  lex.heldout_negative = {"terrible", "awful", "unpleasant"};
  lex.pronouns = {"she", "he", "they"};
  lex.end_punctuation = {".", "!", "?"};
  return lex;
}

void Lexicon::validate() const {
  if (subjects.empty() || verbs.empty() || objects.empty() ||
      intensifiers.empty() || positive_adjectives.empty() ||
      negative_adjectives.empty() || pronouns.empty() ||
      end_punctuation.empty()) {
    throw ConfigError("lexicon: every word list must be non-empty");
  }
  if (subject_pronouns.size() != subjects.size()) {
    throw ConfigError("lexicon: subject_pronouns must parallel subjects");
  }
  for (const auto& p : subject_pronouns) {
    if (!contains_word(pronouns, p)) {
      throw ConfigError("lexicon: subject pronoun '" + p + "' is not a pronoun");
    }
  }
  for (const auto& in : intensifiers) {
    if (!(in.strength >= 0.0 && in.strength <= 1.0)) {
      throw ConfigError("lexicon: intensity of '" + in.word +
                        "' outside [0, 1]");
    }
  }
  for (const auto& w : heldout_positive) {
    if (!contains_word(positive_adjectives, w)) {
      throw ConfigError("lexicon: held-out '" + w + "' is not positive");
    }
  }
  for (const auto& w : heldout_negative) {
    if (!contains_word(negative_adjectives, w)) {
      throw ConfigError("lexicon: held-out '" + w + "' is not negative");
    }
  }
  if (heldout_positive.size() >= positive_adjectives.size() ||
      heldout_negative.size() >= negative_adjectives.size()) {
    throw ConfigError("lexicon: each class needs at least one seen adjective");
  }
}

double Lexicon::strength_of(std::string_view intensifier) const {
  for (const auto& in : intensifiers) {
    if (in.word == intensifier) return in.strength;
  }
  throw DataError("unknown intensifier '" + std::string(intensifier) + "'");
}

int Lexicon::polarity_of(std::string_view word) const {
  if (contains_word(positive_adjectives, word)) return 1;
  if (contains_word(negative_adjectives, word)) return -1;
  return 0;
}

bool Lexicon::is_heldout(std::string_view adjective) const {
  return contains_word(heldout_positive, adjective) ||
         contains_word(heldout_negative, adjective);
}

std::vector<std::string> Lexicon::seen_adjectives(int polarity) const {
  const auto& all = polarity > 0 ? positive_adjectives : negative_adjectives;
  std::vector<std::string> seen;
  for (const auto& w : all) {
    if (!is_heldout(w)) seen.push_back(w);
  }
  return seen;
}

Vocabulary::Vocabulary(const Lexicon& lexicon) {
  lexicon.validate();
  auto add = [this](const std::string& t) {
    if (ids_.count(t) != 0) {
      throw ConfigError("vocabulary: duplicate surface form '" + t + "'");
    }
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(t);
  };
  add(std::string(kPadToken));
  add(std::string(kBosToken));
  add(std::string(kEosToken));
  for (const auto& w : lexicon.subjects) add(w);
  for (const auto& w : lexicon.verbs) add(w);
  for (const auto& w : lexicon.objects) add(w);
  add(lexicon.article);
  add(lexicon.comma);
  for (const auto& in : lexicon.intensifiers) add(in.word);
  for (const auto& w : lexicon.positive_adjectives) add(w);
  for (const auto& w : lexicon.negative_adjectives) add(w);
  for (const auto& w : lexicon.pronouns) add(w);
  for (const auto& w : lexicon.end_punctuation) add(w);
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) != 0;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) {
    throw DataError("unknown token '" + std::string(token) + "'");
  }
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocabulary(const Lexicon& lexicon) {
  return Vocabulary(lexicon);
}

TokenClasses::TokenClasses(const Lexicon& lexicon, const Vocabulary& vocab) {
  auto ids_of = [&vocab](const std::vector<std::string>& words) {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
  };
  subjects = ids_of(lexicon.subjects);
  verbs = ids_of(lexicon.verbs);
  objects = ids_of(lexicon.objects);
  for (const auto& in : lexicon.intensifiers) {
    intensifiers.push_back(vocab.id(in.word));
    intensifier_strength.push_back(in.strength);
  }
  positive_adjectives = ids_of(lexicon.positive_adjectives);
  negative_adjectives = ids_of(lexicon.negative_adjectives);
  heldout_adjectives = ids_of(lexicon.heldout_positive);
  for (int id : ids_of(lexicon.heldout_negative)) {
    heldout_adjectives.push_back(id);
  }
  pronouns = ids_of(lexicon.pronouns);
  article = vocab.id(lexicon.article);
  comma = vocab.id(lexicon.comma);
  end_punctuation = ids_of(lexicon.end_punctuation);
  period = vocab.contains(".") ? vocab.id(".") : -1;
  exclaim = vocab.contains("!") ? vocab.id("!") : -1;
  question = vocab.contains("?") ? vocab.id("?") : -1;
}

bool TokenClasses::is_adjective(int id) const {
  return contains_id(positive_adjectives, id) ||
         contains_id(negative_adjectives, id);
}

int TokenClasses::polarity(int id) const {
  if (contains_id(positive_adjectives, id)) return 1;
  if (contains_id(negative_adjectives, id)) return -1;
  return 0;
}

bool TokenClasses::is_heldout(int id) const {
  return contains_id(heldout_adjectives, id);
}

}  // namespace semfuse

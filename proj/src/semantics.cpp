#include "semfuse/semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ostream>
#include <string>

#include "semfuse/errors.hpp"

namespace semfuse {

namespace {

enum class Slot {
  kSubject = 0,
  kVerb,
  kArticle,
  kObject,
  kComma,
  kIntensifier,
  kAdjective,
  kPunct,
};

bool in_list(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

bool intensifier_word(const Lexicon& lex, const std::string& w) {
  return std::any_of(lex.intensifiers.begin(), lex.intensifiers.end(),
                     [&w](const Intensifier& in) { return in.word == w; });
}

bool slot_accepts(const Lexicon& lex, Slot slot, int clause,
                  const std::string& w) {
  switch (slot) {
    case Slot::kSubject:
      return clause == 0 ? in_list(lex.subjects, w) : in_list(lex.pronouns, w);
    case Slot::kVerb:
      return in_list(lex.verbs, w);
    case Slot::kArticle:
      return w == lex.article;
    case Slot::kObject:
      return in_list(lex.objects, w);
    case Slot::kComma:
      return w == lex.comma;
    case Slot::kIntensifier:
      return intensifier_word(lex, w);
    case Slot::kAdjective:
      return lex.polarity_of(w) != 0;
    case Slot::kPunct:
      return in_list(lex.end_punctuation, w);
  }
  return false;
}

void set_triplet(SemanticMatrix& s, int row, Feature first,
                 const std::array<double, 3>& t) {
  const int base = static_cast<int>(first);
  for (int k = 0; k < 3; ++k) s.at(row, static_cast<Feature>(base + k)) = t[k];
}

// Graded channels for a position with polarity s* and strength input r*.
void set_graded(SemanticMatrix& s, int row, int polarity, double strength,
                const FeatureBank& bank) {
  set_triplet(s, row, Feature::kPosLow,
              tri(std::max(0.0, static_cast<double>(polarity)), bank));
  set_triplet(s, row, Feature::kNegLow,
              tri(std::max(0.0, static_cast<double>(-polarity)), bank));
  set_triplet(s, row, Feature::kStrLow, tri(strength, bank));
}

}  // namespace

const std::array<std::string_view, kFeatureCount>& feature_names() {
  static const std::array<std::string_view, kFeatureCount> names = {
      "is_noun",        "is_verb",    "is_adj",     "is_subject",
      "is_object",      "is_head",    "is_bos",     "is_eos",
      "is_comma",       "is_question", "pos_low",   "pos_med",
      "pos_high",       "neg_low",    "neg_med",    "neg_high",
      "str_low",        "str_med",    "str_high",   "coref_subject",
      "is_capitalized", "is_pronoun"};
  return names;
}

Feature feature_from_name(std::string_view name) {
  const auto& names = feature_names();
  for (int i = 0; i < kFeatureCount; ++i) {
    if (names[static_cast<std::size_t>(i)] == name) {
      return static_cast<Feature>(i);
    }
  }
  throw ConfigError("unknown semantic feature '" + std::string(name) + "'");
}

double membership(double x, double center, double tau) {
  if (!(tau > 0.0)) {
    throw NumericError("membership: bandwidth must be positive");
  }
  return std::pow(0.9, std::abs(x - center) / tau);
}

std::array<double, 3> tri(double x, const FeatureBank& bank) {
  return {membership(x, bank.centers[0], bank.bandwidth),
          membership(x, bank.centers[1], bank.bandwidth),
          membership(x, bank.centers[2], bank.bandwidth)};
}

SemanticMatrix annotate_ids(const std::vector<int>& ids,
                            const Lexicon& lexicon, const Vocabulary& vocab,
                            const FeatureBank& bank) {
  const int n = static_cast<int>(ids.size());
  SemanticMatrix s(n);
  if (n == 0) return s;
  if (ids[0] != Vocabulary::kBos) {
    throw DataError("annotation: sequence must start with <bos>");
  }

  // Real tokens between <bos> and <eos>/<pad>.
  int end = 1;
  while (end < n && ids[static_cast<std::size_t>(end)] != Vocabulary::kEos &&
         ids[static_cast<std::size_t>(end)] != Vocabulary::kPad) {
    ++end;
  }
  const int body = end - 1;
  const int clauses = (body + ClauseRecord::kTokenCount - 1) /
                      ClauseRecord::kTokenCount;

  // Clause punctuation where already realized, for the "!" nudge.
  std::vector<std::string> clause_punct(static_cast<std::size_t>(clauses));
  for (int c = 0; c < clauses; ++c) {
    const int punct_pos = 1 + c * ClauseRecord::kTokenCount +
                          static_cast<int>(Slot::kPunct);
    if (punct_pos < end) {
      clause_punct[static_cast<std::size_t>(c)] =
          vocab.token(ids[static_cast<std::size_t>(punct_pos)]);
    }
  }

  s.at(0, Feature::kIsBos) = 1.0;
  set_graded(s, 0, 0, 0.0, bank);

  for (int pos = 1; pos < end; ++pos) {
    const int k = pos - 1;
    const int clause = k / ClauseRecord::kTokenCount;
    const auto slot = static_cast<Slot>(k % ClauseRecord::kTokenCount);
    const std::string& word = vocab.token(ids[static_cast<std::size_t>(pos)]);
    if (!slot_accepts(lexicon, slot, clause, word)) {
      throw DataError("annotation: token '" + word + "' at position " +
                      std::to_string(pos) + " does not fit the clause template");
    }
    int polarity = 0;
    double strength = 0.0;
    switch (slot) {
      case Slot::kSubject: {
        s.at(pos, Feature::kIsNoun) = 1.0;
        s.at(pos, Feature::kIsSubject) = 1.0;
        if (in_list(lexicon.pronouns, word)) {
          s.at(pos, Feature::kIsPronoun) = 1.0;
          if (clause > 0) s.at(pos, Feature::kCorefSubject) = 1.0;
        }
        break;
      }
      case Slot::kVerb:
        s.at(pos, Feature::kIsVerb) = 1.0;
        s.at(pos, Feature::kIsHead) = 1.0;
        break;
      case Slot::kObject:
        s.at(pos, Feature::kIsNoun) = 1.0;
        s.at(pos, Feature::kIsObject) = 1.0;
        break;
      case Slot::kComma:
        s.at(pos, Feature::kIsComma) = 1.0;
        break;
      case Slot::kAdjective: {
        s.at(pos, Feature::kIsAdj) = 1.0;
        polarity = lexicon.polarity_of(word);
        const std::string& intens =
            vocab.token(ids[static_cast<std::size_t>(pos - 1)]);
        strength = lexicon.strength_of(intens);
        if (clause_punct[static_cast<std::size_t>(clause)] == "!") {
          strength = std::min(1.0, strength + bank.exclaim_nudge);
        }
        break;
      }
      case Slot::kPunct:
        if (word == "?") s.at(pos, Feature::kIsQuestion) = 1.0;
        break;
      case Slot::kArticle:
      case Slot::kIntensifier:
        break;
    }
    if (!word.empty() &&
        std::isupper(static_cast<unsigned char>(word.front())) != 0) {
      s.at(pos, Feature::kIsCapitalized) = 1.0;
    }
    set_graded(s, pos, polarity, strength, bank);
  }

  if (end < n && ids[static_cast<std::size_t>(end)] == Vocabulary::kEos) {
    s.at(end, Feature::kIsEos) = 1.0;
    set_graded(s, end, 0, 0.0, bank);
    ++end;
  }
  for (int pos = end; pos < n; ++pos) {
    if (ids[static_cast<std::size_t>(pos)] != Vocabulary::kPad) {
      throw DataError("annotation: non-pad token after sentence end");
    }
  }
  return s;
}

SemanticMatrix annotate(const SentenceRecord& record,
                        const EncodedSentence& encoded, const Lexicon& lexicon,
                        const Vocabulary& vocab, const FeatureBank& bank) {
  const auto expected = encode(record, lexicon, vocab,
                               static_cast<int>(encoded.ids.size()));
  if (expected.ids != encoded.ids) {
    throw DataError("annotation: encoding does not match the sentence record");
  }
  return annotate_ids(encoded.ids, lexicon, vocab, bank);
}

void write_semantic_csv(std::ostream& out, const SemanticMatrix& s,
                        const std::vector<int>& ids, const Vocabulary& vocab) {
  out << "position,token";
  for (auto name : feature_names()) out << ',' << name;
  out << '\n';
  for (int r = 0; r < s.rows(); ++r) {
    out << r << ',';
    const std::string tok =
        r < static_cast<int>(ids.size())
            ? vocab.token(ids[static_cast<std::size_t>(r)])
            : std::string();
    // Quote the comma token so the CSV stays rectangular.
    if (tok == ",") {
      out << "\",\"";
    } else {
      out << tok;
    }
    for (int c = 0; c < kFeatureCount; ++c) out << ',' << s.at(r, c);
    out << '\n';
  }
}

}  // namespace semfuse

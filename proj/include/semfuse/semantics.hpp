#pragma once

#include <array>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "semfuse/corpus.hpp"
#include "semfuse/lexicon.hpp"

namespace semfuse {

// Column order of the semantic matrix. Changing it changes checkpoints, so the
// order is versioned through FeatureBank::kVersion.
enum class Feature : int {
  kIsNoun = 0,
  kIsVerb,
  kIsAdj,
  kIsSubject,
  kIsObject,
  kIsHead,
  kIsBos,
  kIsEos,
  kIsComma,
  kIsQuestion,
  kPosLow,
  kPosMed,
  kPosHigh,
  kNegLow,
  kNegMed,
  kNegHigh,
  kStrLow,
  kStrMed,
  kStrHigh,
  kCorefSubject,
  kIsCapitalized,
  kIsPronoun,
};

inline constexpr int kFeatureCount = 22;

const std::array<std::string_view, kFeatureCount>& feature_names();
// Throws ConfigError for unknown names.
Feature feature_from_name(std::string_view name);

struct FeatureBank {
  static constexpr int kVersion = 1;
  std::array<double, 3> centers = {0.2, 0.6, 1.0};  // low, med, high
  double bandwidth = 0.35;
  double exclaim_nudge = 0.2;
};

// Power-law kernel 0.9^(|x - c| / tau). Throws NumericError when tau <= 0.
double membership(double x, double center, double tau);

// Memberships of x at the low/med/high centers.
std::array<double, 3> tri(double x, const FeatureBank& bank = {});

// Row-major L x F matrix of membership degrees; one row per encoded position.
class SemanticMatrix {
 public:
  SemanticMatrix() = default;
  explicit SemanticMatrix(int rows)
      : rows_(rows), values_(static_cast<std::size_t>(rows) * kFeatureCount) {}

  int rows() const { return rows_; }
  static constexpr int cols() { return kFeatureCount; }

  double& at(int row, Feature f) {
    return values_[index(row, static_cast<int>(f))];
  }
  double at(int row, Feature f) const {
    return values_[index(row, static_cast<int>(f))];
  }
  double at(int row, int col) const { return values_[index(row, col)]; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * kFeatureCount +
           static_cast<std::size_t>(col);
  }
  int rows_ = 0;
  std::vector<double> values_;
};

// Semantic matrix of a corpus sentence. `encoded` must be encode(record).
SemanticMatrix annotate(const SentenceRecord& record,
                        const EncodedSentence& encoded, const Lexicon& lexicon,
                        const Vocabulary& vocab, const FeatureBank& bank = {});

// Semantic matrix of a token-id sequence starting with <bos>, with slot roles
// inferred from the clause template position. Used while decoding, where the
// sentence is only partially realized; the "!" strength nudge is applied only
// once the clause punctuation is present. Throws DataError when the sequence
// does not follow the template.
SemanticMatrix annotate_ids(const std::vector<int>& ids,
                            const Lexicon& lexicon, const Vocabulary& vocab,
                            const FeatureBank& bank = {});

// CSV with a header of feature names and one row per position.
void write_semantic_csv(std::ostream& out, const SemanticMatrix& s,
                        const std::vector<int>& ids, const Vocabulary& vocab);

}  // namespace semfuse

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/lexicon.hpp"
#include "semfuse/rng.hpp"

namespace semfuse {

// One clause of the template SUBJ VERB the OBJ , INTENS ADJ PUNCT.
struct ClauseRecord {
  std::string subject;  // a name in clause 1, a pronoun in clause 2
  std::string verb;
  std::string object;
  std::string intensifier;
  std::string adjective;
  std::string punct;

  static constexpr int kTokenCount = 8;
  std::vector<std::string> tokens(const Lexicon& lexicon) const;

  bool operator==(const ClauseRecord&) const = default;
};

struct SentenceRecord {
  std::vector<ClauseRecord> clauses;
  bool coref = false;  // clause 2 pronoun refers to the clause-1 subject

  std::vector<std::string> tokens(const Lexicon& lexicon) const;
  int token_count() const {
    return static_cast<int>(clauses.size()) * ClauseRecord::kTokenCount;
  }

  bool operator==(const SentenceRecord&) const = default;
};

struct CorpusSplit {
  std::string name;  // "train" | "val"
  std::uint64_t seed = 0;
  std::vector<SentenceRecord> records;
};

// Knobs of the sentence generator that the task description leaves open.
struct CorpusOptions {
  double two_clause_prob = 0.6;
  // Probabilities of ".", "!", "?" (in lexicon end_punctuation order).
  std::vector<double> punct_probs = {0.6, 0.25, 0.15};
  double they_prob = 0.2;
  int max_len = 28;

  void validate(const Lexicon& lexicon) const;
};

// Draws sentences slot by slot. Per clause the draw order is: subject (clause 1
// only), verb, object, intensifier, polarity coin, adjective, punctuation.
// Between clauses: the two-clause coin, then the "they" coin.
class SentenceSampler {
 public:
  SentenceSampler(Lexicon lexicon, CorpusOptions options);

  SentenceRecord sample(Rng& rng, bool allow_heldout) const;

  const Lexicon& lexicon() const { return lexicon_; }
  const CorpusOptions& options() const { return options_; }

 private:
  ClauseRecord sample_clause(Rng& rng, bool allow_heldout,
                             std::string subject) const;

  Lexicon lexicon_;
  CorpusOptions options_;
  std::array<std::vector<std::string>, 2> adjectives_all_;   // [neg, pos]
  std::array<std::vector<std::string>, 2> adjectives_seen_;  // [neg, pos]
};

// Train sentences exclude held-out adjectives; validation ones may use them.
// Each split draws from its own stream derived from `seed`.
std::pair<CorpusSplit, CorpusSplit> generate_corpus(
    std::uint64_t seed, int n_train, int n_val,
    const Lexicon& lexicon = Lexicon::standard(),
    const CorpusOptions& options = {});

struct EncodedSentence {
  std::vector<int> ids;          // length max_len
  std::vector<std::uint8_t> mask;  // 1 on real tokens (incl. <bos>/<eos>)
  int length = 0;                // number of real tokens
};

// <bos> tokens <eos>, right padded with <pad> to `max_len`.
EncodedSentence encode(const SentenceRecord& record, const Lexicon& lexicon,
                       const Vocabulary& vocab, int max_len = 28);

// Surface tokens between <bos> and the first <eos>/<pad>.
std::vector<std::string> decode(const std::vector<int>& ids,
                                const Vocabulary& vocab);

// Checks the record against the lexicon and the clause template.
void validate_record(const SentenceRecord& record, const Lexicon& lexicon);

std::string record_to_json_line(const SentenceRecord& record);
SentenceRecord record_from_json_line(const std::string& line);

void write_jsonl(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit read_jsonl(const std::filesystem::path& path, std::string name,
                       const Lexicon& lexicon);

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::uint64_t train_seed = 0;
  std::uint64_t val_seed = 0;
  int n_train = 0;
  int n_val = 0;
  Lexicon lexicon;
  CorpusOptions options;
};

void write_manifest(const std::filesystem::path& path,
                    const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

}  // namespace semfuse

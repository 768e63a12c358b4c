#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "semfuse/corpus.hpp"
#include "semfuse/model.hpp"
#include "semfuse/semantics.hpp"

namespace semfuse {

// A split encoded once, with gold semantic matrices alongside.
struct EncodedCorpus {
  std::vector<EncodedSentence> sentences;
  std::vector<SemanticMatrix> semantics;

  int size() const { return static_cast<int>(sentences.size()); }
};

EncodedCorpus encode_corpus(const CorpusSplit& split, const Lexicon& lexicon,
                            const Vocabulary& vocab, int max_len,
                            const FeatureBank& bank = {});

// Teacher-forced next-token batch. Rows are truncated to the longest sentence
// in the batch, which is exact under the causal mask. Position t of row b
// reads token ids[b, t] and predicts targets[b, t] = ids[b, t + 1] (<pad> past
// the end).
template <typename Real>
struct Batch {
  ModelInput<Real> input;
  std::vector<int> targets;               // [batch, length]
  std::vector<std::uint8_t> target_mask;  // 1 where the target is not <pad>
  std::vector<int> sentence_index;        // corpus index of each row

  int target_count() const;
  int token_count() const;  // non-pad input positions
};

template <typename Real>
Batch<Real> make_batch(const EncodedCorpus& corpus,
                       std::span<const int> indices, bool with_semantics);

extern template struct Batch<float>;
extern template struct Batch<double>;
extern template Batch<float> make_batch<float>(const EncodedCorpus&,
                                               std::span<const int>, bool);
extern template Batch<double> make_batch<double>(const EncodedCorpus&,
                                                 std::span<const int>, bool);

}  // namespace semfuse

#include "semfuse/batch.hpp"

#include <algorithm>

#include "semfuse/errors.hpp"

namespace semfuse {

EncodedCorpus encode_corpus(const CorpusSplit& split, const Lexicon& lexicon,
                            const Vocabulary& vocab, int max_len,
                            const FeatureBank& bank) {
  EncodedCorpus out;
  out.sentences.reserve(split.records.size());
  out.semantics.reserve(split.records.size());
  for (const auto& record : split.records) {
    auto encoded = encode(record, lexicon, vocab, max_len);
    out.semantics.push_back(annotate(record, encoded, lexicon, vocab, bank));
    out.sentences.push_back(std::move(encoded));
  }
  return out;
}

template <typename Real>
int Batch<Real>::target_count() const {
  return static_cast<int>(std::count(target_mask.begin(), target_mask.end(), 1));
}

template <typename Real>
int Batch<Real>::token_count() const {
  return static_cast<int>(std::count(input.mask.begin(), input.mask.end(), 1));
}

template <typename Real>
Batch<Real> make_batch(const EncodedCorpus& corpus,
                       std::span<const int> indices, bool with_semantics) {
  if (indices.empty()) throw DataError("make_batch: no sentences");
  int length = 0;
  for (int i : indices) {
    if (i < 0 || i >= corpus.size()) throw DataError("make_batch: index out of range");
    length = std::max(length, corpus.sentences[static_cast<std::size_t>(i)].length);
  }
  Batch<Real> batch;
  const int b = static_cast<int>(indices.size());
  const auto n = static_cast<std::size_t>(b) * static_cast<std::size_t>(length);
  batch.input.batch = b;
  batch.input.length = length;
  batch.input.ids.assign(n, Vocabulary::kPad);
  batch.input.mask.assign(n, 0);
  batch.targets.assign(n, Vocabulary::kPad);
  batch.target_mask.assign(n, 0);
  batch.sentence_index.assign(indices.begin(), indices.end());
  if (with_semantics) batch.input.semantics.assign(n * kFeatureCount, Real(0));

  for (int row = 0; row < b; ++row) {
    const auto& sentence = corpus.sentences[static_cast<std::size_t>(indices[static_cast<std::size_t>(row)])];
    const auto& s = corpus.semantics[static_cast<std::size_t>(indices[static_cast<std::size_t>(row)])];
    for (int t = 0; t < length; ++t) {
      const auto k = static_cast<std::size_t>(row * length + t);
      batch.input.ids[k] = sentence.ids[static_cast<std::size_t>(t)];
      batch.input.mask[k] = sentence.mask[static_cast<std::size_t>(t)];
      const int next = t + 1 < static_cast<int>(sentence.ids.size())
                           ? sentence.ids[static_cast<std::size_t>(t + 1)]
                           : Vocabulary::kPad;
      batch.targets[k] = next;
      batch.target_mask[k] = next != Vocabulary::kPad ? 1 : 0;
      if (with_semantics) {
        for (int f = 0; f < kFeatureCount; ++f) {
          batch.input.semantics[k * kFeatureCount + static_cast<std::size_t>(f)] =
              static_cast<Real>(s.at(t, f));
        }
      }
    }
  }
  return batch;
}

template struct Batch<float>;
template struct Batch<double>;
template Batch<float> make_batch<float>(const EncodedCorpus&,
                                        std::span<const int>, bool);
template Batch<double> make_batch<double>(const EncodedCorpus&,
                                          std::span<const int>, bool);

}  // namespace semfuse

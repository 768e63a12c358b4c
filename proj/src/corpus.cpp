#include "semfuse/corpus.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "semfuse/errors.hpp"
#include "semfuse/json_io.hpp"

namespace semfuse {

namespace {

bool in_list(const std::vector<std::string>& words, const std::string& w) {
  return std::find(words.begin(), words.end(), w) != words.end();
}

const std::string& pick(const std::vector<std::string>& words, Rng& rng) {
  return words[rng.uniform_below(words.size())];
}

}  // namespace

std::vector<std::string> ClauseRecord::tokens(const Lexicon& lexicon) const {
  return {subject,     verb,          lexicon.article, object,
          lexicon.comma, intensifier, adjective,       punct};
}

std::vector<std::string> SentenceRecord::tokens(const Lexicon& lexicon) const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(token_count()));
  for (const auto& c : clauses) {
    auto t = c.tokens(lexicon);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

void CorpusOptions::validate(const Lexicon& lexicon) const {
  if (!(two_clause_prob >= 0.0 && two_clause_prob <= 1.0)) {
    throw ConfigError("corpus: two_clause_prob must lie in [0, 1]");
  }
  if (!(they_prob >= 0.0 && they_prob <= 1.0)) {
    throw ConfigError("corpus: they_prob must lie in [0, 1]");
  }
  if (punct_probs.size() != lexicon.end_punctuation.size()) {
    throw ConfigError("corpus: punct_probs must have one entry per mark");
  }
  double total = 0.0;
  for (double p : punct_probs) {
    if (p < 0.0) throw ConfigError("corpus: negative punctuation probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("corpus: punct_probs must sum to 1");
  }
  if (max_len < 2 + ClauseRecord::kTokenCount) {
    throw ConfigError("corpus: max_len too small for one clause");
  }
  if (two_clause_prob > 0.0 && !in_list(lexicon.pronouns, "they") &&
      they_prob > 0.0) {
    throw ConfigError("corpus: they_prob > 0 requires the pronoun 'they'");
  }
}

SentenceSampler::SentenceSampler(Lexicon lexicon, CorpusOptions options)
    : lexicon_(std::move(lexicon)), options_(std::move(options)) {
  lexicon_.validate();
  options_.validate(lexicon_);
  adjectives_all_[0] = lexicon_.negative_adjectives;
  adjectives_all_[1] = lexicon_.positive_adjectives;
  adjectives_seen_[0] = lexicon_.seen_adjectives(-1);
  adjectives_seen_[1] = lexicon_.seen_adjectives(+1);
}

ClauseRecord SentenceSampler::sample_clause(Rng& rng, bool allow_heldout,
                                            std::string subject) const {
  ClauseRecord c;
  c.subject = std::move(subject);
  c.verb = pick(lexicon_.verbs, rng);
  c.object = pick(lexicon_.objects, rng);
  c.intensifier = lexicon_.intensifiers[rng.uniform_below(
                                            lexicon_.intensifiers.size())]
                      .word;
  const auto polarity = rng.uniform_below(2);
  const auto& pool =
      allow_heldout ? adjectives_all_[polarity] : adjectives_seen_[polarity];
  c.adjective = pick(pool, rng);
  const double u = rng.uniform01();
  double cumulative = 0.0;
  c.punct = lexicon_.end_punctuation.back();
  for (std::size_t i = 0; i < options_.punct_probs.size(); ++i) {
    cumulative += options_.punct_probs[i];
    if (u < cumulative) {
      c.punct = lexicon_.end_punctuation[i];
      break;
    }
  }
  return c;
}

SentenceRecord SentenceSampler::sample(Rng& rng, bool allow_heldout) const {
  SentenceRecord record;
  const auto subject_index = rng.uniform_below(lexicon_.subjects.size());
  record.clauses.push_back(
      sample_clause(rng, allow_heldout, lexicon_.subjects[subject_index]));
  if (rng.bernoulli(options_.two_clause_prob)) {
    std::string pronoun = lexicon_.subject_pronouns[subject_index];
    if (rng.bernoulli(options_.they_prob)) pronoun = "they";
    record.clauses.push_back(sample_clause(rng, allow_heldout, pronoun));
    record.coref = true;
  }
  return record;
}

std::pair<CorpusSplit, CorpusSplit> generate_corpus(
    std::uint64_t seed, int n_train, int n_val, const Lexicon& lexicon,
    const CorpusOptions& options) {
  if (n_train <= 0 || n_val <= 0) {
    throw ConfigError("generate_corpus: split sizes must be positive");
  }
  const SentenceSampler sampler(lexicon, options);
  const Rng root(seed);
  auto make_split = [&](std::string name, std::uint64_t tag, int n,
                        bool allow_heldout) {
    Rng rng = root.split(tag);
    CorpusSplit split{std::move(name), rng.seed(), {}};
    split.records.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(split.records.size()) < n) {
      auto r = sampler.sample(rng, allow_heldout);
      if (r.token_count() + 2 > options.max_len) continue;  // resample
      split.records.push_back(std::move(r));
    }
    return split;
  };
  auto train = make_split("train", 1, n_train, false);
  auto val = make_split("val", 2, n_val, true);
  return {std::move(train), std::move(val)};
}

EncodedSentence encode(const SentenceRecord& record, const Lexicon& lexicon,
                       const Vocabulary& vocab, int max_len) {
  const auto tokens = record.tokens(lexicon);
  const int length = static_cast<int>(tokens.size()) + 2;
  if (length > max_len) {
    throw DataError("encode: sentence of " + std::to_string(length) +
                    " tokens exceeds max_len " + std::to_string(max_len));
  }
  EncodedSentence out;
  out.ids.assign(static_cast<std::size_t>(max_len), Vocabulary::kPad);
  out.mask.assign(static_cast<std::size_t>(max_len), 0);
  out.length = length;
  out.ids[0] = Vocabulary::kBos;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.ids[i + 1] = vocab.id(tokens[i]);
  }
  out.ids[static_cast<std::size_t>(length - 1)] = Vocabulary::kEos;
  std::fill(out.mask.begin(), out.mask.begin() + length, 1);
  return out;
}

std::vector<std::string> decode(const std::vector<int>& ids,
                                const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (i == 0 && id == Vocabulary::kBos) continue;
    if (id == Vocabulary::kEos || id == Vocabulary::kPad) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

void validate_record(const SentenceRecord& record, const Lexicon& lexicon) {
  auto fail = [](const std::string& msg) {
    throw DataError("invalid sentence record: " + msg);
  };
  if (record.clauses.empty() || record.clauses.size() > 2) {
    fail("expected 1 or 2 clauses");
  }
  if (record.coref != (record.clauses.size() == 2)) {
    fail("coref flag must be set exactly for two-clause records");
  }
  for (std::size_t i = 0; i < record.clauses.size(); ++i) {
    const auto& c = record.clauses[i];
    const auto& subjects = i == 0 ? lexicon.subjects : lexicon.pronouns;
    if (!in_list(subjects, c.subject)) fail("bad subject '" + c.subject + "'");
    if (!in_list(lexicon.verbs, c.verb)) fail("bad verb '" + c.verb + "'");
    if (!in_list(lexicon.objects, c.object)) {
      fail("bad object '" + c.object + "'");
    }
    bool intens_ok = false;
    for (const auto& in : lexicon.intensifiers) {
      intens_ok = intens_ok || in.word == c.intensifier;
    }
    if (!intens_ok) fail("bad intensifier '" + c.intensifier + "'");
    if (lexicon.polarity_of(c.adjective) == 0) {
      fail("bad adjective '" + c.adjective + "'");
    }
    if (!in_list(lexicon.end_punctuation, c.punct)) {
      fail("bad punctuation '" + c.punct + "'");
    }
  }
}

std::string record_to_json_line(const SentenceRecord& record) {
  nlohmann::ordered_json clauses = nlohmann::ordered_json::array();
  for (const auto& c : record.clauses) {
    nlohmann::ordered_json j;
    j["subj"] = c.subject;
    j["verb"] = c.verb;
    j["obj"] = c.object;
    j["intens"] = c.intensifier;
    j["adj"] = c.adjective;
    j["punct"] = c.punct;
    clauses.push_back(std::move(j));
  }
  nlohmann::ordered_json line;
  line["clauses"] = std::move(clauses);
  line["coref"] = record.coref;
  return line.dump();
}

SentenceRecord record_from_json_line(const std::string& line) {
  SentenceRecord record;
  try {
    const auto j = nlohmann::json::parse(line);
    for (const auto& c : j.at("clauses")) {
      record.clauses.push_back(ClauseRecord{
          c.at("subj").get<std::string>(), c.at("verb").get<std::string>(),
          c.at("obj").get<std::string>(), c.at("intens").get<std::string>(),
          c.at("adj").get<std::string>(), c.at("punct").get<std::string>()});
    }
    record.coref = j.at("coref").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed corpus line: ") + e.what());
  }
  return record;
}

void write_jsonl(const std::filesystem::path& path, const CorpusSplit& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : split.records) out << record_to_json_line(r) << '\n';
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

CorpusSplit read_jsonl(const std::filesystem::path& path, std::string name,
                       const Lexicon& lexicon) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path.string() + "'");
  CorpusSplit split;
  split.name = std::move(name);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto r = record_from_json_line(line);
      validate_record(r, lexicon);
      split.records.push_back(std::move(r));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return split;
}

void write_manifest(const std::filesystem::path& path,
                    const CorpusManifest& manifest) {
  nlohmann::ordered_json j;
  j["seed"] = manifest.seed;
  j["train_seed"] = manifest.train_seed;
  j["val_seed"] = manifest.val_seed;
  j["n_train"] = manifest.n_train;
  j["n_val"] = manifest.n_val;
  j["heldout_positive"] = manifest.lexicon.heldout_positive;
  j["heldout_negative"] = manifest.lexicon.heldout_negative;
  j["lexicon"] = nlohmann::json(manifest.lexicon);
  j["options"] = nlohmann::json(manifest.options);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    CorpusManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_seed = j.at("train_seed").get<std::uint64_t>();
    m.val_seed = j.at("val_seed").get<std::uint64_t>();
    m.n_train = j.at("n_train").get<int>();
    m.n_val = j.at("n_val").get<int>();
    m.lexicon = j.at("lexicon").get<Lexicon>();
    m.options = j.at("options").get<CorpusOptions>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + path.string() + "': " + e.what());
  }
}

}  // namespace semfuse

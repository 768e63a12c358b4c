#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "semfuse/corpus.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/lexicon.hpp"

using namespace semfuse;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("semfuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("vocabulary has the fixed order and 40 entries") {
  const auto lex = Lexicon::standard();
  const auto vocab = build_vocabulary(lex);
  // 3 specials + 5 subjects + 5 verbs + 5 objects + "the" + "," + 4 intensifiers
  // + 10 adjectives + 3 pronouns + 3 end marks.
  CHECK(vocab.size() == 3 + 5 + 5 + 5 + 1 + 1 + 4 + 10 + 3 + 3);
  CHECK(vocab.size() == 40);
  CHECK(vocab.id("<pad>") == 0);
  CHECK(vocab.id("<bos>") == 1);
  CHECK(vocab.id("<eos>") == 2);
  CHECK(vocab.token(vocab.id("Alice")) == "Alice");
  CHECK(vocab.id("Alice") == 3);
  CHECK(vocab.id("the") == 18);
  CHECK(vocab.id(",") == 19);
  CHECK(vocab.id("slightly") == 20);
  CHECK(vocab.id("good") == 24);
  CHECK(vocab.id("bad") == 29);
  CHECK(vocab.id("she") == 34);
  CHECK(vocab.id(".") == 37);
  CHECK(vocab.id("?") == 39);
  for (int i = 0; i < vocab.size(); ++i) CHECK(vocab.id(vocab.token(i)) == i);
  CHECK_THROWS_AS(vocab.id("zebra"), DataError);
}

TEST_CASE("duplicate surface forms are a configuration error") {
  auto lex = Lexicon::standard();
  lex.objects[0] = "paper";
  CHECK_THROWS_AS(build_vocabulary(lex), ConfigError);
}

TEST_CASE("seen-only sampling never produces held-out adjectives") {
  const SentenceSampler sampler(Lexicon::standard(), {});
  Rng rng(11);
  std::set<std::string> seen;
  for (int i = 0; i < 4000; ++i) {
    for (const auto& c : sampler.sample(rng, false).clauses) seen.insert(c.adjective);
  }
  CHECK(seen == std::set<std::string>{"good", "pleasant", "bad", "poor"});
}

TEST_CASE("sampling is a pure function of the seed") {
  const SentenceSampler sampler(Lexicon::standard(), {});
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL, 0xdeadbeefULL}) {
    Rng a(seed), b(seed);
    for (int i = 0; i < 50; ++i) CHECK(sampler.sample(a, true) == sampler.sample(b, true));
  }
}

TEST_CASE("two-clause rate concentrates at 0.6") {
  const SentenceSampler sampler(Lexicon::standard(), {});
  Rng rng(2024);
  int two = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) two += sampler.sample(rng, true).clauses.size() == 2;
  const double sigma = std::sqrt(0.6 * 0.4 / n);
  CHECK(std::abs(two / double(n) - 0.6) <= 3 * sigma);
}

TEST_CASE("punctuation and pronoun frequencies follow the options") {
  const auto lex = Lexicon::standard();
  const SentenceSampler sampler(lex, {});
  Rng rng(5);
  int clauses = 0, period = 0, exclaim = 0, question = 0, second = 0, they = 0, matching = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto r = sampler.sample(rng, true);
    for (const auto& c : r.clauses) {
      ++clauses;
      period += c.punct == ".";
      exclaim += c.punct == "!";
      question += c.punct == "?";
    }
    if (r.clauses.size() == 2) {
      ++second;
      CHECK(r.coref);
      const auto& pronoun = r.clauses[1].subject;
      they += pronoun == "they";
      const auto k = std::find(lex.subjects.begin(), lex.subjects.end(), r.clauses[0].subject) -
                     lex.subjects.begin();
      matching += pronoun == lex.subject_pronouns[static_cast<std::size_t>(k)];
    } else {
      CHECK_FALSE(r.coref);
    }
  }
  auto within = [](int k, int n, double p) {
    return std::abs(k / double(n) - p) <= 4 * std::sqrt(p * (1 - p) / n);
  };
  CHECK(within(period, clauses, 0.6));
  CHECK(within(exclaim, clauses, 0.25));
  CHECK(within(question, clauses, 0.15));
  CHECK(within(they, second, 0.2));
  CHECK(they + matching == second);
}

TEST_CASE("generate_corpus sizes, hygiene and per-split seeds") {
  const auto lex = Lexicon::standard();
  auto [train, val] = generate_corpus(1, 8000, 1200);
  CHECK(train.records.size() == 8000);
  CHECK(val.records.size() == 1200);
  CHECK(train.name == "train");
  CHECK(val.name == "val");
  CHECK(train.seed != val.seed);
  int heldout_in_val = 0;
  for (const auto& r : train.records) {
    for (const auto& c : r.clauses) CHECK_FALSE(lex.is_heldout(c.adjective));
  }
  for (const auto& r : val.records) {
    for (const auto& c : r.clauses) heldout_in_val += lex.is_heldout(c.adjective);
  }
  CHECK(heldout_in_val > 0);

  auto [train2, val2] = generate_corpus(1, 8000, 1200);
  CHECK(train2.records == train.records);
  CHECK(val2.records == val.records);
}

TEST_CASE("encode pads to 28 and round-trips through decode") {
  const auto lex = Lexicon::standard();
  const auto vocab = build_vocabulary(lex);
  SentenceRecord r;
  r.clauses.push_back({"Alice", "finishes", "task", "very", "good", "."});
  const auto enc = encode(r, lex, vocab);
  CHECK(enc.ids.size() == 28);
  CHECK(enc.length == 10);
  CHECK(std::count(enc.mask.begin(), enc.mask.end(), 1) == 10);
  CHECK(std::count(enc.ids.begin(), enc.ids.end(), Vocabulary::kPad) == 18);
  CHECK(enc.ids.front() == Vocabulary::kBos);
  CHECK(enc.ids[9] == Vocabulary::kEos);
  const std::vector<std::string> surface = {"Alice", "finishes", "the", "task", ",",
                                            "very", "good", "."};
  CHECK(decode(enc.ids, vocab) == surface);

  auto [train, val] = generate_corpus(3, 500, 100);
  int longest = 0;
  for (const auto& rec : val.records) {
    const auto e = encode(rec, lex, vocab);
    CHECK(decode(e.ids, vocab) == rec.tokens(lex));
    longest = std::max(longest, e.length);
  }
  CHECK(longest == 2 * ClauseRecord::kTokenCount + 2);
}

TEST_CASE("encoding rejects unknown tokens and overlong sentences") {
  const auto lex = Lexicon::standard();
  const auto vocab = build_vocabulary(lex);
  SentenceRecord r;
  r.clauses.push_back({"Mallory", "finishes", "task", "very", "good", "."});
  CHECK_THROWS_AS(encode(r, lex, vocab), DataError);
  r.clauses[0].subject = "Alice";
  CHECK_THROWS_AS(encode(r, lex, vocab, 9), DataError);
}

TEST_CASE("every generated clause is accepted by the decoding grammar") {
  const auto lex = Lexicon::standard();
  const auto vocab = build_vocabulary(lex);
  const Grammar grammar(TokenClasses(lex, vocab), vocab);
  auto [train, val] = generate_corpus(17, 1000, 300);
  for (const auto* split : {&train, &val}) {
    for (const auto& r : split->records) {
      for (std::size_t c = 0; c < r.clauses.size(); ++c) {
        auto clause = r.clauses[c];
        // The one-clause grammar starts with a name; a coreferent pronoun
        // stands in for its antecedent.
        if (c > 0) clause.subject = r.clauses[0].subject;
        CHECK(grammar.validate_prefix(clause.tokens(lex)) == GrammarState::kDone);
      }
    }
  }
}

TEST_CASE("JSONL and manifest persistence") {
  const auto dir = temp_dir("corpus");
  const auto lex = Lexicon::standard();
  auto [train, val] = generate_corpus(7, 200, 50);
  write_jsonl(dir / "train.jsonl", train);
  const auto back = read_jsonl(dir / "train.jsonl", "train", lex);
  CHECK(back.records == train.records);

  auto [train_b, val_b] = generate_corpus(7, 200, 50);
  write_jsonl(dir / "train_b.jsonl", train_b);
  CHECK(slurp(dir / "train.jsonl") == slurp(dir / "train_b.jsonl"));

  const auto line = record_to_json_line(train.records[0]);
  CHECK(line.find("\"clauses\"") != std::string::npos);
  CHECK(line.find("\"subj\"") != std::string::npos);
  CHECK(line.find("\"coref\"") != std::string::npos);

  write_manifest(dir / "manifest.json", {7, train.seed, val.seed, 200, 50, lex, {}});
  const auto m = read_manifest(dir / "manifest.json");
  CHECK(m.seed == 7);
  CHECK(m.train_seed == train.seed);
  CHECK(m.n_val == 50);
  CHECK(m.lexicon.heldout_positive == lex.heldout_positive);
  CHECK(m.options.punct_probs == std::vector<double>{0.6, 0.25, 0.15});

  std::ofstream bad(dir / "bad.jsonl");
  bad << "{\"clauses\":[{\"subj\":\"Alice\"}],\"coref\":false}\n";
  bad.close();
  CHECK_THROWS_AS(read_jsonl(dir / "bad.jsonl", "train", lex), DataError);
}

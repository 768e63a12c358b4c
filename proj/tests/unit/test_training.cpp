#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "semfuse/batch.hpp"
#include "semfuse/corpus.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/training.hpp"

using namespace semfuse;

namespace {

struct Setup {
  Lexicon lex = Lexicon::standard();
  Vocabulary vocab = build_vocabulary(lex);
  TokenClasses classes{lex, vocab};
  AdjectiveClassIndex index{classes};
};

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 16;
  c.variant = v;
  return c;
}

double scalar(const Graph<double>& g, Var v) { return g.value(v)[0]; }

// Reference losses evaluated directly from the forward values.
double ref_lm(const std::vector<double>& logits, const std::vector<int>& targets,
              const std::vector<std::uint8_t>& mask, int V, double eps) {
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!mask[t]) continue;
    const double* row = logits.data() + t * static_cast<std::size_t>(V);
    double mx = row[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (int v = 0; v < V; ++v) z += std::exp(row[v] - mx);
    const double lse = mx + std::log(z);
    for (int v = 0; v < V; ++v) {
      const double q = (v == targets[t] ? 1.0 - eps : 0.0) + eps / V;
      total -= q * (row[v] - lse);
    }
    ++count;
  }
  return total / count;
}

double ref_bce(const std::vector<double>& pred, const std::vector<double>& s,
               const std::vector<std::uint8_t>& mask, int F) {
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    for (int f = 0; f < F; ++f) {
      const std::size_t i = t * static_cast<std::size_t>(F) + static_cast<std::size_t>(f);
      const double p = std::clamp(pred[i], 1e-7, 1.0 - 1e-7);
      total -= s[i] * std::log(p) + (1.0 - s[i]) * std::log(1.0 - p);
      ++count;
    }
  }
  return total / count;
}

double ref_uni(const std::vector<double>& logits, const std::vector<int>& targets, int V,
               const AdjectiveClassIndex& index) {
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto* cls = index.class_of(targets[t]);
    if (!cls) continue;
    std::vector<double> z;
    for (int id : *cls) z.push_back(logits[t * static_cast<std::size_t>(V) + static_cast<std::size_t>(id)]);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& x : z) sum += (x = std::exp(x - mx));
    double kl = 0.0;
    for (double x : z) {
      const double p = x / sum;
      if (p > 0) kl += p * std::log(p * static_cast<double>(z.size()));
    }
    total += kl;
    ++count;
  }
  return count ? total / count : 0.0;
}

Var const_logits(Graph<double>& g, const std::vector<double>& values, int rows, int V) {
  return g.constant(Tensor<double>({rows, V}, values));
}

}  // namespace

TEST_CASE("label-smoothed CE under a uniform predictive distribution is ln 40") {
  for (double eps : {0.0, 0.02, 0.5}) {
    Graph<double> g;
    const Var logits = const_logits(g, std::vector<double>(3 * 40, 1.7), 3, 40);
    const Var loss = lm_loss_label_smoothed(g, logits, {5, 9, 0}, {1, 1, 0}, eps);
    CHECK(std::abs(scalar(g, loss) - std::log(40.0)) < 1e-5);
    CHECK(std::abs(scalar(g, loss) - 3.68888) < 1e-5);
  }
}

TEST_CASE("smoothed gold mass and the one-hot limit") {
  const double eps = 0.02, V = 40;
  CHECK((1 - eps) + eps / V == doctest::Approx(0.9805).epsilon(1e-12));
  // With logits log q_eps the loss equals the entropy of q_eps.
  std::vector<double> logits(40, std::log(eps / V));
  logits[7] = std::log(0.9805);
  Graph<double> g;
  const Var loss = lm_loss_label_smoothed(g, const_logits(g, logits, 1, 40), {7}, {1}, eps);
  const double entropy = -(0.9805 * std::log(0.9805) + 39 * (eps / V) * std::log(eps / V));
  CHECK(scalar(g, loss) == doctest::Approx(entropy).epsilon(1e-10));

  std::vector<double> sharp(40, -1e4);
  sharp[3] = 0.0;
  Graph<double> g2;
  CHECK(scalar(g2, lm_loss_label_smoothed(g2, const_logits(g2, sharp, 1, 40), {3}, {1}, 0.0)) ==
        doctest::Approx(0.0));
  Graph<double> g3;
  CHECK_THROWS_AS(lm_loss_label_smoothed(g3, const_logits(g3, sharp, 1, 40), {3}, {0}, 0.0),
                  NumericError);
}

TEST_CASE("smoothed CE is bounded below by the entropy of the smoothed target") {
  Rng rng(31);
  const double eps = 0.02;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(40);
    for (auto& x : logits) x = 6.0 * (rng.uniform01() - 0.5);
    const int y = static_cast<int>(rng.uniform_below(40));
    Graph<double> g;
    const double ce = scalar(g, lm_loss_label_smoothed(g, const_logits(g, logits, 1, 40), {y}, {1}, eps));
    const double hi = 1 - eps + eps / 40, lo = eps / 40;
    const double entropy = -(hi * std::log(hi) + 39 * lo * std::log(lo));
    CHECK(ce >= entropy - 1e-12);
    CHECK(ce == doctest::Approx(ref_lm(logits, {y}, {1}, 40, eps)).epsilon(1e-10));
  }
}

TEST_CASE("BCE reference values") {
  auto bce = [](std::vector<double> pred, std::vector<double> target) {
    Graph<double> g;
    const int n = static_cast<int>(pred.size());
    const Var p = g.constant(Tensor<double>({1, n}, std::move(pred)));
    return scalar(g, aux_loss_bce(g, p, target, {1}));
  };
  CHECK(std::abs(bce({0.9}, {1.0}) - 0.10536) < 1e-5);
  CHECK(std::abs(bce({0.5}, {0.5}) - std::log(2.0)) < 1e-5);
  CHECK(std::abs(bce({0.5}, {0.5}) - 0.69315) < 1e-5);
  CHECK(bce({1.0, 0.0}, {1.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-6));
  // Saturated predictions stay finite through the clamp.
  CHECK(bce({0.0}, {1.0}) == doctest::Approx(-std::log(1e-7)));
}

TEST_CASE("uniformizer reference values") {
  const Setup s;
  const int good = s.vocab.id("good");
  const auto& pos = s.classes.positive_adjectives;
  auto uni = [&](const std::vector<double>& class_probs, int target) {
    std::vector<double> logits(40, 0.3);
    for (std::size_t k = 0; k < pos.size(); ++k) logits[static_cast<std::size_t>(pos[k])] = std::log(class_probs[k]);
    Graph<double> g;
    return scalar(g, uniformizer_loss(g, const_logits(g, logits, 1, 40), {target}, s.index));
  };
  CHECK(uni({0.2, 0.2, 0.2, 0.2, 0.2}, good) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(uni({0.6, 0.1, 0.1, 0.1, 0.1}, good) - 0.38191) < 1e-4);
  CHECK(std::abs(uni({0.6, 0.1, 0.1, 0.1, 0.1}, good) -
                 (0.6 * std::log(3.0) + 0.4 * std::log(0.5))) < 1e-12);
  CHECK(std::abs(uni({1.0, 1e-300, 1e-300, 1e-300, 1e-300}, good) - std::log(5.0)) < 1e-5);

  // Non-adjective targets give exactly zero.
  std::vector<double> logits(2 * 40);
  Rng rng(2);
  for (auto& x : logits) x = rng.uniform01();
  Graph<double> g;
  const Var u = uniformizer_loss(g, const_logits(g, logits, 2, 40),
                                 {s.vocab.id("the"), s.vocab.id("!")}, s.index);
  CHECK(scalar(g, u) == 0.0);
}

TEST_CASE("adjective class index") {
  const Setup s;
  CHECK(s.index.positive.size() == 5);
  CHECK(s.index.negative.size() == 5);
  CHECK(s.index.class_of(s.vocab.id("awful")) == &s.index.negative);
  CHECK(s.index.class_of(s.vocab.id("great")) == &s.index.positive);
  CHECK(s.index.class_of(s.vocab.id("very")) == nullptr);
  for (int id : s.index.positive) CHECK(std::find(s.index.negative.begin(), s.index.negative.end(), id) == s.index.negative.end());
}

TEST_CASE("total loss decomposes into independently computed terms") {
  const Setup s;
  auto [train, val] = generate_corpus(4, 12, 1, s.lex);
  const auto corpus = encode_corpus(train, s.lex, s.vocab, 28);
  std::vector<int> rows(12);
  std::iota(rows.begin(), rows.end(), 0);
  for (Variant v : {Variant::kBaseline, Variant::kFusion}) {
    const bool fusion = v == Variant::kFusion;
    LanguageModel<double> m(tiny(v), 5);
    const auto batch = make_batch<double>(corpus, rows, fusion);
    TrainConfig cfg;
    Graph<double> g;
    const auto out = m.forward(g, batch.input, Mode::kEval);
    const auto terms = total_loss(g, out, batch, v, cfg, s.index);
    const std::vector<double> logits(g.value(out.logits).data.begin(), g.value(out.logits).data.end());
    const double lm = ref_lm(logits, batch.targets, batch.target_mask, 40, cfg.label_smoothing);
    const double uni = ref_uni(logits, batch.targets, 40, s.index);
    CHECK(scalar(g, terms.lm) == doctest::Approx(lm).epsilon(1e-10));
    CHECK(scalar(g, terms.uni) == doctest::Approx(uni).epsilon(1e-10));
    CHECK(uni > 0.0);
    double expected = lm + cfg.lambda_uni * uni;
    if (fusion) {
      const auto& pred = g.value(out.aux).data;
      const double aux = ref_bce({pred.begin(), pred.end()}, batch.input.semantics, batch.input.mask,
                                 kFeatureCount);
      CHECK(scalar(g, terms.aux) == doctest::Approx(aux).epsilon(1e-10));
      expected += cfg.lambda_aux * aux;
    } else {
      CHECK_FALSE(terms.aux.valid());
    }
    CHECK(std::abs(scalar(g, terms.total) - expected) < 1e-6);

    TrainConfig off = cfg;
    off.lambda_aux = 0.0;
    off.lambda_uni = 0.0;
    Graph<double> g2;
    const auto out2 = m.forward(g2, batch.input, Mode::kEval);
    const auto t2 = total_loss(g2, out2, batch, v, off, s.index);
    CHECK(scalar(g2, t2.total) == doctest::Approx(scalar(g2, t2.lm)).epsilon(1e-14));
  }
}

TEST_CASE("batches shift targets and truncate to the longest row") {
  const Setup s;
  SentenceRecord one, two;
  one.clauses.push_back({"Alice", "finishes", "task", "very", "good", "."});
  two = one;
  two.clauses.push_back({"she", "cooks", "meal", "slightly", "bad", "?"});
  two.coref = true;
  EncodedCorpus c;
  for (const auto* r : {&one, &two}) {
    const auto e = encode(*r, s.lex, s.vocab);
    c.sentences.push_back(e);
    c.semantics.push_back(annotate(*r, e, s.lex, s.vocab));
  }
  const std::vector<int> only_one = {0};
  const auto b1 = make_batch<float>(c, only_one, true);
  CHECK(b1.input.length == 10);
  CHECK(b1.target_count() == 9);
  CHECK(b1.targets[8] == Vocabulary::kEos);
  CHECK(b1.targets[9] == Vocabulary::kPad);
  CHECK(b1.target_mask[9] == 0);
  for (int t = 0; t < 9; ++t) CHECK(b1.targets[static_cast<std::size_t>(t)] == b1.input.ids[static_cast<std::size_t>(t + 1)]);

  const std::vector<int> both = {0, 1};
  const auto b2 = make_batch<float>(c, both, false);
  CHECK(b2.input.length == 18);
  CHECK(b2.input.semantics.empty());
  CHECK(b2.target_count() == 9 + 17);
  CHECK(b2.token_count() == 10 + 18);
  CHECK(b2.sentence_index == both);
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(total_steps(8000, cfg) == 750);
  CHECK(lr_at(75, 750, cfg) == doctest::Approx(3e-4));
  CHECK(lr_at(1, 750, cfg) == doctest::Approx(3e-4 / 75));
  CHECK(lr_at(750, 750, cfg) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(lr_at(751, 750, cfg) == 0.0);
  CHECK(lr_at(0, 750, cfg) == 0.0);
  // total 100: warmup 10, midpoint of the cosine at step 55.
  CHECK(lr_at(55, 100, cfg) == doctest::Approx(1.5e-4).epsilon(1e-12));
  double prev = 0.0;
  for (int step = 1; step <= 750; ++step) {
    const double lr = lr_at(step, 750, cfg);
    if (step <= 75) {
      CHECK(lr >= prev);
    } else {
      CHECK(lr <= prev);
    }
    prev = lr;
  }
}

TEST_CASE("global-norm clipping") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    Parameter<float> a("a", Tensor<float>({7}), true), b("b", Tensor<float>({3, 2}), true);
    const double scale = trial < 50 ? 0.05 : 20.0;
    double sq = 0.0;
    for (auto* p : {&a, &b}) {
      for (auto& x : p->grad.data) {
        x = static_cast<float>(scale * (rng.uniform01() - 0.5));
        sq += static_cast<double>(x) * x;
      }
    }
    const auto before_a = a.grad.data;
    std::vector<Parameter<float>*> ps = {&a, &b};
    const double norm = clip_global_norm<float>(ps, 1.0);
    CHECK(norm == doctest::Approx(std::sqrt(sq)).epsilon(1e-6));
    double after = 0.0;
    for (auto* p : ps) {
      for (float x : p->grad.data) after += static_cast<double>(x) * x;
    }
    CHECK(std::sqrt(after) <= 1.0 + 1e-6);
    if (norm <= 1.0) CHECK(a.grad.data == before_a);
  }
}

TEST_CASE("AdamW reference steps") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  {
    Parameter<double> p("w", Tensor<double>({1}, 1.0), true);
    std::vector<Parameter<double>*> ps = {&p};
    AdamW<double> opt(ps, cfg);
    p.grad[0] = 1.0;
    opt.step(0.1);
    CHECK(std::abs(p.value[0] - 0.9) < 1e-4);
    CHECK(opt.steps() == 1);
  }
  {
    Parameter<double> p("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}), true);
    std::vector<Parameter<double>*> ps = {&p};
    AdamW<double> opt(ps, cfg);
    const auto before = p.value.data;
    opt.step(0.1);
    CHECK(p.value.data == before);
  }
  cfg.weight_decay = 0.01;
  {
    Parameter<double> w("w", Tensor<double>({2}, std::vector<double>{1.0, -3.0}), true);
    Parameter<double> b("b", Tensor<double>({2}, std::vector<double>{1.0, -3.0}), false);
    std::vector<Parameter<double>*> ps = {&w, &b};
    AdamW<double> opt(ps, cfg);
    opt.step(0.1);
    CHECK(w.value[0] == doctest::Approx(1.0 * (1 - 0.001)).epsilon(1e-14));
    CHECK(w.value[1] == doctest::Approx(-3.0 * (1 - 0.001)).epsilon(1e-14));
    CHECK(b.value[0] == 1.0);
    CHECK(b.value[1] == -3.0);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.warmup_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.label_smoothing = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training loop: curve, determinism and divergence") {
  const Setup s;
  auto [train_split, val_split] = generate_corpus(6, 96, 40, s.lex);
  TrainData data{encode_corpus(train_split, s.lex, s.vocab, 28),
                 encode_corpus(val_split, s.lex, s.vocab, 28), s.classes};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 32;
  cfg.lr_peak = 3e-3;
  cfg.seed = 4;

  auto run = [&](Variant v) {
    LanguageModel<float> m(tiny(v), init_seed_for(cfg.seed));
    int calls = 0;
    const auto result = train(m, data, cfg, [&](const EpochRecord& r, const LanguageModel<float>&) {
      CHECK(r.epoch == ++calls);
    });
    CHECK(calls == 3);
    return result;
  };
  const auto a = run(Variant::kFusion);
  const auto b = run(Variant::kFusion);
  REQUIRE(a.curve.size() == 3);
  CHECK(a.steps == 9);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
    CHECK(a.curve[i].val_ppl == b.curve[i].val_ppl);
    CHECK(std::isfinite(a.curve[i].sem_mse));
    CHECK(a.curve[i].val_ppl_seen_only <= a.curve[i].val_ppl);
  }
  CHECK(a.curve[2].train_loss < a.curve[0].train_loss);
  const auto base = run(Variant::kBaseline);
  CHECK(std::isnan(base.curve[0].sem_mse));

  LanguageModel<float> broken(tiny(Variant::kBaseline), 1);
  broken.find("out.b")->value[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(broken, data, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("derived seeds differ per stream") {
  CHECK(init_seed_for(1) == init_seed_for(1));
  CHECK(init_seed_for(1) != init_seed_for(2));
  CHECK(init_seed_for(1) == Rng(1).split(1).next());
}

// End-to-end acceptance run. Trains (or reloads from the cache directory) the
// default baseline and fusion models, then prints one PASS/FAIL line per
// criterion. Exits 1 when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "semfuse/batch.hpp"
#include "semfuse/checkpoint.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/evaluation.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/semantics.hpp"
#include "semfuse/training.hpp"

namespace fs = std::filesystem;
using namespace semfuse;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  "
            << detail << std::endl;
  if (!pass) ++failures;
}

void info(const std::string& line) { std::cout << "      " << line << '\n'; }

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct TrainedModel {
  std::vector<EpochRecord> curve;
  double seconds = 0.0;
  LanguageModel<float> model;
};

nlohmann::json curve_json(const std::vector<EpochRecord>& curve) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : curve) {
    a.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_ppl", r.val_ppl},
                 {"val_ppl_seen_only", r.val_ppl_seen_only}, {"sem_mse", num(r.sem_mse)}});
  }
  return a;
}

std::vector<EpochRecord> curve_from_json(const nlohmann::json& a) {
  std::vector<EpochRecord> out;
  for (const auto& j : a) {
    EpochRecord r;
    r.epoch = j["epoch"];
    r.train_loss = j["train_loss"];
    r.val_ppl = j["val_ppl"];
    r.val_ppl_seen_only = j["val_ppl_seen_only"];
    r.sem_mse = j["sem_mse"].is_null() ? std::nan("") : j["sem_mse"].get<double>();
    out.push_back(r);
  }
  return out;
}

// Reuses a cached run when its recorded configuration matches `rc`.
TrainedModel train_or_load(const RunConfig& rc, const Workspace& ws, const TrainData& td,
                           Variant v, const fs::path& cache) {
  const std::string name(variant_name(v));
  const fs::path ckpt = cache / (name + ".sflm");
  const fs::path meta = cache / (name + ".json");
  const std::string key = to_json(rc).dump();
  if (fs::exists(ckpt) && fs::exists(meta)) {
    std::ifstream in(meta);
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("config", "") == key) {
      auto loaded = load_checkpoint(ckpt);
      std::cout << "loaded cached " << name << " model from " << ckpt.string() << '\n';
      return {curve_from_json(j["curve"]), j["seconds"].get<double>(), std::move(loaded.model)};
    }
  }
  std::cout << "training " << name << " (" << rc.train.epochs << " epochs)" << std::endl;
  LanguageModel<float> model(model_config_for(rc, ws, v), init_seed_for(rc.train.seed));
  const auto t0 = Clock::now();
  const auto result = train(model, td, rc.train, [&](const EpochRecord& r, const LanguageModel<float>&) {
    std::cout << "  epoch " << r.epoch << "  val_ppl " << fmt(r.val_ppl) << std::endl;
  });
  const double secs = seconds_since(t0);
  fs::create_directories(cache);
  CheckpointInfo ci;
  ci.config = model.config();
  ci.vocabulary = ws.vocab.tokens();
  ci.features.assign(feature_names().begin(), feature_names().end());
  ci.seed = rc.train.seed;
  ci.epoch = rc.train.epochs;
  save_checkpoint(ckpt, model, ci);
  std::ofstream(meta) << nlohmann::json{{"config", key}, {"seconds", secs},
                                        {"curve", curve_json(result.curve)}}.dump(2);
  return {result.curve, secs, std::move(model)};
}

// Negative log-likelihood of a sentence under the generating process itself,
// scored on the same targets as teacher forcing (every token after <bos>, then
// <eos>). `adjective_pool` is the number of adjectives per polarity class the
// predictor spreads over. With `marks_known` the end mark costs nothing, which
// bounds any model whose inputs leak the mark.
struct OracleScore {
  double nll = 0.0;
  int count = 0;
};

void oracle_score(const SentenceRecord& r, const Lexicon& lex, const CorpusOptions& opt,
                  int adjective_pool, bool marks_known, bool skip_heldout, OracleScore& acc) {
  const auto subj = std::find(lex.subjects.begin(), lex.subjects.end(), r.clauses[0].subject) -
                    lex.subjects.begin();
  const std::string own = lex.subject_pronouns[static_cast<std::size_t>(subj)];
  auto add = [&](double p) {
    acc.nll -= std::log(p);
    ++acc.count;
  };
  for (std::size_t c = 0; c < r.clauses.size(); ++c) {
    const auto& cl = r.clauses[c];
    if (c == 0) {
      add(1.0 / static_cast<double>(lex.subjects.size()));
    } else {
      double p = 0.0;
      if (cl.subject == own) p += 1.0 - opt.they_prob;
      if (cl.subject == "they") p += opt.they_prob;
      add(opt.two_clause_prob * p);
    }
    add(1.0 / static_cast<double>(lex.verbs.size()));
    add(1.0);
    add(1.0 / static_cast<double>(lex.objects.size()));
    add(1.0);
    add(1.0 / static_cast<double>(lex.intensifiers.size()));
    if (!(skip_heldout && lex.is_heldout(cl.adjective))) add(0.5 / adjective_pool);
    const auto mark = std::find(lex.end_punctuation.begin(), lex.end_punctuation.end(), cl.punct) -
                      lex.end_punctuation.begin();
    add(marks_known ? 1.0 : opt.punct_probs[static_cast<std::size_t>(mark)]);
  }
  add(r.clauses.size() == 1 ? 1.0 - opt.two_clause_prob : 1.0);
}

double oracle_ppl(const CorpusSplit& split, const Lexicon& lex, const CorpusOptions& opt,
                  int adjective_pool, bool marks_known, bool skip_heldout) {
  OracleScore acc;
  for (const auto& r : split.records) {
    oracle_score(r, lex, opt, adjective_pool, marks_known, skip_heldout, acc);
  }
  return std::exp(acc.nll / acc.count);
}

bool in_band(double x, double lo, double hi) { return x >= lo && x <= hi; }

}  // namespace

int main(int argc, char** argv) {
  const fs::path cache = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_cache");
  const auto t_start = Clock::now();

  const RunConfig rc;
  const Workspace ws(rc.lexicon);
  auto [train_split, val_split] =
      generate_corpus(rc.data_seed, rc.n_train, rc.n_val, rc.lexicon, rc.corpus);
  const TrainData td{encode_corpus(train_split, ws.lexicon, ws.vocab, rc.corpus.max_len),
                     encode_corpus(val_split, ws.lexicon, ws.vocab, rc.corpus.max_len), ws.classes};

  auto base = train_or_load(rc, ws, td, Variant::kBaseline, cache);
  auto fus = train_or_load(rc, ws, td, Variant::kFusion, cache);
  const Grammar grammar(ws.classes, ws.vocab);

  const auto tf_base = teacher_forced(base.model, td.val);
  const auto tf_fus = teacher_forced(fus.model, td.val);
  const auto& held = ws.classes.heldout_adjectives;
  const double ppl_b = perplexity(tf_base.log), ppl_f = perplexity(tf_fus.log);
  const double seen_b = seen_only_perplexity(tf_base.log, held);
  const double seen_f = seen_only_perplexity(tf_fus.log, held);
  std::cout << '\n';

  // 1. End-to-end perplexity ordering and band.
  {
    bool ordered = true;
    std::string per_epoch;
    for (std::size_t e = 0; e < base.curve.size() && e < fus.curve.size(); ++e) {
      per_epoch += " e" + std::to_string(e + 1) + ":" + fmt(base.curve[e].val_ppl, 3) + "/" +
                   fmt(fus.curve[e].val_ppl, 3);
      if (e >= 1 && !(fus.curve[e].val_ppl < base.curve[e].val_ppl)) ordered = false;
    }
    const double gap = ppl_f - ppl_b;
    const double minutes = (base.seconds + fus.seconds) / 60.0;
    const bool pass = ordered && in_band(ppl_b, 1.9, 2.6) && in_band(ppl_f, 1.9, 2.6) &&
                      gap <= -0.03 && minutes <= 45.0;
    report(1, pass,
           "val PPL baseline " + fmt(ppl_b) + ", fusion " + fmt(ppl_f) + ", gap " + fmt(gap) +
               " (band [1.9, 2.6], gap <= -0.03, fusion < baseline from epoch 2: " +
               (ordered ? "yes" : "no") + "), training " + fmt(minutes, 1) + " min");
    info("per-epoch baseline/fusion:" + per_epoch);
    const int full_pool = static_cast<int>(rc.lexicon.positive_adjectives.size());
    info("generator oracle on this split: PPL " +
         fmt(oracle_ppl(val_split, rc.lexicon, rc.corpus, full_pool, false, false)) +
         ", with every end mark known in advance " +
         fmt(oracle_ppl(val_split, rc.lexicon, rc.corpus, full_pool, true, false)));
  }

  // 2. Seen-only perplexity.
  {
    const bool pass = seen_b < ppl_b && seen_f < ppl_f && seen_f < seen_b &&
                      in_band(seen_b, 1.25, 1.70) && in_band(seen_f, 1.25, 1.70);
    report(2, pass,
           "seen-only PPL baseline " + fmt(seen_b) + ", fusion " + fmt(seen_f) +
               " (band [1.25, 1.70], fusion < baseline, each below its overall PPL)");
    const int seen_pool = static_cast<int>(rc.lexicon.seen_adjectives(1).size());
    info("generator oracle restricted to seen adjectives: PPL " +
         fmt(oracle_ppl(val_split, rc.lexicon, rc.corpus, seen_pool, false, true)) +
         ", with every end mark known in advance " +
         fmt(oracle_ppl(val_split, rc.lexicon, rc.corpus, seen_pool, true, true)));
  }

  // 3. Auxiliary head MSE.
  {
    const double mse = semantic_mse(tf_fus);
    report(3, mse <= 0.02, "semantic MSE " + fmt(mse, 5) + " (<= 0.02)");
  }

  // 4. Hard control is exact.
  std::map<ControlSetting, ControlResult> fusion_control;
  {
    bool pass = true;
    std::string detail;
    for (auto* m : {&base, &fus}) {
      for (auto setting : {ControlSetting::kPosHard, ControlSetting::kNegQuestionHard}) {
        const auto spec = control_spec(setting);
        const auto r = control_eval(m->model, grammar, ws.lexicon, setting, spec, 200,
                                    Rng(100).split(static_cast<std::uint64_t>(setting)));
        const int want = spec.polarity > 0 ? 0 : 1;
        pass = pass && r.adjective_correct == 200 && r.punct_correct == 200 &&
               r.confusion[static_cast<std::size_t>(want)] == 200 && r.confusion[2] == 0;
        detail += std::string(m == &base ? " baseline " : " fusion ") +
                  std::string(control_setting_name(setting)) + " adj " +
                  fmt(r.adjective_accuracy(), 2) + " punct " + fmt(r.punct_accuracy(), 2) +
                  " other " + std::to_string(r.confusion[2]) + ";";
        if (m == &fus) fusion_control[setting] = r;
      }
    }
    report(4, pass, "hard control over 200 generations:" + detail);
    std::ostringstream table;
    print_confusion(table, fusion_control[ControlSetting::kPosHard],
                    fusion_control[ControlSetting::kNegQuestionHard]);
    std::istringstream lines(table.str());
    for (std::string line; std::getline(lines, line);) info(line);
  }

  // 5. OOD hit rates and the mixture floor.
  {
    const double pos = fusion_control[ControlSetting::kPosHard].ood_rate();
    const double neg = fusion_control[ControlSetting::kNegQuestionHard].ood_rate();
    const int n = 10000;
    int hits = 0;
    const Rng root(500);
    for (int i = 0; i < n; ++i) {
      auto preset = decode_preset(i % 2 == 0 ? "pos-strong" : "neg-question");
      preset.config.alpha = 0.97;
      preset.config.rho = 1.0;
      Rng rng = root.split(static_cast<std::uint64_t>(i));
      const auto gen = generate(fus.model, grammar, ws.lexicon, preset.controls, preset.config, {}, rng);
      hits += ws.classes.is_heldout(gen.ids[6]) ? 1 : 0;
    }
    const double p = 0.97 * 0.6;
    const double floor = p - 3.0 * std::sqrt(p * (1.0 - p) / n);
    const double rate = static_cast<double>(hits) / n;
    report(5, in_band(pos, 0.47, 0.77) && in_band(neg, 0.28, 0.58) && rate >= floor,
           "OOD hit rate pos " + fmt(pos, 3) + " (band [0.47, 0.77]), neg " + fmt(neg, 3) +
               " (band [0.28, 0.58]); mixture held-out rate " + fmt(rate, 4) + " over " +
               std::to_string(n) + " >= " + fmt(floor, 4));
  }

  // 6. Focus-token cross-entropy.
  {
    const auto fb = focus_ce(tf_base.log, default_focus_tokens(), ws.vocab);
    const auto ff = focus_ce(tf_fus.log, default_focus_tokens(), ws.vocab);
    auto mean_of = [](const std::vector<FocusCE>& v, const std::string& t) {
      for (const auto& f : v) if (f.token == t && f.mean) return *f.mean;
      return std::nan("");
    };
    const double eb = mean_of(fb, "!"), ef = mean_of(ff, "!");
    const double qb = mean_of(fb, "?"), qf = mean_of(ff, "?");
    report(6, ef < eb && qf < qb,
           "focus CE '!' baseline " + fmt(eb) + " fusion " + fmt(ef) + ", '?' baseline " +
               fmt(qb) + " fusion " + fmt(qf) + " (fusion lower for both)");
    info("token        count   baseline     fusion   change");
    for (std::size_t i = 0; i < fb.size(); ++i) {
      std::ostringstream row;
      row << std::left << std::setw(10) << fb[i].token << std::right << std::setw(8) << fb[i].count;
      if (fb[i].mean && ff[i].mean) {
        row << std::setw(11) << fmt(*fb[i].mean) << std::setw(11) << fmt(*ff[i].mean)
            << std::setw(8) << fmt(100.0 * (*ff[i].mean - *fb[i].mean) / *fb[i].mean, 1) << "%";
      } else {
        row << "     absent";
      }
      info(row.str());
    }
  }

  // 7. Gradient oracle.
  {
    const auto t0 = Clock::now();
    const auto r = tiny_model_grad_check<double>(7, 256, 1e-5);
    const double secs = seconds_since(t0);
    report(7, r.max_rel_error < 1e-3 && secs < 60.0,
           "max relative error " + [&] { std::ostringstream s; s << std::scientific << std::setprecision(2) << r.max_rel_error; return s.str(); }() +
               " over " + std::to_string(r.coords_checked) + " coordinates (< 1e-3) in " +
               fmt(secs, 2) + " s (< 60 s)");
  }

  // 8. Membership functions.
  {
    auto closed = [](double x, double c) { return std::pow(0.9, std::abs(x - c) / 0.35); };
    double worst = 0.0;
    for (double x : {0.2, 0.8, 1.0, 0.0}) {
      const auto t = tri(x);
      const double cs[3] = {0.2, 0.6, 1.0};
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(t[static_cast<std::size_t>(k)] - closed(x, cs[k])));
    }
    Rng rng(8);
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const double x = rng.uniform01(), c = rng.uniform01(), tau = 0.05 + rng.uniform01();
      const double d = 0.5 * rng.uniform01();
      if (std::abs(membership(c + d, c, tau) - membership(c - d, c, tau)) > 1e-12) ++violations;
      const double near = std::abs(x - c), far = near + d;
      if (membership(c + far, c, tau) > membership(c + near, c, tau)) ++violations;
    }
    report(8, worst <= 1e-5 && violations == 0,
           "tri() max deviation from closed form " + [&] { std::ostringstream s; s << std::scientific << std::setprecision(1) << worst; return s.str(); }() +
               " (<= 1e-5); symmetry/monotonicity violations " + std::to_string(violations) +
               " of 1000 triples");
  }

  // 9. Seen-only oracle from persisted CE logs.
  {
    double worst = 0.0;
    for (const auto* tf : {&tf_base, &tf_fus}) {
      const fs::path path = cache / "val_ce.bin";
      fs::create_directories(cache);
      write_ce_log(path, tf->log);
      const auto log = read_ce_log(path);
      long double num = 0.0L;
      long long den = 0;
      for (const auto& r : log) {
        if (std::find(held.begin(), held.end(), r.gold) != held.end()) continue;
        num += r.ce;
        ++den;
      }
      const double brute = static_cast<double>(std::exp(num / den));
      worst = std::max(worst, std::abs(brute - seen_only_perplexity(tf->log, held)));
    }
    report(9, worst <= 1e-6,
           "seen-only PPL vs brute force over " + std::to_string(tf_fus.log.size()) +
               " positions per model: max difference " + [&] { std::ostringstream s; s << std::scientific << std::setprecision(1) << worst; return s.str(); }() + " (<= 1e-6)");
  }

  // 10. Grammar soundness of sampled generations.
  {
    const auto& presets = decode_presets();
    int rejected = 0, incomplete = 0;
    const Rng root(1000);
    for (int i = 0; i < 1000; ++i) {
      const auto& preset = presets[static_cast<std::size_t>(i) % presets.size()];
      auto& model = (i / static_cast<int>(presets.size())) % 2 == 0 ? fus.model : base.model;
      Rng rng = root.split(static_cast<std::uint64_t>(i));
      const auto gen = generate(model, grammar, ws.lexicon, preset.controls, preset.config, {}, rng);
      try {
        if (grammar.validate_prefix(std::span<const int>(gen.ids)) != GrammarState::kDone) ++incomplete;
      } catch (const GrammarError&) {
        ++rejected;
      }
    }
    report(10, rejected == 0 && incomplete == 0,
           "1000 generations over " + std::to_string(presets.size()) + " presets and both models: " +
               std::to_string(rejected) + " rejected, " + std::to_string(incomplete) + " incomplete");
  }

  // 11. Class-mixture sampling distribution.
  {
    std::vector<double> logits(40);
    for (int i = 0; i < 40; ++i) logits[static_cast<std::size_t>(i)] = std::sin(1.3 * i) * 3.0;
    const auto& cls = ws.classes.adjective_class(1);
    const double T = 1.5, alpha = 0.97;
    // Independent reference for q.
    double z = 0.0;
    for (int id : cls) z += std::exp(logits[static_cast<std::size_t>(id)] / T);
    std::vector<double> q;
    for (int id : cls) {
      q.push_back((1.0 - alpha) * std::exp(logits[static_cast<std::size_t>(id)] / T) / z +
                  alpha / static_cast<double>(cls.size()));
    }
    const int n = 100000;
    std::map<int, int> counts;
    Rng rng(11);
    for (int i = 0; i < n; ++i) ++counts[class_mixture_sample(logits, cls, T, alpha, 1.0, rng)];
    double worst_z = 0.0;
    int outside = 0;
    for (std::size_t k = 0; k < cls.size(); ++k) {
      const double sigma = std::sqrt(q[k] * (1.0 - q[k]) / n);
      const double zk = std::abs(counts[cls[k]] / static_cast<double>(n) - q[k]) / sigma;
      worst_z = std::max(worst_z, zk);
      if (zk > 3.0) ++outside;
    }
    int stray = 0;
    for (const auto& [id, c] : counts) {
      if (std::find(cls.begin(), cls.end(), id) == cls.end()) stray += c;
    }
    report(11, outside == 0 && stray == 0,
           "10^5 draws at T=1.5, alpha=0.97, rho=1.0: largest deviation " + fmt(worst_z, 2) +
               " sigma over " + std::to_string(cls.size()) + " class members (<= 3), " +
               std::to_string(stray) + " draws outside the class");
  }

  // 12. Loss identities.
  {
    const AdjectiveClassIndex index(ws.classes);
    auto scalar = [](Graph<double>& g, Var v) { return g.value(v)[0]; };
    double uni_worst = 0.0;
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> logits(4 * 40);
      for (auto& x : logits) x = 8.0 * (rng.uniform01() - 0.5);
      std::vector<int> targets;
      for (int k = 0; k < 4; ++k) {
        int id;
        do id = static_cast<int>(rng.uniform_below(40)); while (index.class_of(id) != nullptr);
        targets.push_back(id);
      }
      Graph<double> g;
      const Var l = g.constant(Tensor<double>({1, 4, 40}, logits));
      uni_worst = std::max(uni_worst, std::abs(scalar(g, uniformizer_loss(g, l, targets, index))));
    }
    Graph<double> g1;
    const Var flat = g1.constant(Tensor<double>({1, 3, 40}, std::vector<double>(120, 0.25)));
    const double ce = scalar(g1, lm_loss_label_smoothed(g1, flat, {5, 30, 2}, {1, 1, 1}, 0.02));
    Graph<double> g2;
    const Var half = g2.constant(Tensor<double>({1, 1, 1}, std::vector<double>{0.5}));
    const double bce = scalar(g2, aux_loss_bce(g2, half, std::vector<double>{0.5}, {1}));
    const bool pass = uni_worst == 0.0 && std::abs(ce - std::log(40.0)) <= 1e-5 &&
                      std::abs(bce - std::log(2.0)) <= 1e-5;
    report(12, pass,
           "uniformizer on adjective-free targets " + fmt(uni_worst, 6) + " (= 0); uniform CE " +
               fmt(ce, 6) + " vs ln 40 = " + fmt(std::log(40.0), 6) + "; BCE(0.5, 0.5) " +
               fmt(bce, 6) + " vs ln 2 = " + fmt(std::log(2.0), 6));
  }

  std::cout << '\n' << (12 - failures) << " of 12 criteria passed (" << fmt(seconds_since(t_start), 1)
            << " s)\n";
  return failures == 0 ? 0 : 1;
}

#include "semfuse/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "semfuse/errors.hpp"

namespace semfuse {

static_assert(std::endian::native == std::endian::little,
              "CE log IO assumes a little-endian host");

TeacherForced teacher_forced(LanguageModel<float>& model,
                             const EncodedCorpus& corpus, int batch_size) {
  if (corpus.size() == 0) throw DataError("evaluation: empty split");
  const bool fusion = model.config().variant == Variant::kFusion;
  TeacherForced result;
  result.has_semantics = fusion;
  std::vector<int> indices;
  for (int start = 0; start < corpus.size(); start += batch_size) {
    const int stop = std::min(corpus.size(), start + batch_size);
    indices.resize(static_cast<std::size_t>(stop - start));
    std::iota(indices.begin(), indices.end(), start);
    const auto batch = make_batch<float>(corpus, indices, fusion);
    Graph<float> g;
    const auto out = model.forward(g, batch.input, Mode::kEval);
    const auto& logits = g.value(out.logits);
    const int v = logits.cols();
    const int len = batch.input.length;
    for (int b = 0; b < batch.input.batch; ++b) {
      for (int t = 0; t < len; ++t) {
        const auto k = static_cast<std::size_t>(b * len + t);
        if (!batch.target_mask[k]) continue;
        const float* row = logits.data.data() + k * static_cast<std::size_t>(v);
        double mx = row[0];
        for (int i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(row[i]));
        double z = 0.0;
        for (int i = 0; i < v; ++i) z += std::exp(static_cast<double>(row[i]) - mx);
        const double ce = std::log(z) + mx - static_cast<double>(row[batch.targets[k]]);
        result.log.push_back({batch.sentence_index[static_cast<std::size_t>(b)], t,
                              batch.targets[k], static_cast<float>(ce)});
      }
    }
    if (fusion) {
      const auto& pred = g.value(out.aux);
      for (std::size_t k = 0; k < batch.input.mask.size(); ++k) {
        if (!batch.input.mask[k]) continue;
        for (int f = 0; f < kFeatureCount; ++f) {
          const auto i = k * kFeatureCount + static_cast<std::size_t>(f);
          const double d = static_cast<double>(pred[i]) -
                           static_cast<double>(batch.input.semantics[i]);
          result.sq_error_sum += d * d;
        }
        result.sq_error_count += kFeatureCount;
      }
    }
  }
  return result;
}

double perplexity(const std::vector<PositionCE>& log) {
  if (log.empty()) throw DataError("perplexity: no target positions");
  double sum = 0.0;
  for (const auto& r : log) sum += static_cast<double>(r.ce);
  return std::exp(sum / static_cast<double>(log.size()));
}

double seen_only_perplexity(const std::vector<PositionCE>& log,
                            const std::vector<int>& heldout_ids) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& r : log) {
    if (std::find(heldout_ids.begin(), heldout_ids.end(), r.gold) != heldout_ids.end()) {
      continue;
    }
    sum += static_cast<double>(r.ce);
    ++count;
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::exp(sum / static_cast<double>(count));
}

double semantic_mse(const TeacherForced& tf) {
  if (!tf.has_semantics) {
    throw ConfigError("semantic MSE is undefined for the baseline (no auxiliary head)");
  }
  if (tf.sq_error_count == 0) throw DataError("semantic MSE: no positions");
  return tf.sq_error_sum / static_cast<double>(tf.sq_error_count);
}

std::vector<FocusCE> focus_ce(const std::vector<PositionCE>& log,
                              const std::vector<std::string>& tokens,
                              const Vocabulary& vocab) {
  std::vector<FocusCE> out;
  for (const auto& token : tokens) {
    const int id = vocab.id(token);
    FocusCE f;
    f.token = token;
    double sum = 0.0;
    for (const auto& r : log) {
      if (r.gold != id) continue;
      sum += static_cast<double>(r.ce);
      ++f.count;
    }
    if (f.count > 0) f.mean = sum / f.count;
    out.push_back(f);
  }
  return out;
}

const std::vector<std::string>& default_focus_tokens() {
  static const std::vector<std::string> tokens = {"good", "great", "terrible", "slightly",
                                                  "very", "!", "?", ","};
  return tokens;
}

void write_ce_log(const std::filesystem::path& path,
                  const std::vector<PositionCE>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : log) {
    out.write(reinterpret_cast<const char*>(&r.sentence), 4);
    out.write(reinterpret_cast<const char*>(&r.position), 4);
    out.write(reinterpret_cast<const char*>(&r.gold), 4);
    out.write(reinterpret_cast<const char*>(&r.ce), 4);
  }
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::vector<PositionCE> read_ce_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CE log '" + path.string() + "'");
  const auto bytes = std::filesystem::file_size(path);
  if (bytes % 16 != 0) throw DataError("CE log '" + path.string() + "' has a partial record");
  std::vector<PositionCE> log(bytes / 16);
  for (auto& r : log) {
    in.read(reinterpret_cast<char*>(&r.sentence), 4);
    in.read(reinterpret_cast<char*>(&r.position), 4);
    in.read(reinterpret_cast<char*>(&r.gold), 4);
    in.read(reinterpret_cast<char*>(&r.ce), 4);
  }
  if (!in) throw DataError("failed reading '" + path.string() + "'");
  return log;
}

std::string_view control_setting_name(ControlSetting s) {
  switch (s) {
    case ControlSetting::kPosHard: return "pos-hard";
    case ControlSetting::kNegQuestionHard: return "neg-question-hard";
    case ControlSetting::kPosSoft: return "pos-soft";
    case ControlSetting::kNegSoft: return "neg-soft";
  }
  return "?";
}

ControlSetting control_setting_from_name(std::string_view name) {
  for (auto s : all_control_settings()) {
    if (control_setting_name(s) == name) return s;
  }
  throw ConfigError("unknown control setting '" + std::string(name) + "'");
}

const std::array<ControlSetting, 4>& all_control_settings() {
  static const std::array<ControlSetting, 4> all = {
      ControlSetting::kPosHard, ControlSetting::kNegQuestionHard,
      ControlSetting::kPosSoft, ControlSetting::kNegSoft};
  return all;
}

ControlSpec control_spec(ControlSetting setting) {
  const bool pos = setting == ControlSetting::kPosHard || setting == ControlSetting::kPosSoft;
  const bool hard = setting == ControlSetting::kPosHard ||
                    setting == ControlSetting::kNegQuestionHard;
  const auto& preset = decode_preset(pos ? "pos-strong" : "neg-question");
  ControlSpec spec{preset.controls, preset.config, pos ? 1 : -1, pos ? "!" : "?"};
  if (!hard) {
    spec.controls.hard_polarity = HardPolarity::kNone;
    spec.controls.hard_punct.clear();
    if (pos) spec.controls.is_exclaim = 1.0;
  }
  return spec;
}

ControlResult control_eval(LanguageModel<float>& model, const Grammar& grammar,
                           const Lexicon& lexicon, ControlSetting setting,
                           const ControlSpec& spec, int n, const Rng& rng) {
  if (n < 1) throw ConfigError("control_eval: N must be >= 1");
  const auto& classes = grammar.classes();
  const int punct_id = grammar.vocab().id(spec.punct);
  ControlResult result;
  result.setting = setting;
  result.n = n;
  for (int i = 0; i < n; ++i) {
    Rng run = rng.split(static_cast<std::uint64_t>(i));
    const auto gen = generate(model, grammar, lexicon, spec.controls, spec.config, {}, run);
    const int adjective = gen.ids[static_cast<std::size_t>(static_cast<int>(GrammarState::kAdj))];
    const int realized = classes.polarity(adjective);
    if (realized > 0) {
      ++result.confusion[0];
    } else if (realized < 0) {
      ++result.confusion[1];
    } else {
      ++result.confusion[2];
    }
    if (realized == spec.polarity) {
      ++result.adjective_correct;
      if (classes.is_heldout(adjective)) ++result.ood_hits;
    }
    if (gen.ids.back() == punct_id) ++result.punct_correct;
  }
  return result;
}

nlohmann::json to_json(const ControlResult& r) {
  return {{"setting", std::string(control_setting_name(r.setting))},
          {"n", r.n},
          {"adjective_accuracy", r.adjective_accuracy()},
          {"adjective_correct", r.adjective_correct},
          {"punct_accuracy", r.punct_accuracy()},
          {"punct_correct", r.punct_correct},
          {"confusion", {{"pos", r.confusion[0]}, {"neg", r.confusion[1]}, {"other", r.confusion[2]}}},
          {"ood_hit_rate", r.ood_rate()},
          {"ood_hits", r.ood_hits}};
}

nlohmann::json to_json(const EvalReport& r) {
  auto number_or_null = [](double x) -> nlohmann::json {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["variant"] = r.variant;
  j["ppl"] = number_or_null(r.ppl);
  j["ppl_seen_only"] = number_or_null(r.ppl_seen_only);
  j["sem_mse"] = r.sem_mse ? nlohmann::json(*r.sem_mse) : nlohmann::json(nullptr);
  nlohmann::json focus = nlohmann::json::array();
  for (const auto& f : r.focus) {
    focus.push_back({{"token", f.token},
                     {"count", f.count},
                     {"mean_ce", f.mean ? nlohmann::json(*f.mean) : nlohmann::json(nullptr)},
                     {"absent", !f.mean.has_value()}});
  }
  j["focus_ce"] = focus;
  nlohmann::json control = nlohmann::json::array();
  for (const auto& c : r.control) control.push_back(to_json(c));
  j["control"] = control;
  j["curve"] = r.curve;
  j["notes"] = r.notes;
  return j;
}

void print_confusion(std::ostream& out, const ControlResult& pos,
                     const ControlResult& neg) {
  auto cell = [](int count, int n) {
    std::ostringstream s;
    s << count << " (" << std::fixed << std::setprecision(2)
      << (n ? static_cast<double>(count) / n : 0.0) << ")";
    return s.str();
  };
  out << std::left << std::setw(14) << "intended" << std::setw(14) << "POS"
      << std::setw(14) << "NEG" << "OTHER\n";
  for (const auto* r : {&pos, &neg}) {
    out << std::setw(14) << (r == &pos ? "POS" : "NEG")
        << std::setw(14) << cell(r->confusion[0], r->n)
        << std::setw(14) << cell(r->confusion[1], r->n)
        << cell(r->confusion[2], r->n) << '\n';
  }
}

}  // namespace semfuse

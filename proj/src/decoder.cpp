#include "semfuse/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "semfuse/errors.hpp"
#include "semfuse/semantics.hpp"

namespace semfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Softmax over finite entries of logits / T; masked entries get 0.
std::vector<double> tempered_softmax(std::span<const double> logits, double temperature) {
  double mx = kNegInf;
  for (double x : logits) mx = std::max(mx, x);
  if (!std::isfinite(mx)) throw NumericError("sampling: every candidate is masked");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (std::isfinite(logits[i])) {
      p[i] = std::exp((logits[i] - mx) / temperature);
      z += p[i];
    }
  }
  for (double& x : p) x /= z;
  return p;
}

// Descending by probability, ties to the lower index.
std::vector<int> ranked(std::span<const double> probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  return order;
}

// Draws an index from the renormalized mass of `keep` (in the given order).
int draw(std::span<const double> probs, const std::vector<int>& keep, Rng& rng) {
  double total = 0.0;
  for (int i : keep) total += probs[static_cast<std::size_t>(i)];
  const double u = rng.uniform01() * total;
  double acc = 0.0;
  for (int i : keep) {
    acc += probs[static_cast<std::size_t>(i)];
    if (u < acc) return i;
  }
  return keep.back();
}

}  // namespace

std::string_view state_name(GrammarState s) {
  switch (s) {
    case GrammarState::kSubj: return "SUBJ";
    case GrammarState::kVerb: return "VERB";
    case GrammarState::kThe: return "THE";
    case GrammarState::kObj: return "OBJ";
    case GrammarState::kComma: return "COMMA";
    case GrammarState::kIntens: return "INTENS";
    case GrammarState::kAdj: return "ADJ";
    case GrammarState::kPunct: return "PUNCT";
    case GrammarState::kDone: return "DONE";
  }
  return "?";
}

std::string_view hard_polarity_name(HardPolarity p) {
  switch (p) {
    case HardPolarity::kPos: return "pos";
    case HardPolarity::kNeg: return "neg";
    case HardPolarity::kNone: break;
  }
  return "none";
}

HardPolarity hard_polarity_from_name(std::string_view name) {
  if (name == "pos") return HardPolarity::kPos;
  if (name == "neg") return HardPolarity::kNeg;
  if (name == "none" || name.empty()) return HardPolarity::kNone;
  throw ConfigError("hard_polarity must be pos, neg or none, got '" + std::string(name) + "'");
}

void ControlVector::set(std::string_view name, double value) {
  double* slot = nullptr;
  if (name == "pos_low") slot = &pos_low;
  else if (name == "pos_med") slot = &pos_med;
  else if (name == "pos_high") slot = &pos_high;
  else if (name == "neg_low") slot = &neg_low;
  else if (name == "neg_med") slot = &neg_med;
  else if (name == "neg_high") slot = &neg_high;
  else if (name == "str_low") slot = &str_low;
  else if (name == "str_med") slot = &str_med;
  else if (name == "str_high") slot = &str_high;
  else if (name == "is_question") slot = &is_question;
  else if (name == "is_exclaim") slot = &is_exclaim;
  if (slot == nullptr) throw ConfigError("unknown control '" + std::string(name) + "'");
  *slot = value;
}

void ControlVector::validate() const {
  for (double v : {pos_low, pos_med, pos_high, neg_low, neg_med, neg_high, str_low,
                   str_med, str_high, is_question, is_exclaim}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("controls must lie in [0, 1]");
  }
  if (!hard_punct.empty() && hard_punct != "." && hard_punct != "!" && hard_punct != "?") {
    throw ConfigError("hard_punct must be '.', '!', '?' or none, got '" + hard_punct + "'");
  }
}

void DecodeConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("decode: temperature must be positive");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("decode: rho must lie in (0, 1]");
  if (top_k < 0) throw ConfigError("decode: top_k must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("decode: alpha must lie in [0, 1]");
  if (rep_window < 0) throw ConfigError("decode: rep_window must be >= 0");
  if (!(rep_factor >= 1.0)) throw ConfigError("decode: rep_factor must be >= 1");
  if (!(beta >= 0.0)) throw ConfigError("decode: beta must be >= 0");
}

const std::vector<DecodePreset>& decode_presets() {
  static const std::vector<DecodePreset> presets = [] {
    std::vector<DecodePreset> out;
    {
      DecodePreset p{"neutral", {}, {}};
      p.config.temperature = 0.7;
      p.config.rho = 0.9;
      p.config.rep_factor = 1.5;
      out.push_back(p);
    }
    {
      DecodePreset p{"pos-strong", {}, {}};
      p.controls.pos_high = 0.95;
      p.controls.str_high = 0.9;
      p.controls.hard_polarity = HardPolarity::kPos;
      p.controls.hard_punct = "!";
      p.config.temperature = 1.5;
      p.config.rho = 1.0;
      p.config.alpha = 0.97;
      p.config.rep_factor = 1.5;
      out.push_back(p);
    }
    {
      DecodePreset p{"neg-question", {}, {}};
      p.controls.neg_high = 0.95;
      p.controls.is_question = 1.0;
      p.controls.str_med = 0.6;
      p.controls.hard_polarity = HardPolarity::kNeg;
      p.controls.hard_punct = "?";
      p.config.temperature = 1.3;
      p.config.rho = 0.95;
      p.config.alpha = 0.85;
      p.config.rep_factor = 1.5;
      out.push_back(p);
    }
    {
      DecodePreset p{"baseline-fair", {}, {}};
      p.config.temperature = 0.7;
      p.config.rho = 0.9;
      p.config.top_k = 20;
      p.config.rep_factor = 2.5;
      p.config.beta = 0.0;
      out.push_back(p);
    }
    return out;
  }();
  return presets;
}

const DecodePreset& decode_preset(std::string_view name) {
  for (const auto& p : decode_presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown preset '" + std::string(name) +
                    "' (neutral, pos-strong, neg-question, baseline-fair)");
}

std::string apply_control_json(const nlohmann::json& j, ControlVector& controls,
                               DecodeConfig& config) {
  if (!j.is_object()) throw ConfigError("control file: expected a JSON object");
  std::string prefix;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "controls") {
        for (const auto& [name, v] : value.items()) controls.set(name, v.get<double>());
      } else if (key == "hard_polarity") {
        controls.hard_polarity = hard_polarity_from_name(value.get<std::string>());
      } else if (key == "hard_punct") {
        const auto p = value.get<std::string>();
        controls.hard_punct = p == "none" ? "" : p;
      } else if (key == "T") {
        config.temperature = value.get<double>();
      } else if (key == "rho") {
        config.rho = value.get<double>();
      } else if (key == "alpha") {
        config.alpha = value.get<double>();
      } else if (key == "top_k") {
        config.top_k = value.get<int>();
      } else if (key == "rep_factor") {
        config.rep_factor = value.get<double>();
      } else if (key == "beta") {
        config.beta = value.get<double>();
      } else if (key == "seed") {
        config.seed = value.get<std::uint64_t>();
      } else if (key == "prefix") {
        prefix = value.get<std::string>();
      } else {
        throw ConfigError("control file: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("control file: ") + e.what());
  }
  controls.validate();
  config.validate();
  return prefix;
}

Grammar::Grammar(const TokenClasses& classes, const Vocabulary& vocab)
    : classes_(classes), vocab_(vocab) {}

std::vector<int> Grammar::allowed(GrammarState state,
                                  const ControlVector& controls) const {
  std::vector<int> out;
  switch (state) {
    case GrammarState::kSubj: out = classes_.subjects; break;
    case GrammarState::kVerb: out = classes_.verbs; break;
    case GrammarState::kThe: out = {classes_.article}; break;
    case GrammarState::kObj: out = classes_.objects; break;
    case GrammarState::kComma: out = {classes_.comma}; break;
    case GrammarState::kIntens: out = classes_.intensifiers; break;
    case GrammarState::kAdj:
      if (controls.hard_polarity == HardPolarity::kPos) {
        out = classes_.positive_adjectives;
      } else if (controls.hard_polarity == HardPolarity::kNeg) {
        out = classes_.negative_adjectives;
      } else {
        out = classes_.positive_adjectives;
        out.insert(out.end(), classes_.negative_adjectives.begin(),
                   classes_.negative_adjectives.end());
      }
      break;
    case GrammarState::kPunct:
      if (!controls.hard_punct.empty()) {
        out = {vocab_.id(controls.hard_punct)};
      } else {
        out = classes_.end_punctuation;
      }
      break;
    case GrammarState::kDone:
      throw GrammarError("grammar: no tokens are allowed after the clause is complete", 0);
  }
  std::sort(out.begin(), out.end());
  return out;
}

GrammarState Grammar::advance(GrammarState state, int token,
                              const ControlVector& controls) const {
  const auto ok = allowed(state, controls);
  if (!std::binary_search(ok.begin(), ok.end(), token)) {
    const std::string word =
        token >= 0 && token < vocab_.size() ? vocab_.token(token) : std::to_string(token);
    throw GrammarError("grammar: '" + word + "' is not allowed at " +
                           std::string(state_name(state)),
                       0);
  }
  return static_cast<GrammarState>(static_cast<int>(state) + 1);
}

GrammarState Grammar::validate_prefix(std::span<const int> tokens) const {
  GrammarState state = GrammarState::kSubj;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int position = static_cast<int>(i) + 1;
    try {
      state = advance(state, tokens[i]);
    } catch (const GrammarError& e) {
      throw GrammarError(std::string(e.what()) + " (position " +
                             std::to_string(position) + ")",
                         position);
    }
  }
  return state;
}

GrammarState Grammar::validate_prefix(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab_.contains(tokens[i])) {
      const int position = static_cast<int>(i) + 1;
      throw GrammarError("grammar: unknown token '" + tokens[i] + "' (position " +
                             std::to_string(position) + ")",
                         position);
    }
    ids.push_back(vocab_.id(tokens[i]));
  }
  return validate_prefix(std::span<const int>(ids));
}

int strength_tier(double strength) {
  if (strength < 0.35) return 0;
  if (strength < 0.65) return 1;
  return 2;
}

void steer_logits(GrammarState state, std::span<double> logits,
                  const ControlVector& controls, double beta,
                  const TokenClasses& classes) {
  auto shift = [&](int id, double amount) {
    if (amount != 0.0) logits[static_cast<std::size_t>(id)] += amount;
  };
  switch (state) {
    case GrammarState::kAdj: {
      const double pos = controls.pos_high + 0.6 * controls.pos_med + 0.2 * controls.pos_low;
      const double neg = controls.neg_high + 0.6 * controls.neg_med + 0.2 * controls.neg_low;
      for (int id : classes.positive_adjectives) shift(id, beta * pos);
      for (int id : classes.negative_adjectives) shift(id, beta * neg);
      break;
    }
    case GrammarState::kPunct:
      shift(classes.question, beta * controls.is_question);
      shift(classes.exclaim, beta * controls.is_exclaim);
      break;
    case GrammarState::kIntens: {
      const double tiers[3] = {controls.str_low, controls.str_med, controls.str_high};
      for (std::size_t i = 0; i < classes.intensifiers.size(); ++i) {
        shift(classes.intensifiers[i],
              beta * tiers[strength_tier(classes.intensifier_strength[i])]);
      }
      break;
    }
    default:
      break;
  }
}

void repetition_penalty(std::span<double> logits, std::span<const int> recent,
                        double factor) {
  std::vector<int> seen;
  for (int id : recent) {
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) continue;
    seen.push_back(id);
    double& x = logits[static_cast<std::size_t>(id)];
    x = x > 0.0 ? x / factor : x * factor;
  }
}

std::vector<int> nucleus(std::span<const double> probs, double rho) {
  const auto order = ranked(probs);
  std::vector<int> keep;
  double acc = 0.0;
  for (int i : order) {
    if (probs[static_cast<std::size_t>(i)] <= 0.0) break;
    keep.push_back(i);
    acc += probs[static_cast<std::size_t>(i)];
    // Relative slack absorbs rounding in the running sum when rho = 1.
    if (acc >= rho - 1e-12) break;
  }
  return keep;
}

std::vector<double> mixture_distribution(std::span<const double> logits,
                                         std::span<const int> class_ids,
                                         double temperature, double alpha) {
  if (class_ids.empty()) throw ConfigError("mixture: empty class");
  if (!(temperature > 0.0)) throw ConfigError("mixture: temperature must be positive");
  std::vector<double> restricted;
  restricted.reserve(class_ids.size());
  for (int id : class_ids) restricted.push_back(logits[static_cast<std::size_t>(id)]);
  auto q = tempered_softmax(restricted, temperature);
  const double u = 1.0 / static_cast<double>(class_ids.size());
  for (double& x : q) x = (1.0 - alpha) * x + alpha * u;
  return q;
}

int class_mixture_sample(std::span<const double> logits,
                         std::span<const int> class_ids, double temperature,
                         double alpha, double rho, Rng& rng) {
  const auto q = mixture_distribution(logits, class_ids, temperature, alpha);
  // Ties in q are broken by the lower token id, so rank in id order.
  std::vector<int> by_id(class_ids.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](int a, int b) {
    return class_ids[static_cast<std::size_t>(a)] < class_ids[static_cast<std::size_t>(b)];
  });
  std::vector<double> q_by_id;
  for (int i : by_id) q_by_id.push_back(q[static_cast<std::size_t>(i)]);
  const auto keep = nucleus(q_by_id, rho);
  const int pick = draw(q_by_id, keep, rng);
  return class_ids[static_cast<std::size_t>(by_id[static_cast<std::size_t>(pick)])];
}

int sample_standard(std::span<const double> logits, double temperature,
                    int top_k, double rho, Rng& rng) {
  auto p = tempered_softmax(logits, temperature);
  if (top_k > 0) {
    const auto order = ranked(p);
    for (std::size_t r = static_cast<std::size_t>(top_k); r < order.size(); ++r) {
      p[static_cast<std::size_t>(order[r])] = 0.0;
    }
    const double z = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= z;
  }
  return draw(p, nucleus(p, rho), rng);
}

Generation generate(LanguageModel<float>& model, const Grammar& grammar,
                    const Lexicon& lexicon, const ControlVector& controls,
                    const DecodeConfig& config, std::span<const int> prefix,
                    Rng& rng) {
  controls.validate();
  config.validate();
  const auto& classes = grammar.classes();
  const auto& vocab = grammar.vocab();
  const bool fusion = model.config().variant == Variant::kFusion;
  GrammarState state = grammar.validate_prefix(prefix);

  std::vector<int> ids{Vocabulary::kBos};
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  std::vector<double> logits(static_cast<std::size_t>(vocab.size()));
  while (state != GrammarState::kDone) {
    const auto allowed = grammar.allowed(state, controls);
    int token = -1;
    if (state == GrammarState::kPunct && !controls.hard_punct.empty()) {
      token = allowed.front();
    } else {
      if (static_cast<int>(ids.size()) > model.config().max_len) {
        throw DataError("generate: sequence exceeds max_len");
      }
      ModelInput<float> input;
      input.batch = 1;
      input.length = static_cast<int>(ids.size());
      input.ids = ids;
      input.mask.assign(ids.size(), 1);
      if (fusion) {
        const auto s = annotate_ids(ids, lexicon, vocab);
        input.semantics.assign(s.values().begin(), s.values().end());
      }
      Graph<float> g;
      const auto out = model.forward(g, input, Mode::kEval);
      const auto& lv = g.value(out.logits);
      const std::size_t last = (ids.size() - 1) * logits.size();
      std::fill(logits.begin(), logits.end(), kNegInf);
      for (int id : allowed) {
        logits[static_cast<std::size_t>(id)] =
            static_cast<double>(lv[last + static_cast<std::size_t>(id)]);
      }
      steer_logits(state, logits, controls, config.beta, classes);
      const std::size_t body = ids.size() - 1;
      const std::size_t window = std::min(body, static_cast<std::size_t>(config.rep_window));
      repetition_penalty(logits, std::span<const int>(ids).subspan(ids.size() - window),
                         config.rep_factor);
      if (state == GrammarState::kAdj && controls.hard_polarity != HardPolarity::kNone) {
        token = class_mixture_sample(logits, allowed, config.temperature, config.alpha,
                                     config.rho, rng);
      } else {
        token = sample_standard(logits, config.temperature, config.top_k, config.rho, rng);
      }
    }
    state = grammar.advance(state, token, controls);
    ids.push_back(token);
  }

  Generation gen;
  gen.ids.assign(ids.begin() + 1, ids.end());
  for (int id : gen.ids) gen.tokens.push_back(vocab.token(id));
  std::ostringstream text;
  for (std::size_t i = 0; i < gen.tokens.size(); ++i) {
    if (i > 0) text << ' ';
    text << gen.tokens[i];
  }
  gen.text = text.str();
  return gen;
}

std::vector<int> parse_prefix(std::string_view text, const Grammar& grammar) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> tokens;
  for (std::string w; in >> w;) {
    // "model," is accepted as "model ,".
    if (w.size() > 1 && w.back() == ',') {
      tokens.push_back(w.substr(0, w.size() - 1));
      tokens.emplace_back(",");
    } else {
      tokens.push_back(w);
    }
  }
  grammar.validate_prefix(tokens);
  std::vector<int> ids;
  for (const auto& t : tokens) ids.push_back(grammar.vocab().id(t));
  return ids;
}

}  // namespace semfuse

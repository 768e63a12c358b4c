#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "semfuse/lexicon.hpp"
#include "semfuse/model.hpp"
#include "semfuse/rng.hpp"

namespace semfuse {

// One-clause decoding chain: SUBJ VERB the OBJ , INTENS ADJ PUNCT.
enum class GrammarState { kSubj, kVerb, kThe, kObj, kComma, kIntens, kAdj, kPunct, kDone };

std::string_view state_name(GrammarState s);

enum class HardPolarity { kNone, kPos, kNeg };

std::string_view hard_polarity_name(HardPolarity p);
HardPolarity hard_polarity_from_name(std::string_view name);

struct ControlVector {
  double pos_low = 0.0, pos_med = 0.0, pos_high = 0.0;
  double neg_low = 0.0, neg_med = 0.0, neg_high = 0.0;
  double str_low = 0.0, str_med = 0.0, str_high = 0.0;
  double is_question = 0.0;
  double is_exclaim = 0.0;
  HardPolarity hard_polarity = HardPolarity::kNone;
  std::string hard_punct;  // "", ".", "!" or "?"

  // Sets a scalar control by name. Throws ConfigError for unknown names.
  void set(std::string_view name, double value);
  // Throws ConfigError when a scalar lies outside [0, 1] or hard_punct is not
  // an end mark.
  void validate() const;
};

struct DecodeConfig {
  double temperature = 0.7;
  double rho = 0.9;        // nucleus threshold
  int top_k = 0;           // 0 disables top-k
  double alpha = 0.0;      // uniform mixture weight under hard polarity
  int rep_window = 3;
  double rep_factor = 1.5;
  double beta = 4.0;       // steer strength
  std::uint64_t seed = 0;

  void validate() const;
};

struct DecodePreset {
  std::string name;
  ControlVector controls;
  DecodeConfig config;
};

// neutral, pos-strong, neg-question, baseline-fair.
const std::vector<DecodePreset>& decode_presets();
// Throws ConfigError for unknown names.
const DecodePreset& decode_preset(std::string_view name);

// Parses a control file {"controls": {...}, "hard_polarity", "hard_punct",
// "T", "rho", "alpha", "top_k", "rep_factor", "beta", "seed", "prefix"} on top
// of `base`. Returns the prefix text ("" when absent).
std::string apply_control_json(const nlohmann::json& j, ControlVector& controls,
                               DecodeConfig& config);

class Grammar {
 public:
  Grammar(const TokenClasses& classes, const Vocabulary& vocab);

  // Allowed next tokens, sorted by id. Hard controls narrow ADJ and PUNCT.
  // Throws GrammarError at DONE.
  std::vector<int> allowed(GrammarState state,
                           const ControlVector& controls = {}) const;
  // Throws GrammarError when `token` is not allowed in `state`.
  GrammarState advance(GrammarState state, int token,
                       const ControlVector& controls = {}) const;
  // Folds advance() from SUBJ. Errors carry the 1-based failing position.
  GrammarState validate_prefix(std::span<const int> tokens) const;
  GrammarState validate_prefix(const std::vector<std::string>& tokens) const;

  const TokenClasses& classes() const { return classes_; }
  const Vocabulary& vocab() const { return vocab_; }

 private:
  TokenClasses classes_;
  Vocabulary vocab_;
};

// Intensity tier of an intensifier strength: 0 low, 1 med, 2 high.
int strength_tier(double strength);

// State-aware additive steering (in place). Masked (-inf) entries stay masked.
void steer_logits(GrammarState state, std::span<double> logits,
                  const ControlVector& controls, double beta,
                  const TokenClasses& classes);

// For each distinct id among `recent`: positive logits are divided by
// `factor`, non-positive ones multiplied.
void repetition_penalty(std::span<double> logits, std::span<const int> recent,
                        double factor);

// Indices of the nucleus of `probs`: the shortest prefix in descending order
// (ties to the lower index) whose cumulative mass reaches rho.
std::vector<int> nucleus(std::span<const double> probs, double rho);

// Mixture q = (1 - alpha) softmax(logits[class] / T) + alpha / |class|,
// in class order.
std::vector<double> mixture_distribution(std::span<const double> logits,
                                         std::span<const int> class_ids,
                                         double temperature, double alpha);

// Samples from nucleus(q) renormalized. One uniform draw.
int class_mixture_sample(std::span<const double> logits,
                         std::span<const int> class_ids, double temperature,
                         double alpha, double rho, Rng& rng);

// Temperature softmax over finite logits, optional top-k, then nucleus.
// One uniform draw.
int sample_standard(std::span<const double> logits, double temperature,
                    int top_k, double rho, Rng& rng);

struct Generation {
  std::vector<int> ids;  // prefix + generated tokens, without <bos>
  std::vector<std::string> tokens;
  std::string text;      // tokens joined with spaces
};

// Grammar-constrained generation of one clause. Per step: forward pass on the
// realized prefix (fusion: semantic matrix recomputed from the prefix), then
// mask, steer, repetition penalty and sampling. Under hard polarity the ADJ
// step samples from the class mixture; under hard punctuation the PUNCT step
// emits the requested mark without a draw.
Generation generate(LanguageModel<float>& model, const Grammar& grammar,
                    const Lexicon& lexicon, const ControlVector& controls,
                    const DecodeConfig& config, std::span<const int> prefix,
                    Rng& rng);

// Whitespace tokenization of a prompt, validated against the grammar.
std::vector<int> parse_prefix(std::string_view text, const Grammar& grammar);

}  // namespace semfuse

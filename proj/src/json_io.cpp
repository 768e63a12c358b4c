#include "semfuse/json_io.hpp"

#include <algorithm>

namespace semfuse {

void require_known_keys(const nlohmann::json& j, std::string_view what,
                        std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    throw ConfigError(std::string(what) + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

void to_json(nlohmann::json& j, const Intensifier& x) {
  j = nlohmann::json{{"word", x.word}, {"strength", x.strength}};
}

void from_json(const nlohmann::json& j, Intensifier& x) {
  require_known_keys(j, "intensifier", {"word", "strength"});
  j.at("word").get_to(x.word);
  j.at("strength").get_to(x.strength);
}

void to_json(nlohmann::json& j, const Lexicon& x) {
  j = nlohmann::json{
      {"subjects", x.subjects},
      {"subject_pronouns", x.subject_pronouns},
      {"verbs", x.verbs},
      {"objects", x.objects},
      {"intensifiers", x.intensifiers},
      {"positive_adjectives", x.positive_adjectives},
      {"negative_adjectives", x.negative_adjectives},
      {"heldout_positive", x.heldout_positive},
      {"heldout_negative", x.heldout_negative},
      {"pronouns", x.pronouns},
      {"article", x.article},
      {"comma", x.comma},
      {"end_punctuation", x.end_punctuation},
  };
}

// Missing keys keep the standard lexicon's value, so overrides may be partial.
void from_json(const nlohmann::json& j, Lexicon& x) {
  require_known_keys(j, "lexicon",
                     {"subjects", "subject_pronouns", "verbs", "objects",
                      "intensifiers", "positive_adjectives",
                      "negative_adjectives", "heldout_positive",
                      "heldout_negative", "pronouns", "article", "comma",
                      "end_punctuation"});
  x = Lexicon::standard();
  read_optional(j, "subjects", x.subjects);
  read_optional(j, "subject_pronouns", x.subject_pronouns);
  read_optional(j, "verbs", x.verbs);
  read_optional(j, "objects", x.objects);
  read_optional(j, "intensifiers", x.intensifiers);
  read_optional(j, "positive_adjectives", x.positive_adjectives);
  read_optional(j, "negative_adjectives", x.negative_adjectives);
  read_optional(j, "heldout_positive", x.heldout_positive);
  read_optional(j, "heldout_negative", x.heldout_negative);
  read_optional(j, "pronouns", x.pronouns);
  read_optional(j, "article", x.article);
  read_optional(j, "comma", x.comma);
  read_optional(j, "end_punctuation", x.end_punctuation);
  x.validate();
}

void to_json(nlohmann::json& j, const CorpusOptions& x) {
  j = nlohmann::json{{"two_clause_prob", x.two_clause_prob},
                     {"punct_probs", x.punct_probs},
                     {"they_prob", x.they_prob},
                     {"max_len", x.max_len}};
}

void from_json(const nlohmann::json& j, CorpusOptions& x) {
  require_known_keys(j, "corpus options",
                     {"two_clause_prob", "punct_probs", "they_prob", "max_len"});
  read_optional(j, "two_clause_prob", x.two_clause_prob);
  read_optional(j, "punct_probs", x.punct_probs);
  read_optional(j, "they_prob", x.they_prob);
  read_optional(j, "max_len", x.max_len);
}

void to_json(nlohmann::json& j, const ModelConfig& x) {
  j = nlohmann::json{{"d_model", x.d_model},
                     {"layers", x.layers},
                     {"heads", x.heads},
                     {"ffn", x.ffn},
                     {"dropout", x.dropout},
                     {"max_len", x.max_len},
                     {"vocab_size", x.vocab_size},
                     {"features", x.features},
                     {"variant", std::string(variant_name(x.variant))}};
}

void from_json(const nlohmann::json& j, ModelConfig& x) {
  require_known_keys(j, "model config",
                     {"d_model", "layers", "heads", "ffn", "dropout", "max_len",
                      "vocab_size", "features", "variant"});
  read_optional(j, "d_model", x.d_model);
  read_optional(j, "layers", x.layers);
  read_optional(j, "heads", x.heads);
  read_optional(j, "ffn", x.ffn);
  read_optional(j, "dropout", x.dropout);
  read_optional(j, "max_len", x.max_len);
  read_optional(j, "vocab_size", x.vocab_size);
  read_optional(j, "features", x.features);
  if (auto it = j.find("variant"); it != j.end()) {
    x.variant = variant_from_name(it->get<std::string>());
  }
}

void to_json(nlohmann::json& j, const TrainConfig& x) {
  j = nlohmann::json{{"epochs", x.epochs},
                     {"batch", x.batch},
                     {"lr_peak", x.lr_peak},
                     {"weight_decay", x.weight_decay},
                     {"clip_norm", x.clip_norm},
                     {"label_smoothing", x.label_smoothing},
                     {"lambda_aux", x.lambda_aux},
                     {"lambda_uni", x.lambda_uni},
                     {"warmup_frac", x.warmup_frac},
                     {"beta1", x.beta1},
                     {"beta2", x.beta2},
                     {"adam_eps", x.adam_eps},
                     {"seed", x.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& x) {
  require_known_keys(j, "train config",
                     {"epochs", "batch", "lr_peak", "weight_decay", "clip_norm",
                      "label_smoothing", "lambda_aux", "lambda_uni", "warmup_frac",
                      "beta1", "beta2", "adam_eps", "seed"});
  read_optional(j, "epochs", x.epochs);
  read_optional(j, "batch", x.batch);
  read_optional(j, "lr_peak", x.lr_peak);
  read_optional(j, "weight_decay", x.weight_decay);
  read_optional(j, "clip_norm", x.clip_norm);
  read_optional(j, "label_smoothing", x.label_smoothing);
  read_optional(j, "lambda_aux", x.lambda_aux);
  read_optional(j, "lambda_uni", x.lambda_uni);
  read_optional(j, "warmup_frac", x.warmup_frac);
  read_optional(j, "beta1", x.beta1);
  read_optional(j, "beta2", x.beta2);
  read_optional(j, "adam_eps", x.adam_eps);
  read_optional(j, "seed", x.seed);
}

void to_json(nlohmann::json& j, const ControlVector& x) {
  j = nlohmann::json{{"controls",
                      {{"pos_low", x.pos_low},
                       {"pos_med", x.pos_med},
                       {"pos_high", x.pos_high},
                       {"neg_low", x.neg_low},
                       {"neg_med", x.neg_med},
                       {"neg_high", x.neg_high},
                       {"str_low", x.str_low},
                       {"str_med", x.str_med},
                       {"str_high", x.str_high},
                       {"is_question", x.is_question},
                       {"is_exclaim", x.is_exclaim}}},
                     {"hard_polarity", std::string(hard_polarity_name(x.hard_polarity))},
                     {"hard_punct", x.hard_punct.empty() ? std::string("none") : x.hard_punct}};
}

// Same key names as the control file.
void to_json(nlohmann::json& j, const DecodeConfig& x) {
  j = nlohmann::json{{"T", x.temperature}, {"rho", x.rho},
                     {"top_k", x.top_k},   {"alpha", x.alpha},
                     {"rep_window", x.rep_window}, {"rep_factor", x.rep_factor},
                     {"beta", x.beta},     {"seed", x.seed}};
}

void from_json(const nlohmann::json& j, DecodeConfig& x) {
  require_known_keys(j, "decode config",
                     {"T", "rho", "top_k", "alpha", "rep_window", "rep_factor", "beta", "seed"});
  read_optional(j, "T", x.temperature);
  read_optional(j, "rho", x.rho);
  read_optional(j, "top_k", x.top_k);
  read_optional(j, "alpha", x.alpha);
  read_optional(j, "rep_window", x.rep_window);
  read_optional(j, "rep_factor", x.rep_factor);
  read_optional(j, "beta", x.beta);
  read_optional(j, "seed", x.seed);
}

}  // namespace semfuse

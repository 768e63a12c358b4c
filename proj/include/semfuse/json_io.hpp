#pragma once

// nlohmann::json conversions for configuration types. Unknown keys are
// rejected so that typos in config files surface as ConfigError.

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "semfuse/corpus.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/lexicon.hpp"
#include "semfuse/model.hpp"
#include "semfuse/training.hpp"

namespace semfuse {

// Throws ConfigError if `j` has a key outside `allowed`.
void require_known_keys(const nlohmann::json& j, std::string_view what,
                        std::initializer_list<std::string_view> allowed);

// Reads j[key] into `out` when present.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void to_json(nlohmann::json& j, const Intensifier& x);
void from_json(const nlohmann::json& j, Intensifier& x);
void to_json(nlohmann::json& j, const Lexicon& x);
void from_json(const nlohmann::json& j, Lexicon& x);
void to_json(nlohmann::json& j, const CorpusOptions& x);
void from_json(const nlohmann::json& j, CorpusOptions& x);
void to_json(nlohmann::json& j, const ModelConfig& x);
void from_json(const nlohmann::json& j, ModelConfig& x);
void to_json(nlohmann::json& j, const TrainConfig& x);
void from_json(const nlohmann::json& j, TrainConfig& x);
void to_json(nlohmann::json& j, const ControlVector& x);
void to_json(nlohmann::json& j, const DecodeConfig& x);
void from_json(const nlohmann::json& j, DecodeConfig& x);

}  // namespace semfuse

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfuse/batch.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/model.hpp"

namespace semfuse {

// Next-token cross-entropy at one teacher-forced position.
struct PositionCE {
  std::int32_t sentence = 0;
  std::int32_t position = 0;  // index of the predicting token
  std::int32_t gold = 0;
  float ce = 0.0f;
};

struct TeacherForced {
  std::vector<PositionCE> log;  // non-pad targets, in corpus order
  bool has_semantics = false;
  double sq_error_sum = 0.0;    // sum of (s_hat - s)^2 over non-pad token-feature pairs
  std::int64_t sq_error_count = 0;
};

// Eval-mode pass over the corpus (no dropout, no label smoothing); the fusion
// model reads gold semantic matrices.
TeacherForced teacher_forced(LanguageModel<float>& model,
                             const EncodedCorpus& corpus, int batch_size = 128);

// exp(mean CE). Throws DataError on an empty log.
double perplexity(const std::vector<PositionCE>& log);

// exp of the mean CE over positions whose gold token is not held out; NaN when
// no such position exists.
double seen_only_perplexity(const std::vector<PositionCE>& log,
                            const std::vector<int>& heldout_ids);

// Throws ConfigError for a baseline pass (no auxiliary head).
double semantic_mse(const TeacherForced& tf);

struct FocusCE {
  std::string token;
  int count = 0;
  std::optional<double> mean;  // absent when the token never occurs as a target
};

std::vector<FocusCE> focus_ce(const std::vector<PositionCE>& log,
                              const std::vector<std::string>& tokens,
                              const Vocabulary& vocab);

const std::vector<std::string>& default_focus_tokens();

// Binary log: per record int32 sentence, int32 position, int32 gold, float32 ce
// (little endian).
void write_ce_log(const std::filesystem::path& path,
                  const std::vector<PositionCE>& log);
std::vector<PositionCE> read_ce_log(const std::filesystem::path& path);

enum class ControlSetting { kPosHard, kNegQuestionHard, kPosSoft, kNegSoft };

std::string_view control_setting_name(ControlSetting s);
ControlSetting control_setting_from_name(std::string_view name);
const std::array<ControlSetting, 4>& all_control_settings();

struct ControlSpec {
  ControlVector controls;
  DecodeConfig config;
  int polarity = 1;          // requested class
  std::string punct;         // requested end mark
};

// Hard settings are the pos-strong / neg-question presets. Soft settings keep
// their controls and sampling temperature but drop the hard restrictions and
// request the mark through is_exclaim / is_question steering instead.
ControlSpec control_spec(ControlSetting setting);

struct ControlResult {
  ControlSetting setting = ControlSetting::kPosHard;
  int n = 0;
  int adjective_correct = 0;
  int punct_correct = 0;
  std::array<int, 3> confusion{};  // realized POS, NEG, OTHER
  int ood_hits = 0;

  double adjective_accuracy() const { return n ? static_cast<double>(adjective_correct) / n : 0.0; }
  double punct_accuracy() const { return n ? static_cast<double>(punct_correct) / n : 0.0; }
  double ood_rate() const { return n ? static_cast<double>(ood_hits) / n : 0.0; }
};

// N independent generations, run i drawing from rng.split(i).
ControlResult control_eval(LanguageModel<float>& model, const Grammar& grammar,
                           const Lexicon& lexicon, ControlSetting setting,
                           const ControlSpec& spec, int n, const Rng& rng);

struct EvalReport {
  std::string variant;
  double ppl = 0.0;
  double ppl_seen_only = 0.0;
  std::optional<double> sem_mse;
  std::vector<FocusCE> focus;
  std::vector<ControlResult> control;
  std::vector<nlohmann::json> curve;
  nlohmann::json notes = nlohmann::json::object();
};

nlohmann::json to_json(const ControlResult& r);
nlohmann::json to_json(const EvalReport& r);

// Intended (rows POS/NEG) x realized (POS/NEG/OTHER) table.
void print_confusion(std::ostream& out, const ControlResult& pos,
                     const ControlResult& neg);

}  // namespace semfuse

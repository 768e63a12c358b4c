#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semfuse/batch.hpp"
#include "semfuse/corpus.hpp"
#include "semfuse/grad_check.hpp"
#include "semfuse/lexicon.hpp"
#include "semfuse/model.hpp"
#include "semfuse/training.hpp"

namespace semfuse {

// The unified configuration document. Every command writes the resolved copy
// next to its outputs.
struct RunConfig {
  Lexicon lexicon = Lexicon::standard();
  CorpusOptions corpus;
  std::uint64_t data_seed = 1;
  int n_train = 8000;
  int n_val = 1200;
  ModelConfig model;
  TrainConfig train;
  std::string out_dir = "runs/default";
};

nlohmann::json to_json(const RunConfig& config);
// Keys absent from `j` keep their value in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// Lexicon-derived lookups shared by the commands.
struct Workspace {
  Lexicon lexicon;
  Vocabulary vocab;
  TokenClasses classes;

  explicit Workspace(Lexicon lex);
};

// Model config for `variant` sized to the workspace vocabulary.
ModelConfig model_config_for(const RunConfig& config, const Workspace& ws,
                             Variant variant);

// Columns epoch,train_loss,val_ppl,val_ppl_seen_only,sem_mse, preceded by a
// variant column when `with_variant` is set. NaN is written as an empty field.
void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::vector<EpochRecord>>>& curves,
                     bool with_variant);

// Gradient check of the full training objective on a tiny fusion model
// (d=8, one layer, two heads), dropout off, on a small generated batch that
// contains adjective targets.
template <typename Real>
GradCheckResult tiny_model_grad_check(std::uint64_t seed, int coords, double h);

}  // namespace semfuse

#include "semfuse/pipeline.hpp"

#include <cmath>
#include <fstream>

#include "semfuse/errors.hpp"
#include "semfuse/json_io.hpp"

namespace semfuse {

nlohmann::json to_json(const RunConfig& config) {
  return {{"lexicon", config.lexicon},
          {"corpus", {{"seed", config.data_seed},
                      {"n_train", config.n_train},
                      {"n_val", config.n_val},
                      {"options", config.corpus}}},
          {"model", config.model},
          {"train", config.train},
          {"out_dir", config.out_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base) {
  require_known_keys(j, "run config", {"lexicon", "corpus", "model", "train", "out_dir"});
  try {
    if (j.contains("lexicon")) base.lexicon = j.at("lexicon").get<Lexicon>();
    if (j.contains("corpus")) {
      const auto& c = j.at("corpus");
      require_known_keys(c, "corpus", {"seed", "n_train", "n_val", "options"});
      read_optional(c, "seed", base.data_seed);
      read_optional(c, "n_train", base.n_train);
      read_optional(c, "n_val", base.n_val);
      if (c.contains("options")) from_json(c.at("options"), base.corpus);
    }
    if (j.contains("model")) from_json(j.at("model"), base.model);
    if (j.contains("train")) from_json(j.at("train"), base.train);
    read_optional(j, "out_dir", base.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::vector<EpochRecord>>>& curves,
                     bool with_variant) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  auto field = [&out](double x) {
    out << ',';
    if (std::isfinite(x)) out << x;
  };
  out.precision(8);
  if (with_variant) out << "variant,";
  out << "epoch,train_loss,val_ppl,val_ppl_seen_only,sem_mse\n";
  for (const auto& [variant, curve] : curves) {
    for (const auto& r : curve) {
      if (with_variant) out << variant << ',';
      out << r.epoch;
      field(r.train_loss);
      field(r.val_ppl);
      field(r.val_ppl_seen_only);
      field(r.sem_mse);
      out << '\n';
    }
  }
}

Workspace::Workspace(Lexicon lex)
    : lexicon(std::move(lex)), vocab(lexicon), classes(lexicon, vocab) {}

ModelConfig model_config_for(const RunConfig& config, const Workspace& ws,
                             Variant variant) {
  ModelConfig m = config.model;
  m.vocab_size = ws.vocab.size();
  m.features = kFeatureCount;
  m.max_len = config.corpus.max_len;
  m.variant = variant;
  return m;
}

template <typename Real>
GradCheckResult tiny_model_grad_check(std::uint64_t seed, int coords, double h) {
  const Workspace ws(Lexicon::standard());
  ModelConfig mc;
  mc.d_model = 8;
  mc.layers = 1;
  mc.heads = 2;
  mc.ffn = 16;
  mc.dropout = 0.0;
  mc.vocab_size = ws.vocab.size();
  mc.variant = Variant::kFusion;
  LanguageModel<Real> model(mc, seed);
  // Non-zero biases and gains so their gradients are exercised at a generic point.
  Rng jitter = Rng(seed).split(7);
  for (auto* p : model.parameters()) {
    if (p->decay) continue;
    for (auto& x : p->value.data) x += static_cast<Real>(0.2 * (jitter.uniform01() - 0.5));
  }

  auto [train, val] = generate_corpus(seed, 4, 1, ws.lexicon);
  const auto corpus = encode_corpus(train, ws.lexicon, ws.vocab, mc.max_len);
  const std::vector<int> rows = {0, 1, 2, 3};
  const auto batch = make_batch<Real>(corpus, rows, true);
  const TrainConfig cfg;
  const AdjectiveClassIndex classes(ws.classes);
  const ScalarObjective<Real> objective = [&](Graph<Real>& g) {
    const auto out = model.forward(g, batch.input, Mode::kEval);
    return total_loss(g, out, batch, Variant::kFusion, cfg, classes).total;
  };
  const auto params = model.parameters();
  Rng pick = Rng(seed).split(8);
  return grad_check<Real>(objective, params, h, coords, pick);
}

template GradCheckResult tiny_model_grad_check<float>(std::uint64_t, int, double);
template GradCheckResult tiny_model_grad_check<double>(std::uint64_t, int, double);

}  // namespace semfuse

// semfuse: data generation, training, evaluation and controlled generation
// for the semantic-fusion language model.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semfuse/checkpoint.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/evaluation.hpp"
#include "semfuse/json_io.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/semantics.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    // A literal comma token is written as ",," or "comma".
    if (item.empty()) {
      if (out.empty() || out.back() != ",") out.emplace_back(",");
      continue;
    }
    out.push_back(item == "comma" ? "," : item);
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

struct LoadedData {
  CorpusManifest manifest;
  CorpusSplit train;
  CorpusSplit val;
};

LoadedData load_data(const fs::path& dir) {
  LoadedData d;
  d.manifest = read_manifest(dir / "manifest.json");
  d.train = read_jsonl(dir / "train.jsonl", "train", d.manifest.lexicon);
  d.val = read_jsonl(dir / "val.jsonl", "val", d.manifest.lexicon);
  return d;
}

struct GenDataOpts {
  std::string config;
  std::string out = "data";
  std::optional<std::uint64_t> seed;
  std::optional<int> n_train, n_val;
  int dump_semantics = 0;
};

int cmd_gen_data(const GenDataOpts& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) rc.data_seed = *o.seed;
  if (o.n_train) rc.n_train = *o.n_train;
  if (o.n_val) rc.n_val = *o.n_val;
  if (rc.n_train <= 0 || rc.n_val <= 0) throw ConfigError("n-train and n-val must be positive");
  const fs::path out = o.out;
  ensure_dir(out);
  auto [train, val] = generate_corpus(rc.data_seed, rc.n_train, rc.n_val, rc.lexicon, rc.corpus);
  write_jsonl(out / "train.jsonl", train);
  write_jsonl(out / "val.jsonl", val);
  write_manifest(out / "manifest.json",
                 {rc.data_seed, train.seed, val.seed, rc.n_train, rc.n_val, rc.lexicon, rc.corpus});
  rc.out_dir = out.string();
  write_json(out / "config.json", to_json(rc));
  if (o.dump_semantics > 0) {
    const Workspace ws(rc.lexicon);
    std::ofstream csv(out / "semantics.csv");
    const int n = std::min<int>(o.dump_semantics, static_cast<int>(train.records.size()));
    for (int i = 0; i < n; ++i) {
      const auto& r = train.records[static_cast<std::size_t>(i)];
      const auto enc = encode(r, rc.lexicon, ws.vocab, rc.corpus.max_len);
      const auto s = annotate(r, enc, rc.lexicon, ws.vocab);
      csv << "# sentence " << i << '\n';
      write_semantic_csv(csv, s, enc.ids, ws.vocab);
    }
  }
  std::cout << "seed " << rc.data_seed << ": wrote " << train.records.size() << " train and "
            << val.records.size() << " val sentences to " << out.string() << '\n';
  return 0;
}

struct TrainOpts {
  std::string config;
  std::string data = "data";
  std::string out = "runs/default";
  std::string variant = "both";
  std::optional<int> epochs, batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainOpts& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.batch) rc.train.batch = *o.batch;
  if (o.lr) rc.train.lr_peak = *o.lr;
  if (o.seed) rc.train.seed = *o.seed;
  rc.out_dir = o.out;
  rc.train.validate();
  std::vector<Variant> variants;
  if (o.variant == "both") {
    variants = {Variant::kBaseline, Variant::kFusion};
  } else {
    variants = {variant_from_name(o.variant)};
  }

  const auto data = load_data(o.data);
  rc.lexicon = data.manifest.lexicon;
  rc.corpus = data.manifest.options;
  rc.data_seed = data.manifest.seed;
  rc.n_train = data.manifest.n_train;
  rc.n_val = data.manifest.n_val;
  const Workspace ws(rc.lexicon);
  const fs::path out = o.out;
  ensure_dir(out);
  write_json(out / "config.json", to_json(rc));

  TrainData td{encode_corpus(data.train, ws.lexicon, ws.vocab, rc.corpus.max_len),
               encode_corpus(data.val, ws.lexicon, ws.vocab, rc.corpus.max_len), ws.classes};
  std::cout << "seed " << rc.train.seed << ", " << total_steps(td.train.size(), rc.train)
            << " optimizer steps per model\n";

  std::vector<std::pair<std::string, std::vector<EpochRecord>>> curves;
  for (const Variant v : variants) {
    const std::string name(variant_name(v));
    LanguageModel<float> model(model_config_for(rc, ws, v), init_seed_for(rc.train.seed));
    std::cout << name << ": " << model.parameter_count() << " parameters\n";
    std::vector<EpochRecord> curve;
    const fs::path ckpt = out / (name + ".sflm");
    const auto on_epoch = [&](const EpochRecord& r, const LanguageModel<float>& m) {
      curve.push_back(r);
      std::cout << "  epoch " << r.epoch << "  loss " << std::fixed << std::setprecision(4)
                << r.train_loss << "  val_ppl " << r.val_ppl << "  seen_only "
                << r.val_ppl_seen_only;
      if (std::isfinite(r.sem_mse)) std::cout << "  sem_mse " << r.sem_mse;
      std::cout << std::defaultfloat << std::endl;
      CheckpointInfo info;
      info.config = m.config();
      info.vocabulary = ws.vocab.tokens();
      info.features.assign(feature_names().begin(), feature_names().end());
      info.seed = rc.train.seed;
      info.epoch = r.epoch;
      info.metrics = {{"val_ppl", r.val_ppl},
                      {"val_ppl_seen_only", r.val_ppl_seen_only},
                      {"train_loss", r.train_loss}};
      if (std::isfinite(r.sem_mse)) info.metrics["sem_mse"] = r.sem_mse;
      info.extra = {{"train", rc.train}, {"lexicon", rc.lexicon}, {"corpus_seed", rc.data_seed}};
      save_checkpoint(ckpt, m, info);
    };
    try {
      train(model, td, rc.train, on_epoch);
    } catch (const NumericError&) {
      if (!curve.empty()) write_curve_csv(out / ("curve_" + name + ".csv"), {{name, curve}}, false);
      std::cerr << name << ": last good checkpoint is epoch "
                << (curve.empty() ? 0 : curve.back().epoch) << '\n';
      throw;
    }
    write_curve_csv(out / ("curve_" + name + ".csv"), {{name, curve}}, false);
    curves.emplace_back(name, curve);
  }
  if (curves.size() > 1) write_curve_csv(out / "curves.csv", curves, true);
  return 0;
}

struct Loaded {
  LoadedCheckpoint ckpt;
  Workspace ws;
};

Loaded load_model(const std::string& path) {
  auto ckpt = load_checkpoint(path);
  Lexicon lex = Lexicon::standard();
  if (ckpt.info.extra.contains("lexicon")) lex = ckpt.info.extra.at("lexicon").get<Lexicon>();
  Workspace ws(lex);
  if (ws.vocab.tokens() != ckpt.info.vocabulary) {
    throw DataError("checkpoint vocabulary does not match its lexicon");
  }
  return {std::move(ckpt), std::move(ws)};
}

struct EvalOpts {
  std::string checkpoint;
  std::string data = "data";
  std::string out;
  std::string focus;
  std::string ce_log;
  int control_n = 0;
  std::uint64_t seed = 1;
};

int cmd_eval(const EvalOpts& o) {
  auto loaded = load_model(o.checkpoint);
  auto& model = loaded.ckpt.model;
  const auto& ws = loaded.ws;
  const auto data = load_data(o.data);
  const auto val = encode_corpus(data.val, ws.lexicon, ws.vocab, model.config().max_len);
  const auto tf = teacher_forced(model, val);

  EvalReport report;
  report.variant = std::string(variant_name(model.config().variant));
  report.ppl = perplexity(tf.log);
  report.ppl_seen_only = seen_only_perplexity(tf.log, ws.classes.heldout_adjectives);
  try {
    report.sem_mse = semantic_mse(tf);
  } catch (const ConfigError& e) {
    report.notes["sem_mse"] = e.what();
  }
  const auto tokens = o.focus.empty() ? default_focus_tokens() : split_list(o.focus);
  report.focus = focus_ce(tf.log, tokens, ws.vocab);
  if (o.control_n > 0) {
    const Grammar grammar(ws.classes, ws.vocab);
    const Rng root(o.seed);
    for (auto s : all_control_settings()) {
      report.control.push_back(control_eval(model, grammar, ws.lexicon, s, control_spec(s),
                                            o.control_n, root.split(static_cast<std::uint64_t>(s))));
    }
  }
  report.notes["checkpoint"] = o.checkpoint;
  report.notes["epoch"] = loaded.ckpt.info.epoch;
  report.notes["table4_neg_preset"] = "neg-question";
  if (!o.ce_log.empty()) write_ce_log(o.ce_log, tf.log);

  std::cout << std::fixed << std::setprecision(4) << report.variant << "  ppl " << report.ppl
            << "  seen_only " << report.ppl_seen_only;
  if (report.sem_mse) std::cout << "  sem_mse " << *report.sem_mse;
  std::cout << "\nfocus CE (nats):\n";
  for (const auto& f : report.focus) {
    std::cout << "  " << std::setw(10) << std::left << f.token << std::right;
    if (f.mean) {
      std::cout << std::setprecision(5) << *f.mean << "  (n=" << f.count << ")\n";
    } else {
      std::cout << "absent\n";
    }
  }
  const auto j = to_json(report);
  if (!o.out.empty()) {
    write_json(o.out, j);
  } else {
    std::cout << j.dump(2) << '\n';
  }
  return 0;
}

struct GenerateOpts {
  std::string checkpoint;
  std::string preset = "neutral";
  std::string controls;
  std::string prefix;
  int n = 5;
  std::optional<std::uint64_t> seed;
  std::optional<double> temperature, rho, alpha, rep_factor, beta;
  std::optional<int> top_k;
};

int cmd_generate(const GenerateOpts& o) {
  auto loaded = load_model(o.checkpoint);
  const auto& ws = loaded.ws;
  const auto& preset = decode_preset(o.preset);
  ControlVector controls = preset.controls;
  DecodeConfig config = preset.config;
  std::string prefix_text = o.prefix;
  if (!o.controls.empty()) {
    std::ifstream in(o.controls);
    if (!in) throw ConfigError("cannot open control file '" + o.controls + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("control file: ") + e.what());
    }
    const auto p = apply_control_json(j, controls, config);
    if (prefix_text.empty()) prefix_text = p;
  }
  if (o.temperature) config.temperature = *o.temperature;
  if (o.rho) config.rho = *o.rho;
  if (o.alpha) config.alpha = *o.alpha;
  if (o.rep_factor) config.rep_factor = *o.rep_factor;
  if (o.beta) config.beta = *o.beta;
  if (o.top_k) config.top_k = *o.top_k;
  if (o.seed) {
    config.seed = *o.seed;
  } else if (o.controls.empty()) {
    config.seed = std::random_device{}();
    std::cerr << "seed " << config.seed << '\n';
  }
  config.validate();
  controls.validate();

  const Grammar grammar(ws.classes, ws.vocab);
  const auto prefix = parse_prefix(prefix_text, grammar);
  const Rng root(config.seed);
  for (int i = 0; i < o.n; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    const auto gen = generate(loaded.ckpt.model, grammar, ws.lexicon, controls, config, prefix, rng);
    std::cout << gen.text << '\n';
  }
  return 0;
}

struct ControlEvalOpts {
  std::string checkpoint;
  int n = 200;
  std::uint64_t seed = 1;
  std::string settings;
  std::string out;
};

int cmd_control_eval(const ControlEvalOpts& o) {
  auto loaded = load_model(o.checkpoint);
  const auto& ws = loaded.ws;
  const Grammar grammar(ws.classes, ws.vocab);
  std::vector<ControlSetting> settings;
  if (o.settings.empty()) {
    settings.assign(all_control_settings().begin(), all_control_settings().end());
  } else {
    for (const auto& name : split_list(o.settings)) settings.push_back(control_setting_from_name(name));
  }
  const Rng root(o.seed);
  nlohmann::json report = nlohmann::json::array();
  std::optional<ControlResult> pos_hard, neg_hard;
  std::cout << "seed " << o.seed << ", N = " << o.n << " per setting\n";
  for (auto s : settings) {
    const auto spec = control_spec(s);
    const auto r = control_eval(loaded.ckpt.model, grammar, ws.lexicon, s, spec, o.n,
                                root.split(static_cast<std::uint64_t>(s)));
    std::cout << "\n[" << control_setting_name(s) << "]  T=" << spec.config.temperature
              << " rho=" << spec.config.rho << " alpha=" << spec.config.alpha << '\n'
              << std::fixed << std::setprecision(2)
              << "  adjective accuracy " << r.adjective_accuracy() << " (" << r.adjective_correct
              << "/" << r.n << ")\n"
              << "  punctuation accuracy " << r.punct_accuracy() << " (" << r.punct_correct
              << "/" << r.n << ")\n"
              << "  OOD hit rate " << r.ood_rate() << " (" << r.ood_hits << "/" << r.n << ")\n"
              << std::defaultfloat;
    if (s == ControlSetting::kPosHard) pos_hard = r;
    if (s == ControlSetting::kNegQuestionHard) neg_hard = r;
    report.push_back(to_json(r));
  }
  if (pos_hard && neg_hard) {
    std::cout << "\nconfusion (hard control, intended x realized):\n";
    print_confusion(std::cout, *pos_hard, *neg_hard);
  }
  if (!o.out.empty()) write_json(o.out, {{"seed", o.seed}, {"n", o.n}, {"settings", report}});
  return 0;
}

struct GradCheckOpts {
  int precision = 64;
  double threshold = 1e-3;
  int coords = 256;
  double h = 1e-5;
  std::uint64_t seed = 1;
};

int cmd_grad_check(const GradCheckOpts& o) {
  GradCheckResult r;
  if (o.precision == 32) {
    std::cerr << "warning: 32-bit gradient checks are advisory; finite differences are "
                 "unreliable at single precision\n";
    r = tiny_model_grad_check<float>(o.seed, o.coords, std::max(o.h, 1e-3));
  } else if (o.precision == 64) {
    r = tiny_model_grad_check<double>(o.seed, o.coords, o.h);
  } else {
    throw ConfigError("--precision must be 32 or 64");
  }
  const bool pass = r.max_rel_error < o.threshold;
  std::cout << (pass ? "PASS" : "FAIL") << "  max relative error " << std::scientific
            << r.max_rel_error << " over " << r.coords_checked << " coordinates (threshold "
            << o.threshold << ")\n"
            << "  worst: " << r.worst_param << "[" << r.worst_index << "] analytic "
            << r.worst_analytic << " numeric " << r.worst_numeric << '\n';
  return pass ? 0 : static_cast<int>(ExitCode::kThreshold);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-fusion language model workbench"};
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  c_gen->add_option("--config", gen.config, "Run config JSON");
  c_gen->add_option("--out", gen.out, "Output directory");
  c_gen->add_option("--seed", gen.seed, "Corpus seed");
  c_gen->add_option("--n-train", gen.n_train, "Training sentences");
  c_gen->add_option("--n-val", gen.n_val, "Validation sentences");
  c_gen->add_option("--dump-semantics", gen.dump_semantics,
                    "Write semantics.csv for the first N training sentences");

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train baseline and/or fusion models");
  c_train->add_option("--config", tr.config, "Run config JSON");
  c_train->add_option("--data", tr.data, "Corpus directory");
  c_train->add_option("--out", tr.out, "Output directory");
  c_train->add_option("--variant", tr.variant, "baseline | fusion | both")
      ->check(CLI::IsMember({"baseline", "fusion", "both"}));
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--batch", tr.batch);
  c_train->add_option("--lr", tr.lr, "Peak learning rate");
  c_train->add_option("--seed", tr.seed, "Training seed");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Teacher-forced metrics and optional control study");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--data", ev.data, "Corpus directory");
  c_eval->add_option("--out", ev.out, "Report JSON path (default: stdout)");
  c_eval->add_option("--focus", ev.focus, "Comma-separated focus tokens (',,' for the comma)");
  c_eval->add_option("--ce-log", ev.ce_log, "Write per-position CE log");
  c_eval->add_option("--control-n", ev.control_n, "Generations per control setting (0 = skip)");
  c_eval->add_option("--seed", ev.seed);

  GenerateOpts ge;
  auto* c_generate = app.add_subcommand("generate", "Sample sentences");
  c_generate->add_option("--checkpoint", ge.checkpoint)->required();
  c_generate->add_option("--preset", ge.preset, "neutral | pos-strong | neg-question | baseline-fair");
  c_generate->add_option("--controls", ge.controls, "Control JSON file");
  c_generate->add_option("--prefix", ge.prefix, "Grammar-valid prompt, e.g. \"Carol starts the model ,\"");
  c_generate->add_option("--n", ge.n, "Number of sentences")->check(CLI::PositiveNumber);
  c_generate->add_option("--seed", ge.seed);
  c_generate->add_option("--T", ge.temperature, "Temperature");
  c_generate->add_option("--rho", ge.rho, "Nucleus threshold");
  c_generate->add_option("--alpha", ge.alpha, "Uniform mixture weight");
  c_generate->add_option("--top-k", ge.top_k);
  c_generate->add_option("--rep-factor", ge.rep_factor);
  c_generate->add_option("--beta", ge.beta, "Steer strength");

  ControlEvalOpts ce;
  auto* c_control = app.add_subcommand("control-eval", "Control accuracy, confusion and OOD hit rates");
  c_control->add_option("--checkpoint", ce.checkpoint)->required();
  c_control->add_option("--n", ce.n, "Generations per setting")->check(CLI::PositiveNumber);
  c_control->add_option("--seed", ce.seed);
  c_control->add_option("--settings", ce.settings,
                        "Comma-separated subset of pos-hard,neg-question-hard,pos-soft,neg-soft");
  c_control->add_option("--out", ce.out, "Report JSON path");

  GradCheckOpts gc;
  auto* c_grad = app.add_subcommand("grad-check", "Finite-difference check of the training loss");
  c_grad->add_option("--precision", gc.precision, "64 or 32");
  c_grad->add_option("--threshold", gc.threshold);
  c_grad->add_option("--coords", gc.coords)->check(CLI::PositiveNumber);
  c_grad->add_option("--step", gc.h, "Finite-difference step");
  c_grad->add_option("--seed", gc.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(ev);
    if (*c_generate) return cmd_generate(ge);
    if (*c_control) return cmd_control_eval(ce);
    if (*c_grad) return cmd_grad_check(gc);
  } catch (const GrammarError& e) {
    std::cerr << "grammar error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kData);
  }
  return static_cast<int>(ExitCode::kUsage);
}

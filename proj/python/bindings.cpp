#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "semfuse/batch.hpp"
#include "semfuse/checkpoint.hpp"
#include "semfuse/decoder.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/evaluation.hpp"
#include "semfuse/json_io.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/semantics.hpp"

namespace py = pybind11;
using namespace semfuse;

namespace {

// A model together with the lexicon-derived lookups it was built against.
struct PyModel {
  Workspace ws;
  LanguageModel<float> model;
  int epoch = 0;

  std::vector<std::string> generate(int n, std::uint64_t seed, const std::string& preset,
                                    const std::string& prefix_text) {
    const auto& p = decode_preset(preset);
    const Grammar grammar(ws.classes, ws.vocab);
    const auto prefix = parse_prefix(prefix_text, grammar);
    const Rng root(seed);
    std::vector<std::string> out;
    py::gil_scoped_release release;
    for (int i = 0; i < n; ++i) {
      Rng rng = root.split(static_cast<std::uint64_t>(i));
      out.push_back(generate_clause(p, grammar, prefix, rng));
    }
    return out;
  }

  std::string generate_clause(const DecodePreset& p, const Grammar& grammar,
                              const std::vector<int>& prefix, Rng& rng) {
    return semfuse::generate(model, grammar, ws.lexicon, p.controls, p.config, prefix, rng).text;
  }

  py::dict evaluate(std::uint64_t data_seed, int n_val) {
    auto [train, val] = generate_corpus(data_seed, 1, n_val, ws.lexicon);
    const auto corpus = encode_corpus(val, ws.lexicon, ws.vocab, model.config().max_len);
    TeacherForced tf;
    {
      py::gil_scoped_release release;
      tf = teacher_forced(model, corpus);
    }
    py::dict d;
    d["ppl"] = perplexity(tf.log);
    d["ppl_seen_only"] = seen_only_perplexity(tf.log, ws.classes.heldout_adjectives);
    d["sem_mse"] = tf.has_semantics ? py::object(py::float_(semantic_mse(tf))) : py::object(py::none());
    py::dict focus;
    for (const auto& f : focus_ce(tf.log, default_focus_tokens(), ws.vocab)) {
      focus[py::str(f.token)] = f.mean ? py::object(py::float_(*f.mean)) : py::object(py::none());
    }
    d["focus"] = focus;
    return d;
  }

  void save(const std::filesystem::path& path) const {
    CheckpointInfo info;
    info.config = model.config();
    info.vocabulary = ws.vocab.tokens();
    info.features.assign(feature_names().begin(), feature_names().end());
    info.seed = model.init_seed();
    info.epoch = epoch;
    info.extra = {{"lexicon", ws.lexicon}};
    save_checkpoint(path, model, info);
  }
};

std::unique_ptr<PyModel> load(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint(path);
  Lexicon lex = Lexicon::standard();
  if (ckpt.info.extra.contains("lexicon")) lex = ckpt.info.extra.at("lexicon").get<Lexicon>();
  Workspace ws(lex);
  if (ws.vocab.tokens() != ckpt.info.vocabulary) {
    throw DataError("checkpoint vocabulary does not match its lexicon");
  }
  return std::make_unique<PyModel>(PyModel{std::move(ws), std::move(ckpt.model), ckpt.info.epoch});
}

std::pair<std::unique_ptr<PyModel>, py::list> train_model(
    const std::string& variant, const py::dict& config, std::uint64_t data_seed,
    int n_train, int n_val, std::uint64_t seed) {
  RunConfig rc = run_config_from_json(
      nlohmann::json::parse(py::module_::import("json").attr("dumps")(config).cast<std::string>()));
  rc.data_seed = data_seed;
  rc.n_train = n_train;
  rc.n_val = n_val;
  rc.train.seed = seed;
  rc.train.validate();
  Workspace ws(rc.lexicon);
  auto [train_split, val_split] = generate_corpus(rc.data_seed, rc.n_train, rc.n_val, rc.lexicon, rc.corpus);
  const TrainData td{encode_corpus(train_split, ws.lexicon, ws.vocab, rc.corpus.max_len),
                     encode_corpus(val_split, ws.lexicon, ws.vocab, rc.corpus.max_len), ws.classes};
  LanguageModel<float> model(model_config_for(rc, ws, variant_from_name(variant)), init_seed_for(seed));
  TrainResult result;
  {
    py::gil_scoped_release release;
    result = train(model, td, rc.train);
  }
  py::list curve;
  for (const auto& r : result.curve) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["train_loss"] = r.train_loss;
    d["val_ppl"] = r.val_ppl;
    d["val_ppl_seen_only"] = r.val_ppl_seen_only;
    d["sem_mse"] = std::isfinite(r.sem_mse) ? py::object(py::float_(r.sem_mse)) : py::object(py::none());
    curve.append(d);
  }
  auto out = std::make_unique<PyModel>(PyModel{std::move(ws), std::move(model), rc.train.epochs});
  return {std::move(out), curve};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Semantic-fusion language model toolkit";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<GrammarError>(m, "GrammarError", base.ptr());

  m.def("membership", &membership, py::arg("x"), py::arg("center"), py::arg("tau"));
  m.def("tri", [](double x) { return tri(x); }, py::arg("x"));
  m.def("feature_names", [] {
    return std::vector<std::string>(feature_names().begin(), feature_names().end());
  });
  m.def("vocabulary", [] { return build_vocabulary(Lexicon::standard()).tokens(); });

  m.def("generate_corpus",
        [](std::uint64_t seed, int n_train, int n_val) {
          const auto lex = Lexicon::standard();
          auto [train, val] = generate_corpus(seed, n_train, n_val, lex);
          auto text = [&](const CorpusSplit& s) {
            std::vector<std::string> out;
            for (const auto& r : s.records) {
              std::string line;
              for (const auto& t : r.tokens(lex)) line += (line.empty() ? "" : " ") + t;
              out.push_back(line);
            }
            return out;
          };
          return std::make_pair(text(train), text(val));
        },
        py::arg("seed"), py::arg("n_train"), py::arg("n_val"),
        "Train and validation sentences as space-joined tokens.");

  m.def("mixture_distribution",
        [](const std::vector<double>& logits, const std::vector<int>& class_ids, double temperature,
           double alpha) { return mixture_distribution(logits, class_ids, temperature, alpha); },
        py::arg("logits"), py::arg("class_ids"), py::arg("temperature"), py::arg("alpha"));

  m.def("grad_check",
        [](std::uint64_t seed, int coords) {
          return tiny_model_grad_check<double>(seed, coords, 1e-5).max_rel_error;
        },
        py::arg("seed") = 1, py::arg("coords") = 128,
        "Largest relative error between analytic and finite-difference gradients.");

  m.def("presets", [] {
    std::vector<std::string> names;
    for (const auto& p : decode_presets()) names.push_back(p.name);
    return names;
  });

  py::class_<PyModel>(m, "Model")
      .def_static("load", &load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("generate", &PyModel::generate, py::arg("n") = 1, py::arg("seed") = 0,
           py::arg("preset") = "neutral", py::arg("prefix") = "")
      .def("evaluate", &PyModel::evaluate, py::arg("data_seed") = 1, py::arg("n_val") = 1200)
      .def_property_readonly("variant",
                             [](const PyModel& p) { return std::string(variant_name(p.model.config().variant)); })
      .def_property_readonly("parameter_count", [](const PyModel& p) { return p.model.parameter_count(); })
      .def_property_readonly("epoch", [](const PyModel& p) { return p.epoch; });

  m.def("train", &train_model, py::arg("variant"), py::arg("config") = py::dict(),
        py::arg("data_seed") = 1, py::arg("n_train") = 8000, py::arg("n_val") = 1200,
        py::arg("seed") = 1,
        "Trains one variant on a freshly generated corpus. `config` uses the run-config "
        "layout ({\"model\": {...}, \"train\": {...}}). Returns (model, curve).");
}

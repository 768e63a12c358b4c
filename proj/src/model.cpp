#include "semfuse/model.hpp"

#include <cmath>
#include <limits>

#include "semfuse/errors.hpp"

namespace semfuse {

std::string_view variant_name(Variant v) {
  return v == Variant::kFusion ? "fusion" : "baseline";
}

Variant variant_from_name(std::string_view name) {
  if (name == "fusion") return Variant::kFusion;
  if (name == "baseline") return Variant::kBaseline;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || layers <= 0 || heads <= 0 || ffn <= 0 || max_len <= 0 ||
      vocab_size <= 0 || features <= 0) {
    throw ConfigError("model: dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model: d_model must be divisible by heads");
  }
  if (d_model % 2 != 0) {
    throw ConfigError("model: d_model must be even for sinusoidal positions");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("model: dropout must lie in [0, 1)");
  }
}

Tensor<double> sinusoidal_positions(int max_len, int d) {
  if (d % 2 != 0) {
    throw ConfigError("sinusoidal_positions: d must be even");
  }
  Tensor<double> table({max_len, d});
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double angle =
          pos / std::pow(10000.0, (2.0 * i) / static_cast<double>(d));
      table[static_cast<std::size_t>(pos * d + 2 * i)] = std::sin(angle);
      table[static_cast<std::size_t>(pos * d + 2 * i + 1)] = std::cos(angle);
    }
  }
  return table;
}

template <typename Real>
LanguageModel<Real>::LanguageModel(ModelConfig config, std::uint64_t init_seed)
    : config_(config), init_seed_(init_seed) {
  config_.validate();
  Rng rng(init_seed);
  const int d = config_.d_model;
  const int v = config_.vocab_size;
  const int f = config_.features;
  const bool fusion = config_.variant == Variant::kFusion;

  add_param("embed.E", {v, d}, d, true, rng);
  add_const("out.b", {v}, Real(0));
  if (fusion) {
    add_param("fusion.Ws", {f, d}, f, true, rng);
    add_param("fusion.Wg", {d + f, d}, d + f, true, rng);
    add_const("fusion.bg", {d}, Real(0));
  }
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* w : {"q", "k", "v", "o"}) {
      add_param(p + "attn.W" + w, {d, d}, d, true, rng);
      add_const(p + "attn.b" + w, {d}, Real(0));
    }
    add_const(p + "ln1.gamma", {d}, Real(1));
    add_const(p + "ln1.beta", {d}, Real(0));
    add_param(p + "ffn.W1", {d, config_.ffn}, d, true, rng);
    add_const(p + "ffn.b1", {config_.ffn}, Real(0));
    add_param(p + "ffn.W2", {config_.ffn, d}, config_.ffn, true, rng);
    add_const(p + "ffn.b2", {d}, Real(0));
    add_const(p + "ln2.gamma", {d}, Real(1));
    add_const(p + "ln2.beta", {d}, Real(0));
  }
  if (fusion) {
    add_param("aux.W1", {d, d}, d, true, rng);
    add_const("aux.b1", {d}, Real(0));
    add_param("aux.W2", {d, f}, d, true, rng);
    add_const("aux.b2", {f}, Real(0));
  }

  const auto table = sinusoidal_positions(config_.max_len, d);
  positions_ = Tensor<Real>(table.shape);
  for (std::size_t i = 0; i < table.size(); ++i) {
    positions_[i] = static_cast<Real>(table[i]);
  }
}

template <typename Real>
Parameter<Real>& LanguageModel<Real>::add_param(std::string name, Shape shape,
                                                int fan_in, bool decay,
                                                Rng& rng) {
  Tensor<Real> value(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& x : value.data) {
    x = static_cast<Real>((2.0 * rng.uniform01() - 1.0) * bound);
  }
  params_.push_back(
      std::make_unique<Parameter<Real>>(std::move(name), std::move(value), decay));
  return *params_.back();
}

// Biases and layer-norm parameters: constant init, excluded from decay.
template <typename Real>
Parameter<Real>& LanguageModel<Real>::add_const(std::string name, Shape shape,
                                                Real fill) {
  params_.push_back(std::make_unique<Parameter<Real>>(
      std::move(name), Tensor<Real>(std::move(shape), fill), false));
  return *params_.back();
}

template <typename Real>
std::vector<Parameter<Real>*> LanguageModel<Real>::parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename Real>
std::vector<const Parameter<Real>*> LanguageModel<Real>::parameters() const {
  std::vector<const Parameter<Real>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename Real>
Parameter<Real>* LanguageModel<Real>::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
const Parameter<Real>* LanguageModel<Real>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename Real>
Parameter<Real>& LanguageModel<Real>::get(std::string_view name) {
  auto* p = find(name);
  if (p == nullptr) {
    throw ConfigError("model has no parameter '" + std::string(name) + "'");
  }
  return *p;
}

template <typename Real>
std::size_t LanguageModel<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename Real>
ForwardOutputs LanguageModel<Real>::forward(Graph<Real>& g,
                                            const ModelInput<Real>& input,
                                            Mode mode, Rng* rng) {
  const int b = input.batch;
  const int len = input.length;
  const int d = config_.d_model;
  const int f = config_.features;
  const int h = config_.heads;
  const int dh = d / h;
  const int n = b * len;
  const bool fusion = config_.variant == Variant::kFusion;
  const bool train = mode == Mode::kTrain;
  const Real drop = train ? static_cast<Real>(config_.dropout) : Real(0);

  if (len <= 0 || b <= 0) throw DataError("forward: empty input");
  if (len > config_.max_len) {
    throw DataError("forward: length " + std::to_string(len) +
                    " exceeds max_len " + std::to_string(config_.max_len));
  }
  if (input.ids.size() != static_cast<std::size_t>(n) ||
      input.mask.size() != static_cast<std::size_t>(n)) {
    throw DataError("forward: ids/mask do not match batch x length");
  }
  const std::size_t expected_s = fusion ? static_cast<std::size_t>(n) * f : 0;
  if (input.semantics.size() != expected_s) {
    throw DataError(fusion ? "forward: semantic matrix shape mismatch"
                           : "forward: baseline model takes no semantic input");
  }
  if (train && drop > Real(0) && rng == nullptr) {
    throw ConfigError("forward: training mode needs an RNG for dropout");
  }

  ForwardOutputs out;
  const Var embed = g.param(get("embed.E"));
  Var x = g.gather_rows(embed, input.ids);  // [n, d]
  if (fusion) {
    const Var s = g.constant(Tensor<Real>({n, f}, input.semantics));
    const Var u = g.matmul(s, g.param(get("fusion.Ws")));
    const Var es = g.concat_last(x, s);
    out.gate = g.sigmoid(
        g.add(g.matmul(es, g.param(get("fusion.Wg"))), g.param(get("fusion.bg"))));
    x = g.add(g.add(x, u), g.mul(out.gate, u));
  }
  out.fused = x;

  Tensor<Real> pos({len, d});
  std::copy_n(positions_.data.begin(), static_cast<std::ptrdiff_t>(len) * d,
              pos.data.begin());
  x = g.add(g.reshape(x, {b, len, d}), g.constant(std::move(pos)));
  if (train) x = g.dropout(x, drop, *rng);

  // Causal + key-padding mask, [b*h, len, len].
  typename Graph<Real>::Mask attn_mask(static_cast<std::size_t>(b) * h * len * len, 0);
  for (int bi = 0; bi < b; ++bi) {
    for (int hi = 0; hi < h; ++hi) {
      const std::size_t base = (static_cast<std::size_t>(bi) * h + hi) * len * len;
      for (int i = 0; i < len; ++i) {
        for (int j = 0; j < len; ++j) {
          const bool pad_key = input.mask[static_cast<std::size_t>(bi * len + j)] == 0;
          attn_mask[base + static_cast<std::size_t>(i) * len + j] = (j > i || pad_key) ? 1 : 0;
        }
      }
    }
  }
  const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Real neg_inf = -std::numeric_limits<Real>::infinity();

  auto split_heads = [&](Var t) {
    return g.reshape(g.permute(g.reshape(t, {b, len, h, dh}), {0, 2, 1, 3}),
                     {b * h, len, dh});
  };
  auto linear = [&](Var in, const std::string& w, const std::string& bias) {
    return g.add(g.matmul(in, g.param(get(w))), g.param(get(bias)));
  };

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const Var q = split_heads(linear(x, p + "attn.Wq", p + "attn.bq"));
    const Var k = split_heads(linear(x, p + "attn.Wk", p + "attn.bk"));
    const Var v = split_heads(linear(x, p + "attn.Wv", p + "attn.bv"));
    Var scores = g.masked_fill(g.scale(g.bmm(q, k, true), inv_sqrt), attn_mask, neg_inf);
    Var weights = g.softmax(scores);
    if (train) weights = g.dropout(weights, drop, *rng);
    Var ctx = g.bmm(weights, v);
    ctx = g.reshape(g.permute(g.reshape(ctx, {b, h, len, dh}), {0, 2, 1, 3}),
                    {b, len, d});
    const Var attn = linear(ctx, p + "attn.Wo", p + "attn.bo");
    x = g.layer_norm(g.add(x, attn), g.param(get(p + "ln1.gamma")),
                     g.param(get(p + "ln1.beta")));
    Var ff = g.relu(linear(x, p + "ffn.W1", p + "ffn.b1"));
    ff = linear(ff, p + "ffn.W2", p + "ffn.b2");
    if (train) ff = g.dropout(ff, drop, *rng);
    x = g.layer_norm(g.add(x, ff), g.param(get(p + "ln2.gamma")),
                     g.param(get(p + "ln2.beta")));
  }
  out.hidden = x;
  out.logits = g.add(g.matmul(x, embed, /*transpose_b=*/true),
                     g.param(get("out.b")));
  if (fusion) {
    const Var a1 = g.tanh(linear(x, "aux.W1", "aux.b1"));
    out.aux = g.sigmoid(linear(a1, "aux.W2", "aux.b2"));
  }
  return out;
}

template <typename Real>
std::vector<double> LanguageModel<Real>::fuse(std::span<const double> e,
                                              std::span<const double> s) const {
  const int d = config_.d_model;
  const int f = config_.features;
  if (config_.variant != Variant::kFusion) {
    throw ConfigError("fuse: baseline model has no semantic channel");
  }
  if (static_cast<int>(e.size()) != d || static_cast<int>(s.size()) != f) {
    throw ShapeError("fuse: expected e of size d and s of size F");
  }
  const auto& ws = find("fusion.Ws")->value;
  const auto& wg = find("fusion.Wg")->value;
  const auto& bg = find("fusion.bg")->value;
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    double u = 0.0;
    for (int i = 0; i < f; ++i) {
      u += s[static_cast<std::size_t>(i)] * static_cast<double>(ws[static_cast<std::size_t>(i * d + j)]);
    }
    double z = static_cast<double>(bg[static_cast<std::size_t>(j)]);
    for (int i = 0; i < d; ++i) {
      z += e[static_cast<std::size_t>(i)] * static_cast<double>(wg[static_cast<std::size_t>(i * d + j)]);
    }
    for (int i = 0; i < f; ++i) {
      z += s[static_cast<std::size_t>(i)] * static_cast<double>(wg[static_cast<std::size_t>((d + i) * d + j)]);
    }
    const double gate = 1.0 / (1.0 + std::exp(-z));
    out[static_cast<std::size_t>(j)] = e[static_cast<std::size_t>(j)] + gated_contribution(u, gate);
  }
  return out;
}

template class LanguageModel<float>;
template class LanguageModel<double>;

}  // namespace semfuse

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semfuse/graph.hpp"
#include "semfuse/rng.hpp"
#include "semfuse/semantics.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

enum class Variant { kBaseline, kFusion };

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct ModelConfig {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int ffn = 256;
  double dropout = 0.1;
  int max_len = 28;
  int vocab_size = 40;
  int features = kFeatureCount;
  Variant variant = Variant::kFusion;

  // Throws ConfigError.
  void validate() const;
};

enum class Mode { kTrain, kEval };

// Sinusoidal table: (pos, 2i) = sin(pos / 10000^(2i/d)), (pos, 2i+1) = cos(.).
// Throws ConfigError for odd d.
Tensor<double> sinusoidal_positions(int max_len, int d);

// Semantic contribution of one dimension after gating: u + g * u.
inline double gated_contribution(double u, double g) { return u + g * u; }

// A padded batch of encoded sentences, row-major [batch, length].
template <typename Real>
struct ModelInput {
  int batch = 0;
  int length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;  // 1 on real tokens
  std::vector<Real> semantics;     // [batch, length, F]; empty for baseline
};

struct ForwardOutputs {
  Var fused;   // h0 before positional encoding, [B*L, d]
  Var gate;    // fusion gate g, [B*L, d]; invalid for baseline
  Var hidden;  // H, [B, L, d]
  Var logits;  // [B, L, V]
  Var aux;     // sigmoid(aux MLP(H)), [B, L, F]; invalid for baseline
};

// Encoder Transformer with tied input/output embeddings. The fusion variant
// adds the gated semantic projection and the auxiliary semantic head.
//
// Parameter names (census order):
//   embed.E [V,d], out.b [V],
//   fusion.Ws [F,d], fusion.Wg [d+F,d], fusion.bg [d],
//   layers.<i>.attn.{Wq,bq,Wk,bk,Wv,bv,Wo,bo}, layers.<i>.ln1.{gamma,beta},
//   layers.<i>.ffn.{W1,b1,W2,b2}, layers.<i>.ln2.{gamma,beta},
//   aux.{W1,b1,W2,b2}
// Weights are stored [in, out]. The output projection reuses embed.E.
template <typename Real>
class LanguageModel {
 public:
  // Fresh parameters: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0,
  // layer-norm gains 1, drawn in census order from Rng(init_seed).
  LanguageModel(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<Parameter<Real>*> parameters();
  std::vector<const Parameter<Real>*> parameters() const;
  Parameter<Real>* find(std::string_view name);
  const Parameter<Real>* find(std::string_view name) const;
  std::size_t parameter_count() const;

  // `rng` drives dropout and is only used in training mode.
  ForwardOutputs forward(Graph<Real>& g, const ModelInput<Real>& input,
                         Mode mode, Rng* rng = nullptr);

  // Fused input of a single token: e + u + sigmoid(Wg [e; s] + bg) * u.
  std::vector<double> fuse(std::span<const double> e,
                           std::span<const double> s) const;

 private:
  Parameter<Real>& add_param(std::string name, Shape shape, int fan_in,
                             bool decay, Rng& rng);
  Parameter<Real>& add_const(std::string name, Shape shape, Real fill);
  Parameter<Real>& get(std::string_view name);

  ModelConfig config_;
  std::uint64_t init_seed_;
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  Tensor<Real> positions_;
};

extern template class LanguageModel<float>;
extern template class LanguageModel<double>;

}  // namespace semfuse

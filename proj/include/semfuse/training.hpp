#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "semfuse/batch.hpp"
#include "semfuse/graph.hpp"
#include "semfuse/lexicon.hpp"
#include "semfuse/model.hpp"

namespace semfuse {

struct TrainConfig {
  int epochs = 6;
  int batch = 64;
  double lr_peak = 3e-4;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double label_smoothing = 0.02;
  double lambda_aux = 0.5;
  double lambda_uni = 0.01;
  double warmup_frac = 0.10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

// Token ids of the two adjective classes, for the uniformizer.
struct AdjectiveClassIndex {
  std::vector<int> positive;
  std::vector<int> negative;

  AdjectiveClassIndex() = default;
  explicit AdjectiveClassIndex(const TokenClasses& classes);

  // Class containing `id`, or nullptr when `id` is not an adjective.
  const std::vector<int>* class_of(int id) const;
};

// Label-smoothed cross-entropy averaged over positions with mask != 0.
// logits: [..., V]. Throws NumericError when no position is unmasked.
template <typename Real>
Var lm_loss_label_smoothed(Graph<Real>& g, Var logits,
                           const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& mask, double eps);

// BCE between predictions [..., F] and soft targets of the same shape, averaged
// over every feature of the unmasked positions. Predictions are clamped to
// [1e-7, 1 - 1e-7].
template <typename Real>
Var aux_loss_bce(Graph<Real>& g, Var pred, const std::vector<Real>& targets,
                 const std::vector<std::uint8_t>& mask);

// Mean KL(softmax(logits restricted to the target's class) || uniform) over
// positions whose target is an adjective; a constant 0 when there are none.
template <typename Real>
Var uniformizer_loss(Graph<Real>& g, Var logits,
                     const std::vector<int>& targets,
                     const AdjectiveClassIndex& classes);

struct LossTerms {
  Var total;
  Var lm;
  Var aux;  // invalid for the baseline
  Var uni;
};

// total = lm + lambda_aux * aux + lambda_uni * uni; the baseline has no aux term.
template <typename Real>
LossTerms total_loss(Graph<Real>& g, const ForwardOutputs& out,
                     const Batch<Real>& batch, Variant variant,
                     const TrainConfig& cfg,
                     const AdjectiveClassIndex& classes);

// Linear warmup over the first floor(warmup_frac * total) steps, then cosine
// decay to 0. Steps count from 1; steps past `total_steps` give 0.
double lr_at(int step, int total_steps, const TrainConfig& cfg);

int total_steps(int n_train, const TrainConfig& cfg);

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename Real>
double clip_global_norm(std::span<Parameter<Real>* const> params,
                        double max_norm);

// Adam with bias correction and decoupled weight decay on parameters with
// decay == true.
template <typename Real>
class AdamW {
 public:
  AdamW(std::span<Parameter<Real>* const> params, const TrainConfig& cfg);

  void step(double lr);
  int steps() const { return t_; }

 private:
  std::vector<Parameter<Real>*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double beta1_, beta2_, eps_, weight_decay_;
  int t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // mean total loss over the epoch's batches
  double val_ppl = 0.0;
  double val_ppl_seen_only = 0.0;
  double sem_mse = 0.0;     // NaN for the baseline
};

struct TrainData {
  EncodedCorpus train;
  EncodedCorpus val;
  TokenClasses classes;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  int steps = 0;
};

// Seeds derived from cfg.seed: model init, epoch shuffles and dropout each use
// their own split stream.
std::uint64_t init_seed_for(std::uint64_t seed);

using EpochCallback =
    std::function<void(const EpochRecord&, const LanguageModel<float>&)>;

// Trains `model` in place. Shuffles the training split each epoch, evaluates
// validation metrics at every epoch end and calls `on_epoch`. Throws
// NumericError (naming epoch and batch) when the loss or a gradient is not
// finite.
TrainResult train(LanguageModel<float>& model, const TrainData& data,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace semfuse

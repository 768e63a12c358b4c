#include "semfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "semfuse/errors.hpp"
#include "semfuse/evaluation.hpp"

namespace semfuse {

void TrainConfig::validate() const {
  if (epochs <= 0 || batch <= 0) {
    throw ConfigError("train: epochs and batch must be positive");
  }
  if (!(lr_peak > 0.0) || weight_decay < 0.0 || !(clip_norm > 0.0)) {
    throw ConfigError("train: lr_peak and clip_norm must be positive, weight_decay >= 0");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("train: label_smoothing must lie in [0, 1)");
  }
  if (lambda_aux < 0.0 || lambda_uni < 0.0) {
    throw ConfigError("train: loss weights must be non-negative");
  }
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
    throw ConfigError("train: warmup_frac must lie in (0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(adam_eps > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

AdjectiveClassIndex::AdjectiveClassIndex(const TokenClasses& classes)
    : positive(classes.positive_adjectives),
      negative(classes.negative_adjectives) {}

const std::vector<int>* AdjectiveClassIndex::class_of(int id) const {
  if (std::find(positive.begin(), positive.end(), id) != positive.end()) {
    return &positive;
  }
  if (std::find(negative.begin(), negative.end(), id) != negative.end()) {
    return &negative;
  }
  return nullptr;
}

template <typename Real>
Var lm_loss_label_smoothed(Graph<Real>& g, Var logits,
                           const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& mask, double eps) {
  const auto& lv = g.value(logits);
  const int v = lv.cols();
  const int rows = lv.rows();
  if (static_cast<int>(targets.size()) != rows ||
      static_cast<int>(mask.size()) != rows) {
    throw ShapeError("lm_loss: targets/mask do not match logits " +
                     shape_to_string(lv.shape));
  }
  const auto z = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  if (z == 0) throw NumericError("lm_loss: no non-pad targets");
  // -(1/Z) sum_t sum_v q(v) log p(v), with q = (1 - eps) onehot + eps / V.
  std::vector<Real> weights(lv.size(), Real(0));
  const double off = eps / v / static_cast<double>(z);
  const double on = (1.0 - eps) / static_cast<double>(z);
  for (int t = 0; t < rows; ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    const auto base = static_cast<std::size_t>(t) * static_cast<std::size_t>(v);
    for (int k = 0; k < v; ++k) weights[base + static_cast<std::size_t>(k)] = static_cast<Real>(-off);
    weights[base + static_cast<std::size_t>(targets[static_cast<std::size_t>(t)])] =
        static_cast<Real>(-(off + on));
  }
  return g.weighted_sum(g.log_softmax(logits), weights);
}

template <typename Real>
Var aux_loss_bce(Graph<Real>& g, Var pred, const std::vector<Real>& targets,
                 const std::vector<std::uint8_t>& mask) {
  const auto& pv = g.value(pred);
  const int f = pv.cols();
  if (targets.size() != pv.size() ||
      mask.size() * static_cast<std::size_t>(f) != pv.size()) {
    throw ShapeError("aux_loss: targets/mask do not match predictions " +
                     shape_to_string(pv.shape));
  }
  const auto z = std::count(mask.begin(), mask.end(), std::uint8_t{1});
  if (z == 0) throw NumericError("aux_loss: no non-pad positions");
  const double norm = 1.0 / (static_cast<double>(z) * f);
  std::vector<Real> w_pos(pv.size(), Real(0));
  std::vector<Real> w_neg(pv.size(), Real(0));
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    for (int k = 0; k < f; ++k) {
      const auto i = t * static_cast<std::size_t>(f) + static_cast<std::size_t>(k);
      const double s = static_cast<double>(targets[i]);
      w_pos[i] = static_cast<Real>(-s * norm);
      w_neg[i] = static_cast<Real>(-(1.0 - s) * norm);
    }
  }
  const Var p = g.clamp(pred, Real(1e-7), Real(1) - Real(1e-7));
  const Var log_p = g.log(p);
  const Var log_q = g.log(g.affine(p, Real(-1), Real(1)));
  return g.add(g.weighted_sum(log_p, w_pos), g.weighted_sum(log_q, w_neg));
}

template <typename Real>
Var uniformizer_loss(Graph<Real>& g, Var logits,
                     const std::vector<int>& targets,
                     const AdjectiveClassIndex& classes) {
  const auto& lv = g.value(logits);
  const int v = lv.cols();
  if (static_cast<int>(targets.size()) != lv.rows()) {
    throw ShapeError("uniformizer: targets do not match logits " +
                     shape_to_string(lv.shape));
  }
  // Positions grouped by class so each group gathers a rectangular block.
  std::vector<int> positions[2];
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto* cls = classes.class_of(targets[t]);
    if (cls == &classes.positive) positions[0].push_back(static_cast<int>(t));
    if (cls == &classes.negative) positions[1].push_back(static_cast<int>(t));
  }
  const std::size_t count = positions[0].size() + positions[1].size();
  if (count == 0) return g.constant(Tensor<Real>(Shape{}, Real(0)));

  Var total;
  for (int c = 0; c < 2; ++c) {
    const auto& members = c == 0 ? classes.positive : classes.negative;
    const auto& pos = positions[c];
    if (pos.empty()) continue;
    const int k = static_cast<int>(members.size());
    std::vector<int> index;
    index.reserve(pos.size() * members.size());
    for (int t : pos) {
      for (int id : members) index.push_back(t * v + id);
    }
    const Var restricted =
        g.gather(logits, std::move(index), {static_cast<int>(pos.size()), k});
    const Var log_p = g.log_softmax(restricted);
    // KL(p || U) = sum p log p + log k, averaged over all adjective positions.
    const Var plogp = g.mul(g.exp(log_p), log_p);
    const std::vector<Real> w(pos.size() * members.size(),
                              static_cast<Real>(1.0 / static_cast<double>(count)));
    Var kl = g.affine(g.weighted_sum(plogp, w), Real(1),
                      static_cast<Real>(std::log(static_cast<double>(k)) *
                                        static_cast<double>(pos.size()) /
                                        static_cast<double>(count)));
    total = total.valid() ? g.add(total, kl) : kl;
  }
  return total;
}

template <typename Real>
LossTerms total_loss(Graph<Real>& g, const ForwardOutputs& out,
                     const Batch<Real>& batch, Variant variant,
                     const TrainConfig& cfg,
                     const AdjectiveClassIndex& classes) {
  LossTerms terms;
  terms.lm = lm_loss_label_smoothed(g, out.logits, batch.targets,
                                    batch.target_mask, cfg.label_smoothing);
  terms.uni = uniformizer_loss(g, out.logits, batch.targets, classes);
  terms.total = g.add(terms.lm, g.scale(terms.uni, static_cast<Real>(cfg.lambda_uni)));
  if (variant == Variant::kFusion) {
    terms.aux = aux_loss_bce(g, out.aux, batch.input.semantics, batch.input.mask);
    terms.total = g.add(terms.total, g.scale(terms.aux, static_cast<Real>(cfg.lambda_aux)));
  }
  return terms;
}

double lr_at(int step, int total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0 || step <= 0 || step > total_steps) return 0.0;
  const int warmup = static_cast<int>(std::floor(cfg.warmup_frac * total_steps));
  if (step <= warmup) {
    return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return 0.5 * cfg.lr_peak * (1.0 + std::cos(std::numbers::pi * progress));
}

int total_steps(int n_train, const TrainConfig& cfg) {
  return cfg.epochs * ((n_train + cfg.batch - 1) / cfg.batch);
}

template <typename Real>
double clip_global_norm(std::span<Parameter<Real>* const> params,
                        double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (Real x : p->grad.data) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto* p : params) {
      for (Real& x : p->grad.data) x = static_cast<Real>(x * factor);
    }
  }
  return norm;
}

template <typename Real>
AdamW<Real>::AdamW(std::span<Parameter<Real>* const> params,
                   const TrainConfig& cfg)
    : params_(params.begin(), params.end()),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

template <typename Real>
void AdamW<Real>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.decay ? 1.0 - lr * weight_decay_ : 1.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double grad = static_cast<double>(p.grad[k]);
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * grad;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * grad * grad;
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p.value[k] = static_cast<Real>(static_cast<double>(p.value[k]) * decay - lr * update);
    }
  }
}

std::uint64_t init_seed_for(std::uint64_t seed) { return Rng(seed).split(1).next(); }

TrainResult train(LanguageModel<float>& model, const TrainData& data,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.size() == 0) throw DataError("train: empty training split");
  const Variant variant = model.config().variant;
  const bool fusion = variant == Variant::kFusion;
  const AdjectiveClassIndex classes(data.classes);
  const auto params = model.parameters();
  AdamW<float> optimizer(params, cfg);
  const Rng root(cfg.seed);
  Rng shuffle_rng = root.split(2);
  Rng dropout_rng = root.split(3);
  const int steps_total = total_steps(data.train.size(), cfg);

  std::vector<int> order(static_cast<std::size_t>(data.train.size()));
  TrainResult result;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);
    }
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const auto batch = make_batch<float>(
          data.train, std::span<const int>(order).subspan(start, stop - start), fusion);
      for (auto* p : params) p->zero_grad();
      Graph<float> g;
      const auto out = model.forward(g, batch.input, Mode::kTrain, &dropout_rng);
      const auto terms = total_loss(g, out, batch, variant, cfg, classes);
      const double loss = static_cast<double>(g.value(terms.total)[0]);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged: loss " + std::to_string(loss) +
                           " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      g.backward(terms.total);
      for (const auto* p : params) {
        for (float x : p->grad.data) {
          if (!std::isfinite(x)) {
            throw NumericError("non-finite gradient in " + p->name + " at epoch " +
                               std::to_string(epoch) + ", batch " +
                               std::to_string(batches));
          }
        }
      }
      clip_global_norm<float>(params, cfg.clip_norm);
      optimizer.step(lr_at(++step, steps_total, cfg));
      loss_sum += loss;
      ++batches;
    }

    const auto tf = teacher_forced(model, data.val);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / batches;
    record.val_ppl = perplexity(tf.log);
    record.val_ppl_seen_only = seen_only_perplexity(tf.log, data.classes.heldout_adjectives);
    record.sem_mse = fusion ? semantic_mse(tf) : std::nan("");
    result.curve.push_back(record);
    if (on_epoch) on_epoch(record, model);
  }
  result.steps = step;
  return result;
}

#define SEMFUSE_INSTANTIATE(Real)                                             \
  template Var lm_loss_label_smoothed<Real>(Graph<Real>&, Var,                \
                                            const std::vector<int>&,          \
                                            const std::vector<std::uint8_t>&, \
                                            double);                          \
  template Var aux_loss_bce<Real>(Graph<Real>&, Var, const std::vector<Real>&,\
                                  const std::vector<std::uint8_t>&);          \
  template Var uniformizer_loss<Real>(Graph<Real>&, Var,                      \
                                      const std::vector<int>&,                \
                                      const AdjectiveClassIndex&);            \
  template LossTerms total_loss<Real>(Graph<Real>&, const ForwardOutputs&,    \
                                      const Batch<Real>&, Variant,            \
                                      const TrainConfig&,                     \
                                      const AdjectiveClassIndex&);            \
  template double clip_global_norm<Real>(std::span<Parameter<Real>* const>,   \
                                         double);                             \
  template class AdamW<Real>;

SEMFUSE_INSTANTIATE(float)
SEMFUSE_INSTANTIATE(double)

}  // namespace semfuse

#pragma once

// Optimisation: SGD with momentum, warmup + cosine schedule, per-domain
// train steps and the multi-domain alternating loop.

#include "cenet/datasets.hpp"
#include "cenet/errors.hpp"
#include "cenet/model.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>

namespace cenet {

enum class Alternation { iteration, epoch };

struct TrainConfig {
  double base_lr = 0.008;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t P = 16;
  std::size_t K = 4;
  int epochs = 120;
  int steps_per_epoch = 100;
  int warmup_steps = 500;
  double min_lr_ratio = 0.01;  // cosine floor as a fraction of base_lr
  std::vector<Domain> pattern{Domain::real, Domain::synthetic};
  Alternation alternation = Alternation::iteration;
  int log_every = 1;
  int checkpoint_every = 0;  // 0: only at the end
  int eval_every = 0;        // 0: never during training

  int total_steps() const { return epochs * steps_per_epoch; }
  void validate() const;
};

/// Learning rate at 0-based `step`: linear warmup to base_lr, then cosine
/// decay towards min_lr_ratio * base_lr at the last step.
double learning_rate(const TrainConfig& cfg, long step);

/// Domain trained at 0-based `step` under the alternation pattern.
Domain scheduled_domain(const TrainConfig& cfg, long step);

const char* alternation_name(Alternation a);
Alternation parse_alternation(const std::string& name);

// Optimiser --------------------------------------------------------------------

/// buf = momentum * buf + (g + wd * w); w -= lr * buf. Weight decay is skipped
/// for parameters flagged no_decay. Parameters the last backward pass did not
/// reach are left alone, including their momentum.
template <typename S>
class SGD {
 public:
  SGD(std::vector<ParamEntry<S>>& params, double momentum, double weight_decay)
      : params_(&params), momentum_(momentum), weight_decay_(weight_decay), buffers_(params.size()) {}

  void step(double lr) {
    auto& ps = *params_;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps[i];
      if (!p.var.touched()) continue;
      auto& w = p.var.mutable_value().data;
      typename Tensor<S>::Vector g = p.var.grad().data;
      if (!p.no_decay && weight_decay_ != 0) g += static_cast<S>(weight_decay_) * w;
      auto& buf = buffers_[i];
      if (momentum_ != 0) {
        if (!buf) {
          buf = Tensor<S>(p.var.shape(), g);
        } else {
          buf->data = static_cast<S>(momentum_) * buf->data + g;
        }
        w -= static_cast<S>(lr) * buf->data;
      } else {
        w -= static_cast<S>(lr) * g;
      }
    }
  }

  std::vector<std::optional<Tensor<S>>>& momentum_buffers() { return buffers_; }
  const std::vector<std::optional<Tensor<S>>>& momentum_buffers() const { return buffers_; }

 private:
  std::vector<ParamEntry<S>>* params_;
  double momentum_;
  double weight_decay_;
  std::vector<std::optional<Tensor<S>>> buffers_;
};

template <typename S>
SGD<S> make_optimizer(std::vector<ParamEntry<S>>& params, const TrainConfig& cfg) {
  cfg.validate();
  return SGD<S>(params, cfg.momentum, cfg.weight_decay);
}

// State --------------------------------------------------------------------------

template <typename S>
struct TrainState {
  std::unique_ptr<CENet<S>> model;
  std::unique_ptr<SGD<S>> optimizer;
  long step = 0;
  Rng rng;
  double best_metric = -std::numeric_limits<double>::infinity();
  long best_step = -1;

  TrainState(const ModelConfig& mcfg, const TrainConfig& tcfg, std::uint64_t seed)
      : model(std::make_unique<CENet<S>>(mcfg, seed)), rng(seed ^ 0x9e3779b97f4a7c15ULL) {
    optimizer = std::make_unique<SGD<S>>(make_optimizer(model->parameters(), tcfg));
  }

  std::string rng_state() const {
    std::ostringstream os;
    os << rng;
    return os.str();
  }
  void set_rng_state(const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw IntegrityError("invalid RNG state");
  }
};

// Batches ----------------------------------------------------------------------

template <typename S>
struct Batch {
  Domain domain = Domain::synthetic;
  Tensor<S> images;                // [B, 3, H, W]
  std::optional<Tensor<S>> pairs;  // [B, 3, H, W], well-lit targets
  Tensor<S> valid;                 // [B, 1, H, W], 0 where erased
  std::vector<int> labels;
  std::vector<int> pids;
  std::vector<int> camids;

  Index size() const { return images.rank() ? images.dim(0) : 0; }
};

/// Decodes, augments and stacks samples. Synthetic samples must carry a
/// pair image; it follows the geometric augmentation of its sample.
template <typename S>
Batch<S> make_batch(const std::vector<PersonSample>& samples, Domain domain, ImageCache& cache, Rng& rng,
                    AugmentMode mode, const AugmentConfig& aug) {
  require(!samples.empty(), "make_batch: empty sample list");
  const Index B = static_cast<Index>(samples.size()), H = aug.height, W = aug.width;
  Batch<S> batch;
  batch.domain = domain;
  batch.images = Tensor<S>({B, 3, H, W});
  batch.valid = Tensor<S>({B, 1, H, W});
  const bool paired = domain == Domain::synthetic;
  if (paired) batch.pairs = Tensor<S>({B, 3, H, W});
  for (Index b = 0; b < B; ++b) {
    const PersonSample& s = samples[static_cast<std::size_t>(b)];
    require(s.domain == domain, "make_batch: sample " + s.image_path.string() + " is not in the " +
                                    domain_name(domain) + " domain");
    if (paired) require(s.pair_path.has_value(), "make_batch: synthetic sample " + s.image_path.string() +
                                                     " has no pair image");
    const Image& img = cache.get(s.image_path);
    const Image* pair = paired ? &cache.get(*s.pair_path) : nullptr;
    Augmented a = augment_pair(img, pair, rng, mode, aug);
    const Index n = 3 * H * W;
    batch.images.data.segment(b * n, n) = a.image.data.template cast<S>();
    if (paired) batch.pairs->data.segment(b * n, n) = a.pair->data.template cast<S>();
    batch.valid.data.segment(b * H * W, H * W) = a.mask.valid_map().data.template cast<S>();
    batch.labels.push_back(s.label);
    batch.pids.push_back(s.pid);
    batch.camids.push_back(s.camid);
  }
  return batch;
}

// Loss evaluation ----------------------------------------------------------------

/// Which loss terms enter the differentiated total.
struct LossMask {
  bool id = true;
  bool triplet = true;
  bool relight = true;
  bool distill = true;

  static LossMask reid_only() { return {true, true, false, false}; }
  static LossMask relight_only() { return {false, false, true, false}; }
};

template <typename S>
struct StepGraph {
  LossBundle bundle;
  Var<S> total;
};

/// Forward pass and loss composition for one batch; the bundle reports every
/// term that was evaluated, `total` only contains the masked, nonzero-weight
/// ones. The relighting subnet is run only when a term needs it.
template <typename S>
StepGraph<S> evaluate_losses(const CENet<S>& model, const Batch<S>& batch, const LossWeights& w,
                             const LossMask& mask = {}) {
  w.validate();
  const Domain d = batch.domain;
  if (d == Domain::synthetic)
    require(batch.pairs.has_value(), "train_step: synthetic batch is missing its pair images");
  SharedFeatures<S> shared = model.shared_encode(model.patch_embed(batch.images, batch.camids, d));
  ReIDOutput<S> reid = model.reid_head(shared, d, mask.id);

  std::vector<Var<S>> terms;
  LossParts parts;
  if (mask.id) {
    Var<S> l = identity_loss(reid.logits, batch.labels, w.id_scale, w.id_margin);
    parts.id = static_cast<double>(l.item());
    terms.push_back(l);
  }
  if (mask.triplet) {
    Var<S> l = triplet_loss(reid.global, batch.labels, w.triplet_margin);
    parts.triplet = static_cast<double>(l.item());
    terms.push_back(l);
  }
  const bool want_relight = mask.relight && w.lambda_relight > 0;
  const bool want_distill = mask.distill && w.lambda_distill > 0;
  if (want_relight || want_distill) {
    RelightOutput<S> r = model.relight_decode(model.relight_features(shared, batch.images, batch.camids, d), batch.images);
    if (want_relight) {
      Var<S> l = d == Domain::synthetic
                     ? supervised_relight_loss(r.reflectance, *batch.pairs, batch.valid)
                     : unsupervised_relight_loss(r.reflectance, r.illumination, batch.images, w);
      parts.relight = static_cast<double>(l.item());
      terms.push_back(l * static_cast<S>(w.lambda_relight));
    }
    if (want_distill) {
      Var<S> l = lighting_distillation(reid.high_tokens, r.tokens, w.distill_temperature, w.distill_brightness_only);
      parts.distill = static_cast<double>(l.item());
      terms.push_back(l * static_cast<S>(w.lambda_distill));
    }
  }
  require(!terms.empty(), "train_step: no loss term is enabled");
  StepGraph<S> g;
  g.bundle = domain_total(parts, d, w);
  g.total = add_all(terms);
  return g;
}

/// Accumulates gradients of the masked total into the model parameters
/// (after zeroing them) and returns the loss bundle.
template <typename S>
LossBundle compute_gradients(CENet<S>& model, const Batch<S>& batch, const LossWeights& w, const LossMask& mask = {}) {
  model.zero_grad();
  StepGraph<S> g = evaluate_losses(model, batch, w, mask);
  backward(g.total);
  return g.bundle;
}

/// One optimiser step on the full domain composite.
template <typename S>
LossBundle train_step(TrainState<S>& state, const Batch<S>& batch, const LossWeights& w, const TrainConfig& cfg) {
  CENet<S>& model = *state.model;
  for (ParamGroup g : {ParamGroup::shared, ParamGroup::reid, ParamGroup::relight})
    if (!model.has_group(g))
      throw ValidationError(std::string("train_step: model is missing the ") + group_name(g) + " parameters");
  model.set_training(true);
  LossBundle bundle = compute_gradients(model, batch, w);
  const double lr = learning_rate(cfg, state.step);
  state.optimizer->step(lr);
  ++state.step;
  return bundle;
}

// Loop -------------------------------------------------------------------------

struct StepRecord {
  long step = 0;  // 1-based count after the update
  double lr = 0;
  LossBundle bundle;
};

/// Line-delimited metrics record: {"step", "domain", "lr", component values, "total"}.
std::string metrics_record(const StepRecord& r);

template <typename S>
struct LoopHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(TrainState<S>&)> on_checkpoint;
  std::function<void(TrainState<S>&)> on_eval;
};

struct TrainData {
  const DatasetSplit* real = nullptr;
  const DatasetSplit* synthetic = nullptr;

  const DatasetSplit& get(Domain d) const {
    const DatasetSplit* s = d == Domain::real ? real : synthetic;
    require(s != nullptr && s->size() > 0, std::string("alternating_loop: no ") + domain_name(d) + " training split");
    return *s;
  }
};

/// Runs from state.step to cfg.total_steps(), alternating domains per the
/// pattern. Each step draws a PK batch of the scheduled domain from the
/// state's generator, so the run is a pure function of (seed, config, data).
template <typename S>
void alternating_loop(TrainState<S>& state, const TrainData& data, const TrainConfig& cfg, const LossWeights& w,
                      const AugmentConfig& aug, const LoopHooks<S>& hooks = {}) {
  cfg.validate();
  for (Domain d : cfg.pattern) (void)data.get(d);
  ImageCache cache;
  const long total = cfg.total_steps();
  while (state.step < total) {
    const Domain d = scheduled_domain(cfg, state.step);
    const DatasetSplit& split = data.get(d);
    std::vector<PersonSample> samples = pk_batch(split, cfg.P, cfg.K, state.rng, d);
    Batch<S> batch = make_batch<S>(samples, d, cache, state.rng, AugmentMode::train, aug);
    StepRecord rec;
    rec.lr = learning_rate(cfg, state.step);
    rec.bundle = train_step(state, batch, w, cfg);
    rec.step = state.step;
    if (hooks.on_step && (cfg.log_every <= 1 || rec.step % cfg.log_every == 0 || rec.step == total)) hooks.on_step(rec);
    if (hooks.on_eval && cfg.eval_every > 0 && rec.step % cfg.eval_every == 0) hooks.on_eval(state);
    if (hooks.on_checkpoint && ((cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0) || rec.step == total))
      hooks.on_checkpoint(state);
  }
}

// Ablations ----------------------------------------------------------------------

/// Structural variants: MD = multi-domain alternation, FD = lighting
/// distillation, PS = encoder parameter sharing.
enum class Ablation { full, no_md, no_md_ps, no_md_fd, no_md_fd_ps };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);
std::vector<Ablation> all_ablations();
void apply_ablation(Ablation a, ModelConfig& model, TrainConfig& train, LossWeights& weights);

}  // namespace cenet

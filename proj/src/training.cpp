#include "cenet/training.hpp"

#include "json.hpp"

namespace cenet {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("train: " + m); };
  if (!(base_lr > 0)) fail("base_lr must be > 0");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0,1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (P < 2 || K < 1) fail("P must be >= 2 and K >= 1");
  if (epochs < 0 || steps_per_epoch < 1) fail("epochs must be >= 0 and steps_per_epoch >= 1");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) fail("min_lr_ratio must be in [0,1]");
  if (pattern.empty()) throw std::invalid_argument("train: alternation pattern is empty");
}

double learning_rate(const TrainConfig& cfg, long step) {
  const long warm = cfg.warmup_steps;
  if (step < warm) return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const long span = static_cast<long>(cfg.total_steps()) - warm - 1;
  if (span <= 0) return cfg.base_lr;
  const double t = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(span));
  const double lo = cfg.min_lr_ratio;
  return cfg.base_lr * (lo + (1 - lo) * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

Domain scheduled_domain(const TrainConfig& cfg, long step) {
  require(!cfg.pattern.empty(), "train: alternation pattern is empty");
  const long n = static_cast<long>(cfg.pattern.size());
  const long slot = cfg.alternation == Alternation::iteration ? step : step / cfg.steps_per_epoch;
  return cfg.pattern[static_cast<std::size_t>(slot % n)];
}

const char* alternation_name(Alternation a) { return a == Alternation::iteration ? "iteration" : "epoch"; }

Alternation parse_alternation(const std::string& name) {
  if (name == "iteration") return Alternation::iteration;
  if (name == "epoch") return Alternation::epoch;
  throw std::invalid_argument("unknown alternation '" + name + "' (iteration|epoch)");
}

std::string metrics_record(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["domain"] = domain_name(r.bundle.domain);
  j["lr"] = r.lr;
  for (const char* key : {"L_ID", "L_Tri", "L_IE", "L_LD", "total"}) j[key] = r.bundle.at(key);
  return j.dump();
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_md: return "no_md";
    case Ablation::no_md_ps: return "no_md_ps";
    case Ablation::no_md_fd: return "no_md_fd";
    case Ablation::no_md_fd_ps: return "no_md_fd_ps";
  }
  return "?";
}

Ablation parse_ablation(const std::string& name) {
  for (Ablation a : all_ablations())
    if (name == ablation_name(a)) return a;
  throw std::invalid_argument("unknown ablation '" + name + "' (full|no_md|no_md_ps|no_md_fd|no_md_fd_ps)");
}

std::vector<Ablation> all_ablations() {
  return {Ablation::full, Ablation::no_md, Ablation::no_md_ps, Ablation::no_md_fd, Ablation::no_md_fd_ps};
}

void apply_ablation(Ablation a, ModelConfig& model, TrainConfig& train, LossWeights& weights) {
  const bool md = a == Ablation::full;
  const bool fd = a == Ablation::full || a == Ablation::no_md || a == Ablation::no_md_ps;
  const bool ps = a == Ablation::full || a == Ablation::no_md || a == Ablation::no_md_fd;
  if (md)
    train.pattern = {Domain::real, Domain::synthetic};
  else
    train.pattern = {Domain::synthetic};
  if (!fd) weights.lambda_distill = 0;
  model.share_encoder = ps;
}

}  // namespace cenet

#include "cenet/losses.hpp"

#include "cenet/errors.hpp"

namespace cenet {

Domain parse_domain(const std::string& name) {
  if (name == "real") return Domain::real;
  if (name == "synthetic" || name == "syn") return Domain::synthetic;
  throw std::invalid_argument("unknown domain '" + name + "'");
}

void LossWeights::validate() const {
  const std::pair<const char*, double> weights[] = {
      {"lambda_relight", lambda_relight}, {"lambda_distill", lambda_distill}, {"lambda_rec", lambda_rec},
      {"lambda_ref", lambda_ref},         {"lambda_col", lambda_col},         {"lambda_sa", lambda_sa},
      {"id_margin", id_margin},           {"triplet_margin", triplet_margin}};
  for (const auto& [name, v] : weights)
    if (!(v >= 0)) throw ValidationError(std::string("loss.") + name + " must be >= 0");
  if (!(id_scale > 0)) throw ValidationError("loss.id_scale must be > 0");
  if (!(distill_temperature > 0)) throw ValidationError("loss.distill_temperature must be > 0");
}

LossBundle domain_total(const LossParts& parts, Domain domain, const LossWeights& w) {
  LossBundle b;
  b.domain = domain;
  b.values["L_ID"] = parts.id;
  b.values["L_Tri"] = parts.triplet;
  b.values["L_IE"] = parts.relight;
  b.values["L_LD"] = parts.distill;
  b.values["total"] = parts.id + parts.triplet + w.lambda_relight * parts.relight + w.lambda_distill * parts.distill;
  return b;
}

}  // namespace cenet

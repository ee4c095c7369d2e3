#pragma once

// Training objectives. Every loss is a scalar Var so it can be combined and
// differentiated; inputs follow the batch layouts of the model: scores
// [B, C], features [B, D], token maps [B, N, D], images [B, C, H, W].

#include "cenet/errors.hpp"
#include "cenet/imageops.hpp"

#include <map>
#include <string>

namespace cenet {

enum class Domain { real = 0, synthetic = 1 };

inline const char* domain_name(Domain d) { return d == Domain::real ? "real" : "synthetic"; }
Domain parse_domain(const std::string& name);

struct LossWeights {
  double lambda_relight = 0.5;   // weight of the relighting loss in both domain composites
  double lambda_distill = 0.1;   // weight of the lighting distillation loss
  double lambda_rec = 1.0;
  double lambda_ref = 0.1;
  double lambda_col = 0.2;
  double lambda_sa = 0.1;
  double id_scale = 1.0;         // alpha of the identity loss
  double id_margin = 0.0;        // m of the identity loss
  double triplet_margin = 0.3;
  double distill_temperature = 1.0;
  bool distill_brightness_only = false;

  void validate() const;
};

// Identity ---------------------------------------------------------------------

/// Margin softmax cross-entropy, averaged over the batch:
///   -log( e^{a(s_y - m)} / (e^{a(s_y - m)} + sum_{k != y} e^{a s_k}) ).
template <typename S>
Var<S> identity_loss(const Var<S>& scores, const std::vector<int>& labels, double scale = 1.0, double margin = 0.0) {
  require(scores.value().rank() == 2, "identity_loss: expected [B,C] scores");
  const Index B = scores.dim(0), C = scores.dim(1);
  require(static_cast<Index>(labels.size()) == B && B > 0, "identity_loss: one label per sample required");
  for (int y : labels) require(y >= 0 && y < C, "identity_loss: label " + std::to_string(y) + " out of range [0," + std::to_string(C) + ")");
  const S a = static_cast<S>(scale), m = static_cast<S>(margin);
  using Mat = typename Tensor<S>::Matrix;
  auto probs = std::make_shared<Mat>(B, C);
  const auto s = scores.value().matrix();
  S total = 0;
  for (Index i = 0; i < B; ++i) {
    Eigen::Array<S, 1, Eigen::Dynamic> z = a * s.row(i).array();
    z[labels[static_cast<std::size_t>(i)]] -= a * m;
    const S mx = z.maxCoeff();
    const S lse = mx + std::log((z - mx).exp().sum());
    total += lse - z[labels[static_cast<std::size_t>(i)]];
    probs->row(i) = (z - lse).exp();
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(B));
  return make_result<S>(std::move(out), {scores}, [probs, labels, a, B, C](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    const S g = self.grad.data[0] / static_cast<S>(B);
    auto gs = parent_grad(self, 0).matrix(B, C);
    for (Index i = 0; i < B; ++i) {
      Eigen::Array<S, 1, Eigen::Dynamic> d = probs->row(i).array();
      d[labels[static_cast<std::size_t>(i)]] -= S(1);
      gs.row(i).array() += g * a * d;
    }
  });
}

// Triplet ----------------------------------------------------------------------

inline double triplet_hinge(double d_ap, double d_an, double margin) { return std::max(0.0, margin + d_ap - d_an); }

/// Batch-hard triplet loss under Euclidean distance. For each anchor with at
/// least one positive and one negative in the batch, the farthest positive
/// and nearest negative form the hinge; the result is the mean over those
/// anchors.
template <typename S>
Var<S> triplet_loss(const Var<S>& features, const std::vector<int>& labels, double margin = 0.3) {
  require(features.value().rank() == 2, "triplet_loss: expected [B,D] features");
  const Index B = features.dim(0), D = features.dim(1);
  require(static_cast<Index>(labels.size()) == B, "triplet_loss: one label per sample required");
  bool has_negative = false, has_positive = false;
  for (Index i = 0; i < B; ++i)
    for (Index j = 0; j < B; ++j) {
      if (i == j) continue;
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
        has_positive = true;
      else
        has_negative = true;
    }
  require(has_negative, "triplet_loss: batch contains a single identity (no negatives)");
  require(has_positive, "triplet_loss: no identity has two samples (no positives)");

  const auto f = features.value().matrix();
  using Mat = typename Tensor<S>::Matrix;
  Mat dist(B, B);
  constexpr S floor = S(1e-12);
  for (Index i = 0; i < B; ++i)
    for (Index j = 0; j < B; ++j) dist(i, j) = std::sqrt(std::max((f.row(i) - f.row(j)).squaredNorm(), floor));

  struct Triple {
    Index a, p, n;
    bool active;
  };
  auto triples = std::make_shared<std::vector<Triple>>();
  S total = 0;
  for (Index i = 0; i < B; ++i) {
    Index p = -1, n = -1;
    for (Index j = 0; j < B; ++j) {
      if (j == i) continue;
      const bool same = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)];
      if (same && (p < 0 || dist(i, j) > dist(i, p))) p = j;
      if (!same && (n < 0 || dist(i, j) < dist(i, n))) n = j;
    }
    if (p < 0 || n < 0) continue;
    const S h = static_cast<S>(margin) + dist(i, p) - dist(i, n);
    triples->push_back({i, p, n, h > S(0)});
    total += std::max(h, S(0));
  }
  const Index count = static_cast<Index>(triples->size());
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(count));
  return make_result<S>(std::move(out), {features}, [triples, count, B, D](Node<S>& self) {
    if (!wants_grad(self, 0)) return;
    const S g = self.grad.data[0] / static_cast<S>(count);
    const auto f = parent_value(self, 0).matrix(B, D);
    auto gf = parent_grad(self, 0).matrix(B, D);
    auto pull = [&](Index i, Index j, S w) {
      const S d2 = (f.row(i) - f.row(j)).squaredNorm();
      if (d2 < S(1e-12)) return;  // clamped distance: zero gradient
      const S d = std::sqrt(d2);
      auto dir = ((f.row(i) - f.row(j)) / d).eval();
      gf.row(i) += w * dir;
      gf.row(j) -= w * dir;
    };
    for (const auto& t : *triples) {
      if (!t.active) continue;
      pull(t.a, t.p, g);
      pull(t.a, t.n, -g);
    }
  });
}

// Lighting distillation ------------------------------------------------------

template <typename S>
struct DistillTerms {
  Var<S> brightness;
  Var<S> contrastive;
  Var<S> total;
};

/// Distills relighting-decoder tokens (teacher, never differentiated) into
/// ReID tokens (student).
///   brightness:  MSE between per-channel token means of student and teacher
///   contrastive: mean_i -log( e^{sim(s_i,t_i)/tau} / ((1/B) sum_j e^{sim(s_i,t_j)/tau}) )
/// with sim the cosine similarity of token-mean-pooled features.
template <typename S>
DistillTerms<S> lighting_distillation_terms(const Var<S>& student, const Var<S>& teacher, double temperature = 1.0,
                                            bool brightness_only = false) {
  require(student.value().rank() == 3 && student.shape() == teacher.shape(),
          "lighting_distillation: student/teacher shapes must match [B,N,D], got " + shape_string(student.shape()) +
              " vs " + shape_string(teacher.shape()));
  const Index B = student.dim(0);
  require(B > 0, "lighting_distillation: empty batch");
  require(temperature > 0, "lighting_distillation: temperature must be positive");
  Var<S> t = detach(teacher);
  Var<S> phi_s = token_mean(student);
  Var<S> phi_t = token_mean(t);
  DistillTerms<S> terms;
  terms.brightness = mean(square(phi_s - phi_t));
  if (brightness_only) {
    terms.contrastive = Var<S>::constant(Tensor<S>::scalar(S(0)));
    terms.total = terms.brightness;
    return terms;
  }
  const S inv_tau = static_cast<S>(1.0 / temperature);
  Var<S> sim = matmul_nt(normalize_rows(phi_s), normalize_rows(phi_t)) * inv_tau;
  // -log(e^{s_ii} / mean_j e^{s_ij}) = lse_j(s_ij) - log B - s_ii
  Var<S> per_sample = logsumexp_rows(sim) - diagonal(sim);
  terms.contrastive = mean(per_sample) - static_cast<S>(std::log(static_cast<double>(B)));
  terms.total = terms.brightness + terms.contrastive;
  return terms;
}

template <typename S>
Var<S> lighting_distillation(const Var<S>& student, const Var<S>& teacher, double temperature = 1.0,
                             bool brightness_only = false) {
  return lighting_distillation_terms(student, teacher, temperature, brightness_only).total;
}

// Relighting -------------------------------------------------------------------

/// Mean squared error between the relit image and its well-lit pair over the
/// pixels marked valid (1) in `valid` [B, 1, H, W]; all channels count.
template <typename S>
Var<S> supervised_relight_loss(const Var<S>& relit, const Tensor<S>& target, const Tensor<S>& valid) {
  require(relit.value().rank() == 4 && relit.shape() == target.shape, "supervised_relight_loss: shape mismatch " +
                                                                          shape_string(relit.shape()) + " vs " +
                                                                          shape_string(target.shape));
  const Index B = relit.dim(0), C = relit.dim(1), H = relit.dim(2), W = relit.dim(3);
  require(valid.shape == Shape({B, 1, H, W}), "supervised_relight_loss: mask must be [B,1,H,W]");
  const double kept = static_cast<double>(valid.data.sum());
  require(kept > 0, "supervised_relight_loss: empty valid mask");
  Tensor<S> mask(relit.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) mask.data.segment((b * C + c) * H * W, H * W) = valid.data.segment(b * H * W, H * W);
  Var<S> diff = (relit - Var<S>::constant(target)) * Var<S>::constant(mask);
  return sum(square(diff)) * static_cast<S>(1.0 / (kept * static_cast<double>(C)));
}

/// 1 - SSIM(R*I, M) + mean |R*I - M|, the illumination broadcasting over channels.
template <typename S>
Var<S> reconstruction_loss(const Var<S>& reflectance, const Var<S>& illumination, const Tensor<S>& input) {
  Var<S> recon = mul_channels(reflectance, illumination);
  Var<S> m = Var<S>::constant(input);
  return (S(1) - ssim(recon, m)) + mean(abs(recon - m));
}

/// mean |max_c R - H(max_c M)| + TV(R).
template <typename S>
Var<S> reflection_loss(const Var<S>& reflectance, const Tensor<S>& input) {
  require(input.rank() == 4 && input.dim(1) == 3, "reflection_loss: expected [B,3,H,W] input");
  Tensor<S> input_max;
  {
    NoGradGuard guard;
    input_max = channel_max(Var<S>::constant(input)).value();
  }
  Var<S> target = Var<S>::constant(hist_equalize_batch(input_max));
  return mean(abs(channel_max(reflectance) - target)) + total_variation(reflectance);
}

/// Gray-world colour constancy on the channel means of R, averaged over the batch.
template <typename S>
Var<S> color_loss(const Var<S>& reflectance) {
  require(reflectance.value().rank() == 4 && reflectance.dim(1) == 3, "color_loss: expected [B,3,H,W]");
  const Index B = reflectance.dim(0);
  Var<S> means = spatial_mean(reflectance);  // [B, 3]
  Tensor<S> pick_r({3, 3}), pick_g({3, 3});
  // rows: (r,g), (r,b), (g,b) as i - j differences
  pick_r.data << 1, 0, 0, 1, 0, 0, 0, 1, 0;
  pick_g.data << 0, 1, 0, 0, 0, 1, 0, 0, 1;
  Tensor<S> diff_rows({3, 3});
  diff_rows.matrix() = pick_r.matrix() - pick_g.matrix();
  Var<S> pair_diff = matmul_nt(means, Var<S>::constant(diff_rows));  // [B, 3]
  return sum(square(pair_diff)) * (S(1) / static_cast<S>(B));
}

/// Structure-aware smoothness: mean |dI * exp(-|d mean_c R|)| over both
/// directions, pooled like total_variation.
template <typename S>
Var<S> smooth_loss(const Var<S>& illumination, const Var<S>& reflectance) {
  require(illumination.value().rank() == 4 && illumination.dim(1) == 1, "smooth_loss: expected [B,1,H,W] illumination");
  Var<S> gray = channel_mean(reflectance);
  require(gray.shape() == illumination.shape(), "smooth_loss: illumination and reflectance sizes differ");
  const Index count = diff_x(illumination).size() + diff_y(illumination).size();
  if (count == 0) return Var<S>::constant(Tensor<S>::scalar(S(0)));
  std::vector<Var<S>> terms;
  Var<S> ix = diff_x(illumination);
  if (ix.size() > 0) terms.push_back(sum(abs(ix * exp(abs(diff_x(gray)) * S(-1)))));
  Var<S> iy = diff_y(illumination);
  if (iy.size() > 0) terms.push_back(sum(abs(iy * exp(abs(diff_y(gray)) * S(-1)))));
  return add_all(terms) * (S(1) / static_cast<S>(count));
}

template <typename S>
struct RetinexTerms {
  Var<S> reconstruction, reflection, color, smooth, total;
};

template <typename S>
RetinexTerms<S> unsupervised_relight_terms(const Var<S>& reflectance, const Var<S>& illumination,
                                           const Tensor<S>& input, const LossWeights& w) {
  RetinexTerms<S> t;
  t.reconstruction = reconstruction_loss(reflectance, illumination, input);
  t.reflection = reflection_loss(reflectance, input);
  t.color = color_loss(reflectance);
  t.smooth = smooth_loss(illumination, reflectance);
  t.total = t.reconstruction * static_cast<S>(w.lambda_rec) + t.reflection * static_cast<S>(w.lambda_ref) +
            t.color * static_cast<S>(w.lambda_col) + t.smooth * static_cast<S>(w.lambda_sa);
  return t;
}

template <typename S>
Var<S> unsupervised_relight_loss(const Var<S>& reflectance, const Var<S>& illumination, const Tensor<S>& input,
                                 const LossWeights& w) {
  return unsupervised_relight_terms(reflectance, illumination, input, w).total;
}

inline double unsupervised_combine(double rec, double ref, double col, double sa, const LossWeights& w) {
  return w.lambda_rec * rec + w.lambda_ref * ref + w.lambda_col * col + w.lambda_sa * sa;
}

// Composites -------------------------------------------------------------------

struct LossParts {
  double id = 0;
  double triplet = 0;
  double relight = 0;   // supervised (synthetic) or unsupervised (real) relighting loss
  double distill = 0;
};

/// Named loss values of one step with their domain.
struct LossBundle {
  Domain domain = Domain::synthetic;
  std::map<std::string, double> values;  // L_ID, L_Tri, L_LD, L_IE, total

  double at(const std::string& key) const { return values.at(key); }
  double total() const { return values.at("total"); }
};

/// total = L_ID + L_Tri + lambda_relight * L_IE + lambda_distill * L_LD.
LossBundle domain_total(const LossParts& parts, Domain domain, const LossWeights& w);

}  // namespace cenet

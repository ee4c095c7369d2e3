#include "doctest.h"
#include "loss_gradients.hpp"

#include <numeric>

using namespace cenet;
using namespace cenet::testing;

namespace {

VarD constant(Shape shape, std::vector<double> values) {
  TensorD t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = values[static_cast<std::size_t>(i)];
  return VarD::constant(t);
}

VarD filled(Shape shape, double v) { return VarD::constant(TensorD(std::move(shape), v)); }

/// Plain cross-entropy computed without the loss implementation.
double cross_entropy(const TensorD& scores, const std::vector<int>& labels) {
  const Index B = scores.dim(0), C = scores.dim(1);
  double total = 0;
  for (Index i = 0; i < B; ++i) {
    double z = 0;
    for (Index k = 0; k < C; ++k) z += std::exp(scores.data[i * C + k]);
    total += -std::log(std::exp(scores.data[i * C + labels[static_cast<std::size_t>(i)]]) / z);
  }
  return total / static_cast<double>(B);
}

/// Batch-hard triplet by brute force over all pairs.
double triplet_oracle(const TensorD& f, const std::vector<int>& labels, double margin) {
  const Index B = f.dim(0), D = f.dim(1);
  auto d = [&](Index i, Index j) {
    double s = 0;
    for (Index k = 0; k < D; ++k) s += (f.data[i * D + k] - f.data[j * D + k]) * (f.data[i * D + k] - f.data[j * D + k]);
    return std::sqrt(s);
  };
  double total = 0;
  int count = 0;
  for (Index a = 0; a < B; ++a) {
    double hp = -1, hn = 1e300;
    for (Index j = 0; j < B; ++j) {
      if (j == a) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)])
        hp = std::max(hp, d(a, j));
      else
        hn = std::min(hn, d(a, j));
    }
    if (hp < 0 || hn > 1e299) continue;
    total += std::max(0.0, margin + hp - hn);
    ++count;
  }
  return total / count;
}

}  // namespace

TEST_SUITE("examples") {

TEST_CASE("identity loss of uniform scores is ln 2") {
  CHECK(std::abs(identity_loss(constant({1, 2}, {0, 0}), {0}).item() - std::log(2.0)) < 1e-12);
}

TEST_CASE("identity loss of a confident correct score") {
  const double v = identity_loss(constant({1, 2}, {10, 0}), {0}).item();
  CHECK(std::abs(v - std::log1p(std::exp(-10.0))) < 1e-12);
  CHECK(std::abs(v - 4.54e-5) < 1e-6);
}

TEST_CASE("identity loss is invariant to a per-sample score shift") {
  std::mt19937_64 rng(1);
  TensorD s = random_tensor({3, 4}, rng);
  TensorD shifted = s;
  for (Index k = 0; k < 4; ++k) shifted.data[k] += 7.5;
  for (Index k = 8; k < 12; ++k) shifted.data[k] -= 3.0;
  const std::vector<int> y{1, 3, 0};
  CHECK(std::abs(identity_loss(VarD::constant(s), y, 2.0, 0.3).item() -
                 identity_loss(VarD::constant(shifted), y, 2.0, 0.3).item()) < 1e-12);
}

TEST_CASE("identity loss rejects labels out of range") {
  CHECK_THROWS_AS(identity_loss(constant({1, 2}, {0, 0}), {2}), std::invalid_argument);
  CHECK_THROWS_AS(identity_loss(constant({1, 2}, {0, 0}), {-1}), std::invalid_argument);
}

TEST_CASE("triplet hinge with a satisfied margin is zero") {
  CHECK(triplet_hinge(0.2, 1.0, 0.3) == 0.0);
  // anchor 0, positive 0.2, negative 1.0 on a line: both anchors satisfy the margin
  CHECK(triplet_loss(constant({3, 1}, {0.0, 0.2, 1.0}), {0, 0, 1}, 0.3).item() == 0.0);
}

TEST_CASE("triplet hinge with a violated margin") {
  CHECK(std::abs(triplet_hinge(1.0, 0.5, 0.3) - 0.8) < 1e-12);
  // negative halfway between anchor and positive: d_ap = 1.0, d_an = 0.5 for both anchors
  const double v = triplet_loss(constant({3, 2}, {0, 0, 1, 0, 0.5, 0}), {0, 0, 1}, 0.3).item();
  CHECK(std::abs(v - 0.8) < 1e-12);
}

TEST_CASE("triplet loss of identical features is the margin") {
  CHECK(triplet_loss(filled({6, 3}, 0.25), {0, 0, 1, 1, 2, 2}, 0.3).item() == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("triplet loss needs negatives") {
  CHECK_THROWS_AS(triplet_loss(filled({3, 2}, 0.0), {4, 4, 4}), std::invalid_argument);
}

TEST_CASE("distillation of a singleton self-match is zero") {
  std::mt19937_64 rng(2);
  VarD f = VarD::constant(random_tensor({1, 4, 3}, rng));
  auto t = lighting_distillation_terms(f, f);
  CHECK(std::abs(t.brightness.item()) < 1e-15);
  CHECK(std::abs(t.contrastive.item()) < 1e-12);
  CHECK(std::abs(t.total.item()) < 1e-12);
}

TEST_CASE("distillation brightness term of channel means") {
  auto t = lighting_distillation_terms(constant({1, 1, 2}, {0.5, 0.5}), constant({1, 1, 2}, {0.3, 0.7}));
  CHECK(std::abs(t.brightness.item() - 0.04) < 1e-12);
}

TEST_CASE("distillation contrastive term with a mean denominator") {
  // s1 = t1, s2 = t2, s1 orthogonal to t2
  VarD s = constant({2, 1, 2}, {1, 0, 0, 1});
  auto t = lighting_distillation_terms(s, s);
  const double expected = -std::log(2 * std::exp(1.0) / (std::exp(1.0) + 1));
  CHECK(std::abs(t.contrastive.item() - expected) < 1e-12);
  CHECK(std::abs(expected - (-0.3799)) < 1e-4);
}

TEST_CASE("supervised relight loss") {
  TensorD valid({1, 1, 3, 4}, 1.0);
  VarD gt = filled({1, 3, 3, 4}, 0.5);
  CHECK(supervised_relight_loss(gt, gt.value(), valid).item() == 0.0);
  CHECK(std::abs(supervised_relight_loss(filled({1, 3, 3, 4}, 0.2), gt.value(), valid).item() - 0.09) < 1e-12);
}

TEST_CASE("supervised relight loss averages over unmasked pixels only") {
  // left half matches, right half is off by 0.4
  TensorD r({1, 3, 2, 4}, 0.5), gt({1, 3, 2, 4}, 0.5);
  for (Index c = 0; c < 3; ++c)
    for (Index y = 0; y < 2; ++y)
      for (Index x = 2; x < 4; ++x) r.data[(c * 2 + y) * 4 + x] = 0.9;
  TensorD all({1, 1, 2, 4}, 1.0), left({1, 1, 2, 4}, 1.0), right({1, 1, 2, 4}, 1.0);
  for (Index y = 0; y < 2; ++y)
    for (Index x = 0; x < 4; ++x) (x >= 2 ? left : right).data[y * 4 + x] = 0;
  CHECK(std::abs(supervised_relight_loss(VarD::constant(r), gt, all).item() - 0.08) < 1e-12);
  CHECK(std::abs(supervised_relight_loss(VarD::constant(r), gt, left).item()) < 1e-15);
  CHECK(std::abs(supervised_relight_loss(VarD::constant(r), gt, right).item() - 0.16) < 1e-12);
  CHECK_THROWS_AS(supervised_relight_loss(VarD::constant(r), gt, TensorD({1, 1, 2, 4})), std::invalid_argument);
}

TEST_CASE("reconstruction loss of an exact decomposition is zero") {
  std::mt19937_64 rng(3);
  TensorD m = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  CHECK(std::abs(reconstruction_loss(VarD::constant(m), filled({1, 1, 8, 8}, 1.0), m).item()) < 1e-12);
}

TEST_CASE("reconstruction loss of constant images") {
  const double v = reconstruction_loss(filled({1, 3, 16, 16}, 0.6), filled({1, 1, 16, 16}, 1.0),
                                       TensorD({1, 3, 16, 16}, 0.5)).item();
  const double ssim_value = (2 * 0.3 + 1e-4) / (0.61 + 1e-4);
  CHECK(std::abs(v - (0.1 + 1 - ssim_value)) < 1e-6);
  CHECK(std::abs(v - 0.11638) < 1e-4);
}

TEST_CASE("reconstruction loss is non-negative") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    VarD r = VarD::constant(random_tensor({1, 3, 9, 7}, rng, 0, 1));
    VarD l = VarD::constant(random_tensor({1, 1, 9, 7}, rng, 0, 1));
    CHECK(reconstruction_loss(r, l, random_tensor({1, 3, 9, 7}, rng, 0, 1)).item() >= 0.0);
  }
}

TEST_CASE("reflection loss of constant reflectance against a constant input") {
  CHECK(std::abs(reflection_loss(filled({1, 3, 6, 4}, 0.5), TensorD({1, 3, 6, 4}, 0.2)).item() - 0.5) < 1e-12);
}

TEST_CASE("reflection loss vanishes on the equalized target") {
  TensorD m({1, 3, 5, 5}, 0.3);
  VarD r = filled({1, 3, 5, 5}, hist_equalize(TensorD({1, 5, 5}, 0.3)).data[0]);
  CHECK(reflection_loss(r, m).item() == 0.0);
}

TEST_CASE("reflection loss does not depend on resolution for constant inputs") {
  const double small = reflection_loss(filled({1, 3, 4, 4}, 0.7), TensorD({1, 3, 4, 4}, 0.1)).item();
  const double large = reflection_loss(filled({1, 3, 8, 8}, 0.7), TensorD({1, 3, 8, 8}, 0.1)).item();
  CHECK(std::abs(small - large) < 1e-12);
}

TEST_CASE("color loss of a gray image is zero") {
  CHECK(color_loss(filled({1, 3, 4, 4}, 0.37)).item() == 0.0);
}

TEST_CASE("color loss of channel means (0.4, 0.2, 0.2)") {
  TensorD r({1, 3, 2, 2});
  r.data.segment(0, 4).setConstant(0.4);
  r.data.segment(4, 4).setConstant(0.2);
  r.data.segment(8, 4).setConstant(0.2);
  CHECK(std::abs(color_loss(VarD::constant(r)).item() - 0.08) < 1e-12);
}

TEST_CASE("color loss is invariant under pixel permutation") {
  std::mt19937_64 rng(5);
  TensorD r = random_tensor({1, 3, 4, 5}, rng, 0, 1);
  std::vector<Index> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TensorD p = r;
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 20; ++i) p.data[c * 20 + i] = r.data[c * 20 + perm[static_cast<std::size_t>(i)]];
  CHECK(std::abs(color_loss(VarD::constant(r)).item() - color_loss(VarD::constant(p)).item()) < 1e-12);
}

TEST_CASE("smooth loss of constant illumination is zero") {
  std::mt19937_64 rng(6);
  CHECK(smooth_loss(filled({1, 1, 5, 5}, 0.4), VarD::constant(random_tensor({1, 3, 5, 5}, rng, 0, 1))).item() == 0.0);
}

TEST_CASE("smooth loss under constant reflectance is the total variation") {
  std::mt19937_64 rng(7);
  TensorD i = random_tensor({1, 1, 6, 5}, rng, 0, 1);
  const double v = smooth_loss(VarD::constant(i), filled({1, 3, 6, 5}, 0.5)).item();
  CHECK(std::abs(v - total_variation(i)) < 1e-12);
}

TEST_CASE("smooth loss decreases with sharper co-located reflectance edges") {
  TensorD i({1, 1, 1, 2});
  i.data << 0.2, 0.8;
  double previous = 1e9;
  for (double edge : {0.0, 0.2, 0.5, 0.9}) {
    TensorD r({1, 3, 1, 2}, 0.05);
    for (Index c = 0; c < 3; ++c) r.data[c * 2 + 1] = 0.05 + edge;
    const double v = smooth_loss(VarD::constant(i), VarD::constant(r)).item();
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("unsupervised relight loss vanishes with its components") {
  CHECK(unsupervised_combine(0, 0, 0, 0, LossWeights{}) == 0.0);
  // M constant 0.3, I = M, R = 1 everywhere zeroes all four terms
  TensorD m({1, 3, 6, 6}, 0.3);
  const double v = unsupervised_relight_loss(filled({1, 3, 6, 6}, 1.0), filled({1, 1, 6, 6}, 0.3), m, LossWeights{}).item();
  CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("unsupervised relight loss weights its components") {
  CHECK(std::abs(unsupervised_combine(0, 0.5, 0, 0, LossWeights{}) - 0.05) < 1e-12);
  std::mt19937_64 rng(8);
  VarD r = VarD::constant(random_tensor({1, 3, 6, 5}, rng, 0.1, 0.9));
  VarD l = VarD::constant(random_tensor({1, 1, 6, 5}, rng, 0.1, 0.9));
  TensorD m = random_tensor({1, 3, 6, 5}, rng, 0, 0.5);
  LossWeights w;
  auto t = unsupervised_relight_terms(r, l, m, w);
  CHECK(std::abs(t.total.item() - unsupervised_combine(t.reconstruction.item(), t.reflection.item(), t.color.item(),
                                                       t.smooth.item(), w)) < 1e-12);
}

TEST_CASE("unsupervised relight gradient matches finite differences") {
  std::mt19937_64 rng(9);
  TensorD l = random_tensor({1, 1, 6, 6}, rng, 0.1, 0.9);
  TensorD m = random_tensor({1, 3, 6, 6}, rng, 0, 0.6);
  auto g = gradcheck([&](const std::vector<VarD>& v) { return unsupervised_relight_loss(v[0], VarD::constant(l), m, LossWeights{}); },
                     {random_tensor({1, 3, 6, 6}, rng, 0.1, 0.9)});
  CHECK(g.max_rel < 1e-4);
}

TEST_CASE("domain total with default weights") {
  LossBundle b = domain_total({1, 1, 1, 1}, Domain::synthetic, LossWeights{});
  CHECK(std::abs(b.total() - 2.6) < 1e-12);
  CHECK(b.domain == Domain::synthetic);
}

TEST_CASE("domain total without relighting and distillation is the baseline") {
  LossWeights w;
  w.lambda_relight = 0;
  w.lambda_distill = 0;
  LossBundle b = domain_total({0.7, 0.4, 3, 5}, Domain::real, w);
  CHECK(b.total() == 0.7 + 0.4);
  CHECK(b.domain == Domain::real);
  CHECK(b.at("L_ID") == 0.7);
  CHECK(b.at("L_Tri") == 0.4);
  CHECK(b.at("L_IE") == 3);
  CHECK(b.at("L_LD") == 5);
}

}  // TEST_SUITE

TEST_CASE("identity loss with unit scale and no margin is cross-entropy") {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    TensorD s = random_tensor({5, 7}, rng, -3, 3);
    std::vector<int> y;
    for (int b = 0; b < 5; ++b) y.push_back(static_cast<int>(rng() % 7));
    CHECK(std::abs(identity_loss(VarD::constant(s), y).item() - cross_entropy(s, y)) < 1e-9);
  }
}

TEST_CASE("triplet loss matches a brute-force oracle and ignores translation") {
  std::mt19937_64 rng(11);
  const std::vector<int> labels{0, 0, 0, 1, 1, 2, 2, 2};
  for (int i = 0; i < 20; ++i) {
    TensorD f = random_tensor({8, 5}, rng);
    const double v = triplet_loss(VarD::constant(f), labels).item();
    CHECK(std::abs(v - triplet_oracle(f, labels, 0.3)) < 1e-12);
    TensorD moved = f;
    for (Index r = 0; r < 8; ++r) moved.data.segment(r * 5, 5) += Eigen::VectorXd::LinSpaced(5, -2, 3);
    CHECK(std::abs(triplet_loss(VarD::constant(moved), labels).item() - v) < 1e-9);
  }
}

TEST_CASE("loss lower bounds on random inputs") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const Index B = 1 + static_cast<Index>(rng() % 4);
    VarD s = VarD::constant(random_tensor({B, 6, 4}, rng)), t = VarD::constant(random_tensor({B, 6, 4}, rng));
    auto ld = lighting_distillation_terms(s, t, 0.7);
    CHECK(ld.brightness.item() >= 0.0);
    CHECK(ld.total.item() >= -std::log(static_cast<double>(B)) - 1e-12);
    VarD r = VarD::constant(random_tensor({B, 3, 5, 5}, rng, 0, 1));
    VarD l = VarD::constant(random_tensor({B, 1, 5, 5}, rng, 0, 1));
    TensorD m = random_tensor({B, 3, 5, 5}, rng, 0, 1);
    auto u = unsupervised_relight_terms(r, l, m, LossWeights{});
    CHECK(u.reconstruction.item() >= 0.0);
    CHECK(u.reflection.item() >= 0.0);
    CHECK(u.color.item() >= 0.0);
    CHECK(u.smooth.item() >= 0.0);
  }
}

TEST_CASE("distillation brightness term ignores token order") {
  std::mt19937_64 rng(13);
  TensorD s = random_tensor({2, 5, 3}, rng), t = random_tensor({2, 5, 3}, rng);
  TensorD sp = s;
  for (Index b = 0; b < 2; ++b) {  // reverse the tokens of the student
    for (Index n = 0; n < 5; ++n) sp.data.segment((b * 5 + n) * 3, 3) = s.data.segment((b * 5 + 4 - n) * 3, 3);
  }
  CHECK(std::abs(lighting_distillation_terms(VarD::constant(s), VarD::constant(t)).brightness.item() -
                 lighting_distillation_terms(VarD::constant(sp), VarD::constant(t)).brightness.item()) < 1e-12);
}

TEST_CASE("distillation does not differentiate the teacher") {
  std::mt19937_64 rng(14);
  VarD s = VarD::parameter(random_tensor({2, 3, 4}, rng)), t = VarD::parameter(random_tensor({2, 3, 4}, rng));
  backward(lighting_distillation(s, t));
  CHECK(s.grad().data.cwiseAbs().maxCoeff() > 0);
  CHECK(t.grad().data.isZero());
}

TEST_CASE("every loss passes the finite-difference check") {
  for (const auto& r : loss_gradient_suite(3)) {
    INFO(r.loss);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("loss weights must be non-negative") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.lambda_sa = -0.1;
  CHECK_THROWS_AS(w.validate(), ValidationError);
}

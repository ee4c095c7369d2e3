#include "doctest.h"
#include "gradcheck.hpp"
#include "model_fixtures.hpp"

#include <set>

using namespace cenet;
using namespace cenet::testing;

TEST_SUITE("examples") {

TEST_CASE("256x128 images with patch 16 give 129 tokens") {
  ModelConfig cfg = tiny_config();
  cfg.image_height = 256;
  cfg.image_width = 128;
  cfg.patch_size = 16;
  CHECK(cfg.num_tokens() == 129);
  CENet<double> net(cfg, 1);
  Var<double> t = net.patch_embed(random_images<double>(cfg, 1, 2), {0}, Domain::real);
  CHECK(t.shape() == Shape({1, 129, cfg.embed_dim}));
}

TEST_CASE("the camera embedding contribution depends only on the camera") {
  ModelConfig cfg = tiny_config();
  ModelConfig off = cfg;
  off.camera_coefficient = 0;
  CENet<double> with(cfg, 3), without(off, 3);
  auto x = random_images<double>(cfg, 2, 4);
  auto a = with.patch_embed(x, {1, 1}, Domain::real).value();
  auto b = without.patch_embed(x, {1, 1}, Domain::real).value();
  const Index n = cfg.num_tokens() * cfg.embed_dim;
  Eigen::VectorXd c0 = a.data.segment(0, n) - b.data.segment(0, n);
  Eigen::VectorXd c1 = a.data.segment(n, n) - b.data.segment(n, n);
  CHECK((c0 - c1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(c0.cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("a zero camera coefficient removes the camera dependence") {
  ModelConfig cfg = tiny_config();
  cfg.camera_coefficient = 0;
  CENet<double> net(cfg, 5);
  auto x = random_images<double>(cfg, 1, 6);
  CHECK(net.patch_embed(x, {0}, Domain::real).value().data == net.patch_embed(x, {1}, Domain::real).value().data);
}

TEST_CASE("shared encoder preserves the token shape") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 7);
  auto s = net.shared_encode(net.patch_embed(random_images<double>(cfg, 3, 8), {0, 1, 0}, Domain::real));
  CHECK(s.full.shape() == Shape({3, cfg.num_tokens(), cfg.embed_dim}));
  CHECK(s.patches_only().shape() == Shape({3, cfg.num_patches(), cfg.embed_dim}));
}

TEST_CASE("eval-mode shared encoding is bit-reproducible") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 9);
  net.set_training(false);
  auto t = net.patch_embed(random_images<double>(cfg, 2, 10), {0, 1}, Domain::real);
  CHECK(net.shared_encode(t).full.value().data == net.shared_encode(t).full.value().data);
}

TEST_CASE("permuting patch tokens with their positions permutes the encoding") {
  ModelConfig cfg = tiny_config();
  cfg.shared_depth = 2;
  CENet<double> net(cfg, 11);
  Tensor<double> t = net.patch_embed(random_images<double>(cfg, 1, 12), {0}, Domain::real).value();
  const Index D = cfg.embed_dim, i = 2, j = 5;  // token rows (row 0 is the class token)
  auto swap_rows = [&](Tensor<double> x) {
    Eigen::VectorXd tmp = x.data.segment(i * D, D);
    x.data.segment(i * D, D) = x.data.segment(j * D, D);
    x.data.segment(j * D, D) = tmp;
    return x;
  };
  // tokens already carry their position embedding, so swapping rows swaps both
  Tensor<double> direct = swap_rows(net.shared_encode(Var<double>::constant(t)).full.value());
  Tensor<double> permuted = net.shared_encode(Var<double>::constant(swap_rows(t))).full.value();
  CHECK((direct.data - permuted.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("toy ReID output shapes") {
  ModelConfig cfg = ModelConfig::toy();
  cfg.num_classes = {0, 8};
  cfg.num_cameras = {1, 3};
  CENet<float> net(cfg, 13);
  auto x = random_images<float>(cfg, 2, 14);
  auto out = net.reid_head(net.shared_encode(net.patch_embed(x, {0, 2}, Domain::synthetic)), Domain::synthetic);
  CHECK(out.feature.shape() == Shape({2, 64}));
  CHECK(out.logits.shape() == Shape({2, 8}));
}

TEST_CASE("synthetic samples never reach the real head") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 15);
  auto x = random_images<double>(cfg, 4, 16);
  auto out = net.reid_head(net.shared_encode(net.patch_embed(x, {0, 1, 2, 0}, Domain::synthetic)), Domain::synthetic);
  backward(identity_loss(out.logits, {0, 1, 2, 3}));
  const auto* real = net.find("reid.head.real.weight");
  const auto* syn = net.find("reid.head.synthetic.weight");
  REQUIRE(real);
  REQUIRE(syn);
  CHECK(real->var.grad().data.isZero());
  CHECK_FALSE(real->var.touched());
  CHECK(syn->var.grad().data.cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("the descriptor does not depend on requesting logits") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 17);
  auto shared = net.shared_encode(net.patch_embed(random_images<double>(cfg, 2, 18), {0, 1}, Domain::real));
  CHECK(net.reid_head(shared, Domain::real, true).feature.value().data ==
        net.reid_head(shared, Domain::real, false).feature.value().data);
}

TEST_CASE("relit maps are sigmoid bounded at full resolution") {
  ModelConfig cfg = tiny_config();
  cfg.image_height = 256;
  cfg.image_width = 128;
  cfg.patch_size = 16;
  CENet<float> net(cfg, 19);
  auto x = random_images<float>(cfg, 1, 20);
  auto r = net.enhance(x, {0}, Domain::real);
  CHECK(r.reflectance.shape() == Shape({1, 3, 256, 128}));
  CHECK(r.illumination.shape() == Shape({1, 1, 256, 128}));
  for (const auto* m : {&r.reflectance.value(), &r.illumination.value()}) {
    CHECK(m->data.minCoeff() > 0.0f);
    CHECK(m->data.maxCoeff() < 1.0f);
  }
}

TEST_CASE("a ReID-only pass leaves the relighting subnet untouched") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 21);
  auto x = random_images<double>(cfg, 4, 22);
  auto out = net.forward(x, {0, 1, 0, 1}, Domain::real, false);
  CHECK_FALSE(out.relight.has_value());
  backward(identity_loss(out.reid.logits, {0, 1, 2, 0}) + triplet_loss(out.reid.global, {0, 0, 1, 1}));
  for (const auto& p : net.parameters())
    if (p.group == ParamGroup::relight) CHECK_FALSE(p.var.touched());
}

TEST_CASE("decoder tokens match the ReID tokens in shape") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 23);
  auto out = net.forward(random_images<double>(cfg, 2, 24), {0, 1}, Domain::real);
  REQUIRE(out.relight.has_value());
  CHECK(out.relight->tokens.shape() == out.reid.high_tokens.shape());
  CHECK(out.relight->tokens.shape() == Shape({2, cfg.num_patches(), cfg.embed_dim}));
}

TEST_CASE("inference ignores a missing relighting subnet") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 25);
  net.set_training(false);
  auto x = random_images<double>(cfg, 2, 26);
  Tensor<double> before = net.infer(x, {0, 1}, Domain::real);
  net.set_group_available(ParamGroup::relight, false);
  CHECK(net.infer(x, {0, 1}, Domain::real).data == before.data);
  CHECK_THROWS_AS(net.enhance(x, {0, 1}, Domain::real), std::invalid_argument);
}

TEST_CASE("inference is deterministic") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 27);
  net.set_training(false);
  auto x = random_images<double>(cfg, 1, 28);
  CHECK(net.infer(x, {1}, Domain::synthetic).data == net.infer(x, {1}, Domain::synthetic).data);
}

TEST_CASE("inference equals the eval-mode training path descriptor") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 29);
  net.set_training(false);
  auto x = random_images<double>(cfg, 3, 30);
  auto out = net.forward(x, {0, 1, 2}, Domain::synthetic);
  CHECK(net.infer(x, {0, 1, 2}, Domain::synthetic).data == out.reid.feature.value().data);
}

}  // TEST_SUITE

TEST_CASE("input validation") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 31);
  auto x = random_images<double>(cfg, 1, 32);
  CHECK_THROWS_AS(net.patch_embed(x, {2}, Domain::real), std::invalid_argument);
  CHECK_THROWS_AS(net.patch_embed(x, {-1}, Domain::real), std::invalid_argument);
  CHECK_THROWS_AS(net.patch_embed(x, {0, 1}, Domain::real), std::invalid_argument);
  ModelConfig single = cfg;
  single.num_classes = {5, 0};
  CENet<double> one(single, 33);
  auto shared = one.shared_encode(one.patch_embed(x, {0}, Domain::synthetic));
  CHECK_THROWS_AS(one.reid_head(shared, Domain::synthetic), std::invalid_argument);
  ModelConfig other = cfg;
  other.image_height = 2 * cfg.image_height;
  auto wrong = random_images<double>(other, 1, 34);
  CHECK_THROWS_AS(net.relight_decode(net.shared_encode(net.patch_embed(x, {0}, Domain::real)), wrong),
                  std::invalid_argument);
}

TEST_CASE("model configuration invariants") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = [&](auto mutate) {
    ModelConfig c = cfg;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ValidationError);
  };
  bad([](ModelConfig& c) { c.image_height += 1; });
  bad([](ModelConfig& c) { c.heads = 3; });
  bad([](ModelConfig& c) { c.shared_depth = 0; });
  bad([](ModelConfig& c) { c.num_classes = {0, 0}; });
  CHECK_NOTHROW(ModelConfig::full().validate());
  CHECK_NOTHROW(ModelConfig::toy().validate());
  CHECK(ModelConfig::toy().embed_dim == 64);
  CHECK(ModelConfig::toy().image_height == 64);
  CHECK(ModelConfig::toy().image_width == 32);
}

TEST_CASE("parameters partition into three disjoint named groups") {
  for (bool share : {true, false}) {
    ModelConfig cfg = tiny_config();
    cfg.share_encoder = share;
    CENet<double> net(cfg, 35);
    std::set<std::string> names;
    Index total = 0;
    for (const auto& p : net.parameters()) {
      CHECK(names.insert(p.name).second);
      const std::string prefix = p.name.substr(0, p.name.find('.'));
      const ParamGroup expected = prefix == "relight" ? ParamGroup::relight
                                  : prefix == "reid"  ? ParamGroup::reid
                                                      : ParamGroup::shared;
      CHECK(p.group == expected);
      total += p.var.size();
    }
    CHECK(total == net.parameter_count(ParamGroup::shared) + net.parameter_count(ParamGroup::reid) +
                       net.parameter_count(ParamGroup::relight));
    CHECK(total == net.parameter_count());
  }
}

TEST_CASE("gradients route by branch") {
  ModelConfig cfg = tiny_config();
  CENet<double> net(cfg, 37);
  auto x = random_images<double>(cfg, 4, 38);
  auto group_grad = [&](ParamGroup g) {
    double m = 0;
    for (const auto& p : net.parameters())
      if (p.group == g && p.var.touched()) m = std::max(m, p.var.grad().data.cwiseAbs().maxCoeff());
    return m;
  };
  {
    auto out = net.forward(x, {0, 1, 0, 1}, Domain::real);
    backward(identity_loss(out.reid.logits, {0, 0, 1, 1}));
    CHECK(group_grad(ParamGroup::relight) == 0.0);
    CHECK(group_grad(ParamGroup::shared) > 0.0);
  }
  net.zero_grad();
  {
    auto out = net.forward(x, {0, 1, 0, 1}, Domain::real);
    backward(unsupervised_relight_loss(out.relight->reflectance, out.relight->illumination, x, LossWeights{}));
    CHECK(group_grad(ParamGroup::reid) == 0.0);
    CHECK(group_grad(ParamGroup::shared) > 0.0);
    CHECK(group_grad(ParamGroup::relight) > 0.0);
  }
}

TEST_CASE("forward passes follow central differences") {
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 4;
  cfg.mlp_ratio = 1;
  CENet<double> net(cfg, 39);
  net.set_training(false);
  auto x = random_images<double>(cfg, 2, 40);
  auto objective = [&] {
    auto out = net.forward(x, {0, 1}, Domain::real);
    return project(out.reid.feature, 1) + project(out.relight->reflectance, 2);
  };
  for (const char* name : {"embed.patch.weight", "shared.blocks.0.attn.qkv.weight", "relight.task_embed",
                           "relight.fuse1.weight", "reid.blocks.0.mlp.fc1.weight"}) {
    REQUIRE(net.find(name));
    Var<double> w = net.find(name)->var;
    const Tensor<double> original = w.value();
    net.zero_grad();
    backward(objective());
    const Tensor<double> analytic = w.grad();
    double worst = 0;
    for (Index i = 0; i < std::min<Index>(original.size(), 12); ++i) {
      auto at = [&](double d) {
        w.mutable_value().data[i] = original.data[i] + d;
        NoGradGuard guard;
        const double v = objective().item();
        w.mutable_value() = original;
        return v;
      };
      const double numeric = (at(1e-5) - at(-1e-5)) / 2e-5;
      worst = std::max(worst, std::abs(numeric - analytic.data[i]) /
                                  std::max({std::abs(numeric), std::abs(analytic.data[i]), 1e-3}));
    }
    INFO(name);
    CHECK(worst < 1e-5);
  }
}

#include <random>

#include "doctest.h"
#include "speg/decoder.hpp"
#include "speg/errors.hpp"
#include "test_util.hpp"

using namespace speg;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

struct ProjFixture {
  nn::ParameterStore store;
  nn::Rng rng{1};
  nn::LayerContext ctx{store, rng, nn::ParamGroup::head};
  nn::Conv2d proj;
  ProjFixture(int in, int out) : proj(ctx, "proj", in, out, 1, {}) {}
};

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.channel_scale = 8;
  return cfg;
}

EdgeOutputs random_edge(std::mt19937_64& g, int n, int c, int h, int w) {
  return {Var(random_tensor({n, c, h, w}, g)), Var(random_tensor({n, 1, h, w}, g, -3, 3))};
}

struct DecoderFixture {
  nn::ParameterStore store;
  nn::Rng rng;
  ProgressiveDecoder ped;
  DecoderFixture(const NetworkConfig& cfg, std::uint64_t seed) : rng(seed), ped(cfg, store, rng) {}
};

}  // namespace

TEST_CASE("zero influence returns the stage features unchanged") {
  ProjFixture f(4, 3);
  std::mt19937_64 g(1);
  Var u(random_tensor({2, 3, 6, 6}, g));
  const auto e = random_edge(g, 2, 4, 3, 3);
  CHECK(bitwise_equal(fuse_stage(u, e, Var(), 0.0, f.proj).value(), u.value()));
}

TEST_CASE("suppressed edges and zero projection scale by 1 - alpha") {
  ProjFixture f(2, 3);
  f.proj.weight.mutable_value().fill(0.0);
  std::mt19937_64 g(2);
  Var u(random_tensor({1, 3, 4, 4}, g));
  EdgeOutputs e{Var(random_tensor({1, 2, 2, 2}, g)), Var(Tensor({1, 1, 2, 2}, -1e6))};
  const Tensor v = fuse_stage(u, e, Var(), 0.33, f.proj).value();
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(0.67 * u.value()[i]).epsilon(1e-14));
}

TEST_CASE("blend of a two-channel stage by hand") {
  ProjFixture f(1, 2);
  Tensor& w = f.proj.weight.mutable_value();
  w[0] = 0.3;
  w[1] = -0.6;
  f.proj.bias.mutable_value()[0] = 0.1;
  Var u(Tensor({1, 2, 2, 2}, {1, 2, 3, 4, -1, 0.5, 2, -3}));
  EdgeOutputs e{Var(Tensor({1, 1, 2, 2}, {0.5, -1, 2, 0})), Var(Tensor({1, 1, 2, 2}, {0, 1, -2, 3}))};
  const Tensor v = fuse_stage(u, e, Var(), 0.2, f.proj).value();
  const double expect[8] = {0.9500000000000001,  1.852423431452002,  2.611521753213271,
                            3.982059301457947,   -0.9600000000000001, 0.5931058578630005,
                            1.407681168808847,   -2.9715444760934604};
  for (int i = 0; i < 8; ++i) CHECK(v[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("influence outside the unit interval is rejected") {
  ProjFixture f(2, 2);
  Var u(Tensor({1, 2, 2, 2}));
  EdgeOutputs e{Var(Tensor({1, 2, 2, 2})), Var(Tensor({1, 1, 2, 2}))};
  CHECK_THROWS_AS(fuse_stage(u, e, Var(), -0.1, f.proj), ConfigError);
  CHECK_THROWS_AS(fuse_stage(u, e, Var(), 1.5, f.proj), ConfigError);
}

TEST_CASE("blend is affine in the influence") {
  ProjFixture f(3, 4);
  std::mt19937_64 g(3);
  Var u(random_tensor({1, 4, 8, 8}, g));
  const auto e = random_edge(g, 1, 3, 4, 4);
  const Tensor v0 = fuse_stage(u, e, Var(), 0.0, f.proj).value();
  const Tensor v1 = fuse_stage(u, e, Var(), 1.0, f.proj).value();
  for (double a : {0.1, 0.33, 0.5, 0.9}) {
    const Tensor va = fuse_stage(u, e, Var(), a, f.proj).value();
    double worst = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i)
      worst = std::max(worst, std::abs(va[i] - ((1 - a) * v0[i] + a * v1[i])));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("prior is appended as a probability channel") {
  ProjFixture f(2, 3);
  std::mt19937_64 g(4);
  Var u(random_tensor({1, 3, 4, 4}, g));
  const auto e = random_edge(g, 1, 2, 4, 4);
  Var prior(Tensor({1, 1, 2, 2}, 0.0));
  const Tensor v = fuse_stage(u, e, prior, 0.2, f.proj).value();
  CHECK(v.shape() == Shape{1, 4, 4, 4});
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w) CHECK(v.at(0, 3, h, w) == 0.5);
}

TEST_CASE("blend gradients") {
  ProjFixture f(2, 3);
  std::mt19937_64 g(5);
  Var u = testutil::param(random_tensor({1, 3, 4, 4}, g));
  EdgeOutputs e{testutil::param(random_tensor({1, 2, 2, 2}, g)), testutil::param(random_tensor({1, 1, 2, 2}, g))};
  Var prior = testutil::param(random_tensor({1, 1, 2, 2}, g));
  auto fn = [&] { return testutil::project(fuse_stage(u, e, prior, 0.33, f.proj)); };
  CHECK(testutil::gradcheck(fn, {u, e.features, e.logits, prior, f.proj.weight, f.proj.bias}) < 1e-6);
}

TEST_CASE("three-stage decoding doubles resolution per stage") {
  NetworkConfig cfg = small_config();
  DecoderFixture d(cfg, 6);
  std::mt19937_64 g(6);
  Var ctx(random_tensor({2, cfg.context_width(), 16, 16}, g));
  const auto e = random_edge(g, 2, cfg.edge_width(), 16, 16);
  const auto out = d.ped.forward(ctx, e, 128, 128, false);
  CHECK(out.p1.shape() == Shape{2, 1, 32, 32});
  CHECK(out.p2.shape() == Shape{2, 1, 64, 64});
  CHECK(out.p3.shape() == Shape{2, 1, 128, 128});
  CHECK(out.mask.shape() == Shape{2, 1, 128, 128});
  for (double v : out.mask.values()) CHECK((v == 0.0 || v == 1.0));
  const auto w = cfg.decoder_widths();
  for (int i = 0; i < 3; ++i) CHECK(out.stage_features[i].shape().c == w[i]);
}

TEST_CASE("final stage ignores the edge branch by default") {
  NetworkConfig cfg = small_config();
  DecoderFixture d(cfg, 7);
  REQUIRE(d.ped.alphas()[2] == 0.0);
  std::mt19937_64 g(7);
  const auto& stage = d.ped.stages()[2];
  Var in(random_tensor({1, cfg.decoder_widths()[1], 16, 16}, g));
  Var prior(random_tensor({1, 1, 16, 16}, g));
  const auto e1 = random_edge(g, 1, cfg.edge_width(), 4, 4);
  const auto e2 = random_edge(g, 1, cfg.edge_width(), 4, 4);
  const auto a = stage.forward(in, 32, 32, e1, prior, d.ped.alphas()[2], false);
  const auto b = stage.forward(in, 32, 32, e2, prior, d.ped.alphas()[2], false);
  CHECK(bitwise_equal(a.logits.value(), b.logits.value()));
}

TEST_CASE("single-stage decoding predicts at input resolution only") {
  NetworkConfig cfg = small_config();
  cfg.decoder_stages = 1;
  DecoderFixture d(cfg, 8);
  std::mt19937_64 g(8);
  Var ctx(random_tensor({1, cfg.context_width(), 8, 8}, g));
  const auto out = d.ped.forward(ctx, random_edge(g, 1, cfg.edge_width(), 8, 8), 64, 64, false);
  CHECK_FALSE(out.p1.defined());
  CHECK_FALSE(out.p2.defined());
  CHECK(out.p3.shape() == Shape{1, 1, 64, 64});
  CHECK(d.ped.stages().size() == 1);
}

TEST_CASE("disabling guidance equals zero influence") {
  NetworkConfig off = small_config();
  off.enable_edge_guidance = false;
  NetworkConfig zero = small_config();
  zero.edge_influence = {0.0, 0.0, 0.0};
  DecoderFixture a(off, 9), b(zero, 9);
  std::mt19937_64 g(9);
  Var ctx(random_tensor({1, off.context_width(), 8, 8}, g));
  const auto e = random_edge(g, 1, off.edge_width(), 8, 8);
  const auto e2 = random_edge(g, 1, off.edge_width(), 8, 8);
  const auto oa = a.ped.forward(ctx, e, 64, 64, false);
  const auto ob = b.ped.forward(ctx, e, 64, 64, false);
  const auto oc = a.ped.forward(ctx, e2, 64, 64, false);
  CHECK(bitwise_equal(oa.p3.value(), ob.p3.value()));
  CHECK(bitwise_equal(oa.p1.value(), ob.p1.value()));
  CHECK(bitwise_equal(oa.p3.value(), oc.p3.value()));
}

TEST_CASE("binarization thresholds the probability strictly") {
  const Tensor zero({1, 1, 4, 4}, 0.0);
  const Tensor m0 = binarize(zero, 0.5);
  for (double v : m0.values()) CHECK(v == 0.0);
  const Tensor high({1, 1, 4, 4}, 4.0);
  const Tensor m1 = binarize(high, 0.5);
  for (double v : m1.values()) CHECK(v == 1.0);
  CHECK_THROWS_AS(binarize(zero, 1.2), ConfigError);
  CHECK_THROWS_AS(binarize(zero, 0.0), ConfigError);
}

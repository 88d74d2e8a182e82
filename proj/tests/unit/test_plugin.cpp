#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "glaff/error.hpp"
#include "glaff/ops.hpp"
#include "glaff/plugin.hpp"
#include "support.hpp"

using glaff::Shape;
using glaff::Tensor;
namespace gp = glaff::plugin;

namespace {

gp::GlaffConfig toy_config() {
  gp::GlaffConfig c;
  c.dim = 8;
  c.ff_dim = 16;
  c.heads = 2;
  c.layers = 1;
  c.dropout = 0.0;
  return c;
}

Tensor feature_window(std::size_t b, std::size_t n, glaff::Rng& rng) {
  Tensor f = Tensor::empty({b, n, 6});
  for (double& v : f.mutable_data()) v = static_cast<double>(rng.below(24));
  return f;
}

std::vector<Tensor> tensors_of(const glaff::nn::ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void zero(Tensor& t) {
  for (double& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("config validation") {
  gp::GlaffConfig c;
  CHECK_NOTHROW(c.validate());
  for (double q : {0.5, 1.0, 0.3, 1.2}) {
    c.quantile = q;
    CHECK_THROWS_AS(c.validate(), glaff::ConfigError);
  }
  c = gp::GlaffConfig{};
  c.heads = 7;
  CHECK_THROWS_AS(c.validate(), glaff::ConfigError);
  c = gp::GlaffConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), glaff::ConfigError);
}

TEST_CASE("mapper") {
  glaff::Rng rng(21);
  auto config = toy_config();
  auto mapper = gp::Mapper::create(config, 2, rng);

  SUBCASE("identical feature rows map identically") {
    Tensor f = Tensor::empty({1, 4, 6});
    auto d = f.mutable_data();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t k = 0; k < 6; ++k) d[i * 6 + k] = static_cast<double>(k + 1);
    Tensor m = gp::map_timestamps(mapper, f, false, rng);
    REQUIRE(m.shape() == Shape{1, 4, 2});
    for (std::size_t i = 1; i < 4; ++i) {
      CHECK(m.at({0, i, 0}) == m.at({0, 0, 0}));
      CHECK(m.at({0, i, 1}) == m.at({0, 0, 1}));
    }
  }
  SUBCASE("permuting rows permutes the mapping") {
    Tensor f = feature_window(1, 6, rng);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor g = Tensor::empty({1, 6, 6});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 6; ++k) g.mutable_data()[i * 6 + k] = f.at({0, perm[i], k});
    Tensor mf = gp::map_timestamps(mapper, f, false, rng);
    Tensor mg = gp::map_timestamps(mapper, g, false, rng);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(mg.at({0, i, c}) - mf.at({0, perm[i], c})) < 1e-12);
  }
  SUBCASE("gradients") {
    Tensor f = feature_window(1, 4, rng);
    glaff::nn::ParameterList params;
    mapper.collect("m", params);
    CHECK(test::gradcheck([&] { return test::project(gp::map_timestamps(mapper, f, false, rng)); },
                          tensors_of(params)) < 1e-4);
  }
  SUBCASE("zero projection gives a zero mapping") {
    zero(mapper.projection.weight);
    zero(mapper.projection.bias);
    const Tensor m = gp::map_timestamps(mapper, feature_window(2, 3, rng), false, rng);
    for (double v : m.data()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(gp::map_timestamps(mapper, Tensor::zeros({1, 4, 5}), false, rng), glaff::DimensionError);
}

TEST_CASE("mlp substitute matches the attention stack size") {
  for (auto [d, dff] : {std::pair<std::size_t, std::size_t>{64, 256}, {512, 2048}, {8, 16}}) {
    const std::size_t w = gp::matched_mlp_width(d, dff);
    const double mlp = static_cast<double>(w * (2 * d + 1) + 3 * d);
    const double att = static_cast<double>(glaff::nn::encoder_layer_parameter_count(d, dff));
    CHECK(std::abs(mlp - att) / att < 0.05);
  }
  CHECK(gp::matched_mlp_width(64, 256) == 386);
  auto config = toy_config();
  config.dim = 64;
  config.ff_dim = 256;
  config.heads = 8;
  config.layers = 2;
  glaff::Rng rng(1);
  glaff::nn::ParameterList att, mlp;
  gp::Mapper::create(config, 3, rng).collect("m", att);
  config.ablations.no_attention = true;
  gp::Mapper::create(config, 3, rng).collect("m", mlp);
  const double a = static_cast<double>(glaff::nn::parameter_count(att));
  const double m = static_cast<double>(glaff::nn::parameter_count(mlp));
  CHECK(std::abs(a - m) / a < 0.05);
}

TEST_CASE("robust denormalization") {
  glaff::Rng rng(31);

  SUBCASE("matching statistics transport exactly") {
    Tensor x = Tensor::empty({2, 10, 3});
    for (double& v : x.mutable_data()) v = static_cast<double>(rng.below(100)) - 50.0;
    auto d = gp::robust_denormalize(x, x, x, 0.75);
    CHECK(d.hist.to_vector() == x.to_vector());
    CHECK(d.pred.to_vector() == x.to_vector());
  }
  SUBCASE("affine equivariance in the observations") {
    Tensor xm = test::randn({2, 12, 3}, rng);
    Tensor ym = test::randn({2, 5, 3}, rng);
    Tensor x = test::randn({2, 12, 3}, rng);
    const double a = 3.5, beta = -2.0;
    Tensor x2 = glaff::add_scalar(glaff::scale(x, a), beta);
    auto d1 = gp::robust_denormalize(xm, ym, x, 0.75);
    auto d2 = gp::robust_denormalize(xm, ym, x2, 0.75);
    for (std::size_t i = 0; i < d1.pred.numel(); ++i)
      CHECK(std::abs(d2.pred.data()[i] - (a * d1.pred.data()[i] + beta)) < 1e-6);
    for (std::size_t i = 0; i < d1.hist.numel(); ++i)
      CHECK(std::abs(d2.hist.data()[i] - (a * d1.hist.data()[i] + beta)) < 1e-6);
  }
  SUBCASE("upper-tail contamination leaves the result unchanged") {
    const std::size_t h = 96;
    Tensor xm = test::randn({1, h, 2}, rng);
    Tensor ym = test::randn({1, 24, 2}, rng);
    Tensor x = test::randn({1, h, 2}, rng);
    auto clean = gp::robust_denormalize(xm, ym, x, 0.75);
    auto clean_moments = gp::moment_denormalize(xm, ym, x);

    for (bool upper : {true, false}) {
      Tensor dirty = x.clone();
      auto d = dirty.mutable_data();
      for (std::size_t c = 0; c < 2; ++c) {
        std::vector<std::size_t> idx(h);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
          return x.at({0, i, c}) < x.at({0, j, c});
        });
        // Fewer than ceil((1 - q) h) = 24 points from the extreme end.
        for (std::size_t k = 0; k < 23; ++k) {
          const std::size_t t = upper ? idx[h - 1 - k] : idx[k];
          d[t * 2 + c] = upper ? 1e9 : -1e9;
        }
      }
      auto polluted = gp::robust_denormalize(xm, ym, dirty, 0.75);
      CHECK(polluted.hist.to_vector() == clean.hist.to_vector());
      CHECK(polluted.pred.to_vector() == clean.pred.to_vector());
      auto moments = gp::moment_denormalize(xm, ym, dirty);
      CHECK(moments.pred.to_vector() != clean_moments.pred.to_vector());
    }
  }
  SUBCASE("observations receive no gradient") {
    Tensor xm = test::param({1, 6, 2}, rng);
    Tensor ym = test::param({1, 3, 2}, rng);
    Tensor x = test::param({1, 6, 2}, rng);
    glaff::Graph g;
    Tensor loss;
    {
      glaff::GraphScope s(g);
      auto d = gp::robust_denormalize(xm, ym, x, 0.75);
      loss = glaff::add(test::project(d.hist), test::project(d.pred));
    }
    g.backward(loss);
    for (double v : x.grad()) CHECK(v == 0.0);
    x.set_requires_grad(false);
    CHECK(test::gradcheck(
              [&] {
                auto d = gp::robust_denormalize(xm, ym, x, 0.75);
                return glaff::add(test::project(d.hist), test::project(d.pred, 7));
              },
              {xm, ym}) < 1e-4);
    CHECK(test::gradcheck(
              [&] {
                auto d = gp::moment_denormalize(xm, ym, x);
                return glaff::add(test::project(d.hist), test::project(d.pred, 7));
              },
              {xm, ym}) < 1e-4);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(gp::robust_denormalize(Tensor::zeros({1, 1, 2}), Tensor::zeros({1, 3, 2}),
                                           Tensor::zeros({1, 1, 2}), 0.75),
                    glaff::ConfigError);
    CHECK_THROWS_AS(gp::robust_denormalize(Tensor::zeros({1, 4, 2}), Tensor::zeros({1, 3, 2}),
                                           Tensor::zeros({1, 4, 2}), 0.4),
                    glaff::ConfigError);
    CHECK_THROWS_AS(gp::robust_denormalize(Tensor::zeros({1, 4, 2}), Tensor::zeros({1, 3, 3}),
                                           Tensor::zeros({1, 4, 2}), 0.75),
                    glaff::DimensionError);
  }
}

TEST_CASE("adaptive combiner") {
  glaff::Rng rng(41);
  const std::size_t b = 3, h = 8, p = 4, c = 2;
  auto comb = gp::Combiner::create(h, 16, rng);
  Tensor xh = test::param({b, h, c}, rng);
  Tensor x = test::randn({b, h, c}, rng);
  Tensor yh = test::param({b, p, c}, rng);
  Tensor yb = test::param({b, p, c}, rng);

  auto out = gp::combine(comb, xh, x, yh, yb);
  REQUIRE(out.weights.shape() == Shape{b, c, 2});
  const auto w = out.weights.data();
  for (std::size_t i = 0; i < w.size(); i += 2) {
    CHECK(w[i] >= 0.0);
    CHECK(w[i + 1] >= 0.0);
    CHECK(std::abs(w[i] + w[i + 1] - 1.0) < 1e-9);
  }
  for (std::size_t i = 0; i < out.prediction.numel(); ++i) {
    const double lo = std::min(yh.data()[i], yb.data()[i]);
    const double hi = std::max(yh.data()[i], yb.data()[i]);
    CHECK(out.prediction.data()[i] >= lo - 1e-15);
    CHECK(out.prediction.data()[i] <= hi + 1e-15);
  }

  auto same = gp::combine(comb, xh, x, yb, yb);
  for (std::size_t i = 0; i < same.prediction.numel(); ++i)
    CHECK(std::abs(same.prediction.data()[i] - yb.data()[i]) < 1e-12);

  glaff::nn::ParameterList params;
  comb.collect("c", params);
  auto wrt = tensors_of(params);
  wrt.insert(wrt.end(), {xh, yh, yb});
  CHECK(test::gradcheck([&] { return test::project(gp::combine(comb, xh, x, yh, yb).prediction); }, wrt) < 1e-4);

  zero(comb.out.weight);
  zero(comb.out.bias);
  auto half = gp::combine(comb, xh, x, yh, yb);
  for (double v : half.weights.data()) CHECK(v == 0.5);
  auto avg = gp::average_combine(yh, yb);
  CHECK(half.prediction.to_vector() == avg.prediction.to_vector());
  for (std::size_t i = 0; i < avg.prediction.numel(); ++i)
    CHECK(avg.prediction.data()[i] == (yh.data()[i] + yb.data()[i]) / 2);

  CHECK_THROWS_AS(gp::combine(comb, test::randn({b, 6, c}, rng), test::randn({b, 6, c}, rng), yh, yb),
                  glaff::DimensionError);
}

TEST_CASE("composed forward pass") {
  glaff::Rng rng(51);
  const std::size_t b = 2, h = 8, p = 4, c = 2;
  Tensor x = test::randn({b, h, c}, rng);
  Tensor s = feature_window(b, h, rng);
  Tensor t = feature_window(b, p, rng);
  Tensor local = test::randn({b, p, c}, rng);

  SUBCASE("full model gradients") {
    gp::Glaff model(toy_config(), h, p, c, 5);
    Tensor target = test::randn({b, p, c}, rng);
    CHECK(test::gradcheck([&] { return glaff::mse_loss(model.forward(x, s, t, local, false).prediction, target); },
                          tensors_of(model.parameters())) < 1e-4);
  }
  SUBCASE("ablations") {
    auto config = toy_config();
    config.ablations.no_adaptive = true;
    gp::Glaff avg(config, h, p, c, 5);
    auto out = avg.forward(x, s, t, local, false);
    for (std::size_t i = 0; i < out.prediction.numel(); ++i)
      CHECK(out.prediction.data()[i] == (out.pred_final.data()[i] + local.data()[i]) / 2);

    config = toy_config();
    config.ablations.no_backbone = true;
    gp::Glaff alone(config, h, p, c, 5);
    auto mapper = const_cast<gp::Mapper*>(&alone.mapper());
    zero(mapper->projection.weight);
    zero(mapper->projection.bias);
    auto res = alone.forward(x, s, t, Tensor(), false);
    Tensor med = glaff::median_lower(x, 1);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t ch = 0; ch < c; ++ch) CHECK(res.prediction.at({i, k, ch}) == med.at({i, 0, ch}));

    config = toy_config();
    config.ablations.no_attention = true;
    gp::Glaff mlp(config, h, p, c, 5);
    Tensor target = test::randn({b, p, c}, rng);
    CHECK(test::gradcheck([&] { return glaff::mse_loss(mlp.forward(x, s, t, local, false).prediction, target); },
                          tensors_of(mlp.parameters())) < 1e-4);
  }
  SUBCASE("seeded construction is reproducible") {
    gp::Glaff a(toy_config(), h, p, c, 9);
    gp::Glaff b2(toy_config(), h, p, c, 9);
    CHECK(a.forward(x, s, t, local, false).prediction.to_vector() ==
          b2.forward(x, s, t, local, false).prediction.to_vector());
  }
  SUBCASE("shape errors") {
    gp::Glaff model(toy_config(), h, p, c, 5);
    CHECK_THROWS_AS(model.forward(test::randn({b, h, 3}, rng), s, t, local, false), glaff::DimensionError);
    CHECK_THROWS_AS(model.forward(x, s, t, Tensor(), false), glaff::UsageError);
  }
}

#include <doctest.h>

#include <cmath>

#include "dcda/losses.hpp"
#include "gradcheck.hpp"

using namespace dcda;
using dcda::testing::gradcheck;
using dcda::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

Var<double> vec(std::initializer_list<double> v) {
  Tensor<double> t(Shape{static_cast<Index>(v.size())});
  Index i = 0;
  for (double x : v) t[i++] = x;
  return Var<double>(t);
}

/// [N, 2, H, W] probabilities with the given vessel probability everywhere.
ProbMap<double> constant_probs(Index n, Index h, Index w, double vessel) {
  Tensor<double> t(Shape{n, 2, h, w});
  for (Index i = 0; i < n; ++i) {
    t.plane(i, 0).setConstant(1.0 - vessel);
    t.plane(i, 1).setConstant(vessel);
  }
  return ProbMap<double>(Var<double>(t));
}

/// Softmax of random logits, with requires_grad on the logits so gradients
/// reach the caller through the probability map.
Var<double> probs_from_logits(const Var<double>& logits) { return ops::softmax_channels(logits); }

}  // namespace

TEST_CASE("adversarial loss unit values") {
  CHECK(std::abs(adv_loss(vec({0.5}), vec({0.5})).item() - -1.3862944) < 1e-6);
  CHECK(std::abs(adv_loss(vec({0.5}), vec({0.5})).item() - 2 * std::log(0.5)) < 1e-12);
  CHECK(adv_loss(vec({1.0}), vec({0.0})).item() == 0.0);
  const double clamped = adv_loss(vec({0.0}), vec({0.3})).item();
  CHECK(std::isfinite(clamped));
  CHECK(std::abs(clamped - (std::log(1e-7) + std::log(0.7))) < 1e-9);
  CHECK_THROWS_AS(adv_loss(vec({1.5}), vec({0.5})), RangeError);
  CHECK_THROWS_AS(adv_loss(vec({0.5}), vec({-0.1})), RangeError);
}

TEST_CASE("adversarial loss is non-positive and zero only for a perfect critic") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const double r = rng.uniform(0.0, 1.0);
    const double f = rng.uniform(0.0, 1.0);
    CHECK(adv_loss(vec({r}), vec({f})).item() < 0.0);
  }
  CHECK(adv_loss(vec({1.0, 1.0}), vec({0.0, 0.0})).item() == 0.0);
}

TEST_CASE("generator and discriminator variants") {
  CHECK(discriminator_adv_loss(vec({0.5}), vec({0.5})).item() == doctest::Approx(-2 * std::log(0.5)));
  CHECK(generator_adv_loss(vec({0.25, 1.0})).item() == doctest::Approx(-std::log(0.25) / 2));
}

TEST_CASE("cycle loss unit values") {
  const Var<double> x(Tensor<double>(Shape{1, 1, 8, 8}, 0.2));
  const Var<double> y(Tensor<double>(Shape{1, 1, 8, 8}, 0.4));
  CHECK(cycle_loss(x, x, y, y).item() == 0.0);
  const Var<double> x_off(Tensor<double>(Shape{1, 1, 8, 8}, 0.7));
  const Var<double> y_off(Tensor<double>(Shape{1, 1, 8, 8}, 0.9));
  CHECK(std::abs(cycle_loss(x, x_off, y, y_off).item() - 1.0) < 1e-9);
  Tensor<double> one_pixel(Shape{1, 1, 8, 8}, 0.0);
  one_pixel.at(0, 0, 3, 5) = 1.0;
  const Var<double> zeros(Tensor<double>(Shape{1, 1, 8, 8}, 0.0));
  CHECK(cycle_loss(zeros, Var<double>(one_pixel), y, y).item() == doctest::Approx(1.0 / 64));
  CHECK_THROWS_AS(cycle_loss(x, Var<double>(Tensor<double>(Shape{1, 1, 4, 4}, 0.0)), y, y), ShapeError);
}

TEST_CASE("cycle loss properties") {
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const Var<double> x(random_tensor({2, 1, 4, 4}, rng, 0, 1));
    const Var<double> xr(random_tensor({2, 1, 4, 4}, rng, 0, 1));
    const Var<double> y(random_tensor({2, 1, 4, 4}, rng, 0, 1));
    const Var<double> yr(random_tensor({2, 1, 4, 4}, rng, 0, 1));
    const double v = cycle_loss(x, xr, y, yr).item();
    CHECK(v >= 0.0);
    CHECK(cycle_loss(y, yr, x, xr).item() == doctest::Approx(v).epsilon(1e-14));
    CHECK(cycle_loss(x, x, y, y).item() == 0.0);
  }
}

TEST_CASE("content adversarial loss unit values") {
  SUBCASE("chance outputs") {
    const auto loss = content_adv_loss(Eigen::ArrayXd::Constant(3, 0.5), Eigen::ArrayXd::Constant(3, 0.5));
    CHECK(loss.discriminator == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
    CHECK(loss.encoder == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("a perfect content discriminator") {
    const auto loss = content_adv_loss(Eigen::ArrayXd::Constant(2, 0.0), Eigen::ArrayXd::Constant(2, 1.0));
    CHECK(loss.discriminator < 1e-6);
    const double per_side = -(0.5 * std::log(1e-7) + 0.5 * std::log(1 - 1e-7));
    CHECK(loss.encoder == doctest::Approx(2 * per_side).epsilon(1e-6));
  }
  SUBCASE("graph overloads agree with the kernels") {
    const auto a = vec({0.2, 0.7});
    const auto b = vec({0.6, 0.9});
    const auto k = content_adv_loss(a.value().array(), b.value().array());
    CHECK(content_adv_discriminator_loss(a, b).item() == doctest::Approx(k.discriminator).epsilon(1e-14));
    CHECK(content_adv_encoder_loss(a, b).item() == doctest::Approx(k.encoder).epsilon(1e-14));
  }
  SUBCASE("the encoder objective is minimal at chance") {
    const double at_chance = content_adv_loss(Eigen::ArrayXd::Constant(1, 0.5), Eigen::ArrayXd::Constant(1, 0.5)).encoder;
    for (double p : {0.05, 0.3, 0.45, 0.55, 0.8, 0.99}) {
      CHECK(content_adv_loss(Eigen::ArrayXd::Constant(1, p), Eigen::ArrayXd::Constant(1, 0.5)).encoder > at_chance);
    }
  }
}

TEST_CASE("segmentation Dice loss unit values") {
  Mask half(1, 2, 2);
  half.image(0) << 1, 0, 1, 0;
  CHECK(std::abs(seg_loss(constant_probs(1, 2, 2, 0.5), half).item() - 0.4) < 1e-9);

  Mask empty(1, 2, 2);
  CHECK(seg_loss(constant_probs(1, 2, 2, 0.0), empty).item() == 0.0);

  Mask big(1, 40, 40);
  Tensor<double> exact(Shape{1, 2, 40, 40});
  for (Index i = 0; i < 40; ++i)
    for (Index j = 0; j < 40; ++j) {
      const bool on = (i + 2 * j) % 3 == 0;
      big.image(0)(i, j) = on ? 1 : 0;
      exact.at(0, 1, i, j) = on ? 1.0 : 0.0;
      exact.at(0, 0, i, j) = on ? 0.0 : 1.0;
    }
  const double perfect = seg_loss(ProbMap<double>(Var<double>(exact)), big).item();
  CHECK(perfect >= 0.0);
  CHECK(perfect <= 1e-3);

  CHECK_THROWS_AS(seg_loss(constant_probs(1, 3, 3, 0.5), half), ShapeError);
}

TEST_CASE("segmentation loss stays in [0, 1]") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Mask gt(2, 4, 4);
    for (Index i = 0; i < gt.labels.size(); ++i) gt.labels[i] = rng.uniform() < 0.3 ? 1 : 0;
    const auto p = ProbMap<double>(probs_from_logits(Var<double>(random_tensor({2, 2, 4, 4}, rng, -5, 5))));
    const double v = seg_loss(p, gt).item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("consistency cross-entropy unit values") {
  CHECK(std::abs(ccl_loss(constant_probs(2, 3, 3, 0.5), constant_probs(2, 3, 3, 0.5)).item() - std::log(2.0)) < 1e-6);
  CHECK(std::abs(ccl_loss(constant_probs(1, 4, 4, 0.1), constant_probs(1, 4, 4, 0.0)).item() - 0.1053605) < 1e-6);
  CHECK(ccl_loss(constant_probs(1, 4, 4, 1.0), constant_probs(1, 4, 4, 1.0)).item() <= 1e-6);
  CHECK_THROWS_AS(ccl_loss(constant_probs(1, 4, 4, 0.5), constant_probs(1, 2, 2, 0.5)), ShapeError);
}

TEST_CASE("consistency loss is minimal when the student matches a uniform teacher") {
  const auto teacher = constant_probs(1, 4, 4, 0.5);
  const double at_match = ccl_loss(constant_probs(1, 4, 4, 0.5), teacher).item();
  for (double shift : {-0.05, 0.05}) {
    CHECK(ccl_loss(constant_probs(1, 4, 4, 0.5 + shift), teacher).item() > at_match);
  }
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = ProbMap<double>(probs_from_logits(Var<double>(random_tensor({1, 2, 3, 3}, rng, -4, 4))));
    const auto q = ProbMap<double>(probs_from_logits(Var<double>(random_tensor({1, 2, 3, 3}, rng, -4, 4))));
    CHECK(ccl_loss(q, p).item() >= 0.0);
    CHECK(ccl_loss(q, p).item() >= ccl_loss(p, p).item() - 1e-12);
  }
}

TEST_CASE("the consistency teacher never receives a gradient") {
  Rng rng(25);
  const Var<double> s_logits(random_tensor({1, 2, 3, 3}, rng), true);
  const Var<double> t_logits(random_tensor({1, 2, 3, 3}, rng), true);
  const auto student = ProbMap<double>(probs_from_logits(s_logits));
  const auto teacher = ProbMap<double>(probs_from_logits(t_logits));
  backward(ccl_loss(student, teacher));
  CHECK(s_logits.has_grad());
  CHECK_FALSE(t_logits.has_grad());
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(26);
  auto in_unit = [&](Shape s) { return random_tensor(std::move(s), rng, 0.05, 0.95); };

  CHECK(gradcheck([](const auto& v) { return adv_loss(v[0], v[1]); }, {in_unit({4}), in_unit({4})}) < kGradTol);
  CHECK(gradcheck([](const auto& v) { return generator_adv_loss(v[0]); }, {in_unit({4})}) < kGradTol);
  CHECK(gradcheck([](const auto& v) { return content_adv_discriminator_loss(v[0], v[1]); }, {in_unit({3}), in_unit({3})}) <
        kGradTol);
  CHECK(gradcheck([](const auto& v) { return content_adv_encoder_loss(v[0], v[1]); }, {in_unit({3}), in_unit({3})}) <
        kGradTol);

  // Keep reconstructions away from the targets so |.| is differentiable.
  const auto x = in_unit({1, 1, 4, 4});
  const auto y = in_unit({1, 1, 4, 4});
  Tensor<double> xr = x;
  Tensor<double> yr = y;
  for (Index i = 0; i < xr.size(); ++i) {
    xr[i] += (i % 2 ? 0.1 : -0.1);
    yr[i] += (i % 3 ? -0.2 : 0.2);
  }
  CHECK(gradcheck([](const auto& v) { return cycle_loss(v[0], v[1], v[2], v[3]); }, {x, xr, y, yr}) < kGradTol);

  Mask gt(1, 4, 4);
  for (Index i = 0; i < gt.labels.size(); ++i) gt.labels[i] = (i * 7) % 3 == 0 ? 1 : 0;
  CHECK(gradcheck([&](const auto& v) { return seg_loss(ProbMap<double>(probs_from_logits(v[0])), gt); },
                  {random_tensor({1, 2, 4, 4}, rng)}) < kGradTol);

  const auto teacher = ProbMap<double>(probs_from_logits(Var<double>(random_tensor({1, 2, 4, 4}, rng))));
  CHECK(gradcheck([&](const auto& v) { return ccl_loss(ProbMap<double>(probs_from_logits(v[0])), teacher); },
                  {random_tensor({1, 2, 4, 4}, rng)}) < kGradTol);
}

TEST_CASE("loss gradients with respect to probabilities directly") {
  Rng rng(27);
  Mask gt(1, 3, 3);
  gt.labels << 1, 0, 0, 1, 1, 0, 0, 0, 1;
  set_probmap_checks(false);
  const double seg_err = gradcheck(
      [&](const auto& v) { return seg_loss(ProbMap<double>(v[0]), gt); }, {random_tensor({1, 2, 3, 3}, rng, 0.1, 0.9)});
  const auto teacher = random_tensor({1, 2, 3, 3}, rng, 0.1, 0.9);
  const double ccl_err = gradcheck(
      [&](const auto& v) { return ccl_loss(ProbMap<double>(v[0]), ProbMap<double>(Var<double>(teacher))); },
      {random_tensor({1, 2, 3, 3}, rng, 0.1, 0.9)});
  set_probmap_checks(true);
  CHECK(seg_err < kGradTol);
  CHECK(ccl_err < kGradTol);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "dcda/drst.hpp"
#include "gradcheck.hpp"

using namespace dcda;
using namespace dcda::drst;

namespace {

/// 2x2 average pooling, expressed as a fixed stride-2 convolution.
class PoolEncoder final : public ImageEncoder<double> {
 public:
  Var<double> operator()(const Var<double>& images) const override {
    return ops::conv2d(images, Var<double>(Tensor<double>(Shape{1, 1, 2, 2}, 0.25)), Var<double>(), 2, 0);
  }
};

class IdentityEncoder final : public ImageEncoder<double> {
 public:
  Var<double> operator()(const Var<double>& images) const override { return images; }
};

/// A one-dimensional style code of zeros.
class ZeroStyle final : public ImageEncoder<double> {
 public:
  Var<double> operator()(const Var<double>& images) const override {
    return ops::scale(ops::global_avg_pool(images), 0.0);
  }
};

class UpsampleGenerator final : public StyleGenerator<double> {
 public:
  Var<double> operator()(const Var<double>& content, const Var<double>&) const override {
    return ops::upsample2x(content);
  }
};

class IdentityGenerator final : public StyleGenerator<double> {
 public:
  Var<double> operator()(const Var<double>& content, const Var<double>&) const override { return content; }
};

template <typename Encoder, typename Generator>
DrstBundle<double> stub_bundle() {
  DrstBundle<double> b;
  b.content_encoder_x = std::make_shared<Encoder>();
  b.content_encoder_y = std::make_shared<Encoder>();
  b.style_encoder_x = std::make_shared<ZeroStyle>();
  b.style_encoder_y = std::make_shared<ZeroStyle>();
  b.generator_x = std::make_shared<Generator>();
  b.generator_y = std::make_shared<Generator>();
  return b;
}

template <typename Scalar>
ImageBatch<Scalar> random_batch(Index n, Index size, DomainTag domain, Rng& rng) {
  Tensor<Scalar> t(Shape{n, 1, size, size});
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform());
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) ids.push_back(std::string(to_string(domain)) + std::to_string(i));
  return ImageBatch<Scalar>{Var<Scalar>(t), domain, ids};
}

DrstConfig small_config() {
  DrstConfig cfg;
  cfg.base_channels = 4;
  cfg.downsample_blocks = 2;
  cfg.style_dim = 4;
  cfg.residual_blocks = 1;
  cfg.disc_channels = 4;
  cfg.disc_layers = 3;
  return cfg;
}

std::vector<Tensor<float>> snapshot(const nn::NamedParameters<float>& params) {
  std::vector<Tensor<float>> out;
  for (const auto& [name, p] : params) out.push_back(p.value());
  return out;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("translate_step1 with pooling encoders and upsampling generators") {
  const auto bundle = stub_bundle<PoolEncoder, UpsampleGenerator>();
  Rng rng(31);
  const auto x = random_batch<double>(2, 8, DomainTag::Source, rng);
  const auto y = random_batch<double>(2, 8, DomainTag::Target, rng);
  const auto r = translate_step1(bundle, x, y);
  REQUIRE(r.x_hat);
  REQUIRE(r.y_hat);
  CHECK_FALSE(r.x_rec);
  CHECK_FALSE(r.y_rec);
  CHECK(r.x_hat->domain == DomainTag::Source);
  CHECK(r.y_hat->domain == DomainTag::Target);
  CHECK(r.latents.c_x.features.shape() == Shape{2, 1, 4, 4});
  CHECK(r.latents.s_y.code.shape() == Shape{2, 1});

  // x_hat carries y's content: each pixel is the mean of its 2x2 block of y.
  const auto& yv = y.pixels.value();
  const auto& xh = r.x_hat->pixels.value();
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 8; ++i)
      for (Index j = 0; j < 8; ++j) {
        const Index bi = i / 2 * 2;
        const Index bj = j / 2 * 2;
        const double block = 0.25 * (yv.at(n, 0, bi, bj) + yv.at(n, 0, bi + 1, bj) + yv.at(n, 0, bi, bj + 1) +
                                     yv.at(n, 0, bi + 1, bj + 1));
        CHECK(xh.at(n, 0, i, j) == doctest::Approx(block).epsilon(1e-12));
      }

  // On a smooth image the only difference from y is the pooling error.
  Tensor<double> ramp(Shape{1, 1, 8, 8});
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j) ramp.at(0, 0, i, j) = (i + j) / 16.0;
  const ImageBatch<double> xs{Var<double>(Tensor<double>(Shape{1, 1, 8, 8}, 0.5)), DomainTag::Source, {}};
  const ImageBatch<double> ys{Var<double>(ramp), DomainTag::Target, {}};
  const auto smooth = translate_step1(bundle, xs, ys);
  CHECK((smooth.x_hat->pixels.value().array() - ramp.array()).abs().maxCoeff() <= 1.0 / 16 + 1e-12);
}

TEST_CASE("translate_step1 rejects mismatched batches") {
  const auto bundle = stub_bundle<IdentityEncoder, IdentityGenerator>();
  Rng rng(32);
  CHECK_THROWS_AS(translate_step1(bundle, random_batch<double>(2, 8, DomainTag::Source, rng),
                                  random_batch<double>(3, 8, DomainTag::Target, rng)),
                  ShapeError);
  CHECK_THROWS_AS(translate_step1(bundle, random_batch<double>(2, 8, DomainTag::Source, rng),
                                  random_batch<double>(2, 16, DomainTag::Target, rng)),
                  ShapeError);
}

TEST_CASE("translate_step2 with identity stubs reconstructs bitwise") {
  const auto bundle = stub_bundle<IdentityEncoder, IdentityGenerator>();
  Rng rng(33);
  const auto x = random_batch<double>(3, 8, DomainTag::Source, rng);
  const auto y = random_batch<double>(3, 8, DomainTag::Target, rng);
  const auto r = translate_step2(bundle, translate_step1(bundle, x, y));
  REQUIRE(r.x_rec);
  REQUIRE(r.y_rec);
  CHECK(r.x_rec->pixels.shape() == x.pixels.shape());
  CHECK(r.y_rec->pixels.shape() == y.pixels.shape());
  CHECK((r.x_rec->pixels.value().array() == x.pixels.value().array()).all());
  CHECK((r.y_rec->pixels.value().array() == y.pixels.value().array()).all());
  CHECK(r.x_rec->domain == DomainTag::Source);
  CHECK(r.y_rec->domain == DomainTag::Target);

  TranslationResult<double> partial = translate_step1(bundle, x, y);
  partial.x_hat.reset();
  CHECK_THROWS_AS(translate_step2(bundle, partial), StateError);
}

TEST_CASE("reference networks preserve shapes") {
  DrstConfig cfg;
  const auto bundle = DrstBundle<float>::create(cfg, 5);
  Rng rng(34);
  const auto x = random_batch<float>(2, 64, DomainTag::Source, rng);
  const auto y = random_batch<float>(2, 64, DomainTag::Target, rng);
  NoGradGuard no_grad;
  const auto r = translate_step2(bundle, translate_step1(bundle, x, y));
  CHECK(r.latents.c_x.features.shape() == Shape{2, 64, 8, 8});
  CHECK(r.latents.s_x.code.shape() == Shape{2, 8});
  CHECK(r.x_hat->pixels.shape() == x.pixels.shape());
  CHECK(r.y_hat->pixels.shape() == y.pixels.shape());
  CHECK(r.x_rec->pixels.shape() == x.pixels.shape());
  CHECK(r.y_rec->pixels.shape() == y.pixels.shape());
  CHECK(r.x_hat->ids == y.ids);
  CHECK_NOTHROW(validate_batch(*r.x_hat));
  const auto d = (*bundle.discriminator_x)(x.pixels).value();
  CHECK(d.shape() == Shape{2});
  CHECK((d.array() > 0).all());
  CHECK((d.array() < 1).all());
  CHECK((*bundle.content_discriminator)(r.latents.c_y.features).shape() == Shape{2});
}

TEST_CASE("the content encoders share their last layer") {
  const auto bundle = DrstBundle<float>::create(small_config(), 9);
  const auto bx = bundle.shared_block(DomainTag::Source);
  const auto by = bundle.shared_block(DomainTag::Target);
  REQUIRE(bx.size() == 2);
  REQUIRE(by.size() == 2);
  for (std::size_t i = 0; i < bx.size(); ++i) CHECK(bx[i].second.id() == by[i].second.id());
  CHECK(bx[0].first == bundle.shared_layer_key() + ".weight");
  CHECK(by[0].first == "E_C^Y.shared.weight");

  const auto all = bundle.named_parameters();
  std::size_t shared_entries = 0;
  for (const auto& [name, p] : all) {
    if (name.find(".shared.") != std::string::npos) ++shared_entries;
  }
  CHECK(shared_entries == 2);
  CHECK(all.size() == bundle.translator_parameters().size() + bundle.discriminator_parameters().size());
}

TEST_CASE("drst_train_step keeps the shared block identical and is deterministic") {
  auto run = [](std::uint64_t seed) {
    const auto bundle = DrstBundle<float>::create(small_config(), seed);
    auto opt = DrstOptimizers<float>::create(bundle, nn::AdamOptions{});
    Rng rng(seed + 100);
    std::vector<LossReport> reports;
    const auto before = snapshot(bundle.named_parameters());
    for (int step = 0; step < 3; ++step) {
      const auto x = random_batch<float>(2, 32, DomainTag::Source, rng);
      const auto y = random_batch<float>(2, 32, DomainTag::Target, rng);
      reports.push_back(drst_train_step(bundle, x, y, opt));
      const auto bx = bundle.shared_block(DomainTag::Source);
      const auto by = bundle.shared_block(DomainTag::Target);
      for (std::size_t i = 0; i < bx.size(); ++i) CHECK(bit_equal(bx[i].second.value(), by[i].second.value()));
    }
    const auto after = snapshot(bundle.named_parameters());
    std::size_t changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) changed += bit_equal(before[i], after[i]) ? 0 : 1;
    CHECK(changed > before.size() / 2);
    for (const auto& [name, p] : bundle.named_parameters()) CHECK(p.requires_grad());
    return reports;
  };
  const auto first = run(3);
  const auto second = run(3);
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i] == second[i]);
    CHECK(first[i].all_finite());
    for (const char* key : {"adv_x", "adv_y", "content_adv", "cyc"}) CHECK(first[i].values.count(key) == 1);
    CHECK(first[i].at("adv_x") <= 0.0);
    CHECK(first[i].at("cyc") >= 0.0);
  }
  CHECK_FALSE(run(4)[0] == first[0]);
}

TEST_CASE("a non-finite objective leaves parameters and optimizer state untouched") {
  const auto bundle = DrstBundle<float>::create(small_config(), 12);
  auto opt = DrstOptimizers<float>::create(bundle, nn::AdamOptions{});
  Rng rng(13);
  drst_train_step(bundle, random_batch<float>(2, 32, DomainTag::Source, rng),
                  random_batch<float>(2, 32, DomainTag::Target, rng), opt);

  Var<float> poisoned = bundle.discriminator_parameters().back().second;
  poisoned.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto before = snapshot(bundle.named_parameters());
  const auto moments_before = opt.translators.state("");
  const long steps_before = opt.discriminators.steps();

  CHECK_THROWS_AS(drst_train_step(bundle, random_batch<float>(2, 32, DomainTag::Source, rng),
                                  random_batch<float>(2, 32, DomainTag::Target, rng), opt),
                  NonFiniteError);
  const auto after = snapshot(bundle.named_parameters());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bit_equal(before[i], after[i]));
  CHECK(opt.discriminators.steps() == steps_before);
  const auto moments_after = opt.translators.state("");
  for (const auto& [key, t] : moments_before) CHECK(bit_equal(t, moments_after.at(key)));
  for (const auto& [name, p] : bundle.named_parameters()) CHECK(p.requires_grad());
}

TEST_CASE("generator gradients reach the reference networks") {
  // Gradient check of a whole translation + cycle objective on a tiny double network.
  DrstConfig cfg = small_config();
  cfg.base_channels = 2;
  cfg.downsample_blocks = 1;
  cfg.style_dim = 2;
  const auto bundle = DrstBundle<double>::create(cfg, 2);
  Rng rng(35);
  const auto x = random_batch<double>(1, 4, DomainTag::Source, rng);
  const auto y = random_batch<double>(1, 4, DomainTag::Target, rng);
  auto objective = [&]() {
    const auto r = translate_step2(bundle, translate_step1(bundle, x, y));
    return ops::add(testing::probe_sum(r.x_hat->pixels), testing::probe_sum(r.y_rec->pixels, 7));
  };
  Var<double> w = bundle.shared_block(DomainTag::Source)[0].second;
  backward(objective());
  const Tensor<double> analytic = w.grad();
  double worst = 0;
  for (Index i = 0; i < w.value().size(); i += 3) {
    const double keep = w.value()[i];
    w.mutable_value()[i] = keep + 1e-6;
    const double up = objective().item();
    w.mutable_value()[i] = keep - 1e-6;
    const double down = objective().item();
    w.mutable_value()[i] = keep;
    const double numeric = (up - down) / 2e-6;
    worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4}));
  }
  CHECK(worst < 1e-4);
}

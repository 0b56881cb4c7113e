#include "dcda/drst.hpp"

namespace dcda::drst {

namespace {

template <typename Scalar>
void require_pair(const ImageBatch<Scalar>& x, const ImageBatch<Scalar>& y) {
  if (x.domain != DomainTag::Source) throw StateError("translate: x must come from the source domain");
  if (y.domain != DomainTag::Target) throw StateError("translate: y must come from the target domain");
  if (x.pixels.shape() != y.pixels.shape()) {
    throw ShapeError("translate: x " + x.pixels.shape().str() + " and y " + y.pixels.shape().str() + " differ");
  }
}

/// Restores parameter values and optimizer moments unless committed.
template <typename Scalar>
class Rollback {
 public:
  explicit Rollback(DrstOptimizers<Scalar>& opt) : opt_(opt), saved_(opt) {
    for (auto* adam : {&opt.discriminators, &opt.translators}) {
      for (const auto& [name, p] : adam->params()) values_.push_back(p.value());
    }
  }
  Rollback(const Rollback&) = delete;
  Rollback& operator=(const Rollback&) = delete;
  ~Rollback() {
    if (committed_) return;
    std::size_t i = 0;
    for (auto* adam : {&opt_.discriminators, &opt_.translators}) {
      for (const auto& [name, p] : adam->params()) {
        Var<Scalar> handle = p;
        handle.mutable_value() = values_[i++];
        handle.zero_grad();
      }
    }
    opt_ = saved_;
  }
  void commit() { committed_ = true; }

 private:
  DrstOptimizers<Scalar>& opt_;
  DrstOptimizers<Scalar> saved_;
  std::vector<Tensor<Scalar>> values_;
  bool committed_ = false;
};

/// Freezes a set of parameters for its lifetime.
template <typename Scalar>
class FreezeGuard {
 public:
  explicit FreezeGuard(nn::NamedParameters<Scalar> params) : params_(std::move(params)) {
    for (auto& [name, p] : params_) p.set_requires_grad(false);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;
  ~FreezeGuard() {
    for (auto& [name, p] : params_) p.set_requires_grad(true);
  }

 private:
  nn::NamedParameters<Scalar> params_;
};

template <typename Scalar>
void require_finite(const Var<Scalar>& loss, const nn::Adam<Scalar>& opt, const char* what) {
  if (!std::isfinite(static_cast<double>(loss.item())) || !opt.gradients_finite()) {
    throw NonFiniteError(std::string("drst_train_step: non-finite ") + what + " objective");
  }
}

}  // namespace

template <typename Scalar>
DrstBundle<Scalar> DrstBundle<Scalar>::create(const DrstConfig& config, std::uint64_t seed) {
  Rng root(seed);
  Rng rng_shared = root.split();
  Rng rng_cx = root.split();
  Rng rng_cy = root.split();
  Rng rng_sx = root.split();
  Rng rng_sy = root.split();
  Rng rng_gx = root.split();
  Rng rng_gy = root.split();
  Rng rng_dx = root.split();
  Rng rng_dy = root.split();
  Rng rng_dc = root.split();

  const Index c = config.content_channels();
  auto shared = std::make_shared<nn::Conv2d<Scalar>>(c, c, 3, 1, 1, rng_shared);
  DrstBundle b;
  b.config = config;
  b.content_encoder_x = std::make_shared<ContentEncoder<Scalar>>(config, shared, rng_cx);
  b.content_encoder_y = std::make_shared<ContentEncoder<Scalar>>(config, shared, rng_cy);
  b.style_encoder_x = std::make_shared<StyleEncoder<Scalar>>(config, rng_sx);
  b.style_encoder_y = std::make_shared<StyleEncoder<Scalar>>(config, rng_sy);
  b.generator_x = std::make_shared<AdainGenerator<Scalar>>(config, rng_gx);
  b.generator_y = std::make_shared<AdainGenerator<Scalar>>(config, rng_gy);
  b.discriminator_x = std::make_shared<PatchDiscriminator<Scalar>>(config, rng_dx);
  b.discriminator_y = std::make_shared<PatchDiscriminator<Scalar>>(config, rng_dy);
  b.content_discriminator = std::make_shared<ContentDiscriminator<Scalar>>(config, rng_dc);
  b.shared_layer = shared;
  return b;
}

template <typename Scalar>
nn::NamedParameters<Scalar> DrstBundle<Scalar>::translator_parameters() const {
  return nn::unique_parameters<Scalar>({content_encoder_x->named_parameters("E_C^X"),
                                        content_encoder_y->named_parameters("E_C^Y"),
                                        style_encoder_x->named_parameters("E_S^X"),
                                        style_encoder_y->named_parameters("E_S^Y"),
                                        generator_x->named_parameters("G_X"),
                                        generator_y->named_parameters("G_Y")});
}

template <typename Scalar>
nn::NamedParameters<Scalar> DrstBundle<Scalar>::discriminator_parameters() const {
  return nn::unique_parameters<Scalar>({discriminator_x->named_parameters("D_X"),
                                        discriminator_y->named_parameters("D_Y"),
                                        content_discriminator->named_parameters("D_C")});
}

template <typename Scalar>
nn::NamedParameters<Scalar> DrstBundle<Scalar>::named_parameters() const {
  return nn::unique_parameters<Scalar>({translator_parameters(), discriminator_parameters()});
}

template <typename Scalar>
nn::NamedParameters<Scalar> DrstBundle<Scalar>::shared_block(DomainTag encoder) const {
  const bool is_x = encoder == DomainTag::Source;
  const std::string prefix = is_x ? "E_C^X" : "E_C^Y";
  nn::NamedParameters<Scalar> out;
  for (auto& [name, p] : (is_x ? content_encoder_x : content_encoder_y)->named_parameters(prefix)) {
    if (name.rfind(prefix + ".shared", 0) == 0) out.emplace_back(name, p);
  }
  return out;
}

template <typename Scalar>
TranslationResult<Scalar> translate_step1(const DrstBundle<Scalar>& bundle, const ImageBatch<Scalar>& x,
                                          const ImageBatch<Scalar>& y) {
  require_pair(x, y);
  TranslationResult<Scalar> r;
  r.latents.c_x = {(*bundle.content_encoder_x)(x.pixels), DomainTag::Source};
  r.latents.c_y = {(*bundle.content_encoder_y)(y.pixels), DomainTag::Target};
  r.latents.s_x = {(*bundle.style_encoder_x)(x.pixels), DomainTag::Source};
  r.latents.s_y = {(*bundle.style_encoder_y)(y.pixels), DomainTag::Target};
  r.x_hat = ImageBatch<Scalar>{(*bundle.generator_x)(r.latents.c_y.features, r.latents.s_x.code), DomainTag::Source, y.ids};
  r.y_hat = ImageBatch<Scalar>{(*bundle.generator_y)(r.latents.c_x.features, r.latents.s_y.code), DomainTag::Target, x.ids};
  if (r.x_hat->pixels.shape() != x.pixels.shape() || r.y_hat->pixels.shape() != y.pixels.shape()) {
    throw ShapeError("translate: generator output " + r.x_hat->pixels.shape().str() + " does not match input " +
                     x.pixels.shape().str());
  }
  return r;
}

template <typename Scalar>
TranslationResult<Scalar> translate_step2(const DrstBundle<Scalar>& bundle, TranslationResult<Scalar> partial) {
  if (!partial.x_hat || !partial.y_hat) throw StateError("translate_step2 needs the first translation step");
  const Var<Scalar>& x_hat = partial.x_hat->pixels;
  const Var<Scalar>& y_hat = partial.y_hat->pixels;
  const Var<Scalar> x_rec = (*bundle.generator_x)((*bundle.content_encoder_y)(y_hat), (*bundle.style_encoder_x)(x_hat));
  const Var<Scalar> y_rec = (*bundle.generator_y)((*bundle.content_encoder_x)(x_hat), (*bundle.style_encoder_y)(y_hat));
  partial.x_rec = ImageBatch<Scalar>{x_rec, DomainTag::Source, partial.y_hat->ids};
  partial.y_rec = ImageBatch<Scalar>{y_rec, DomainTag::Target, partial.x_hat->ids};
  return partial;
}

template <typename Scalar>
LossReport drst_train_step(const DrstBundle<Scalar>& bundle, const ImageBatch<Scalar>& x, const ImageBatch<Scalar>& y,
                           DrstOptimizers<Scalar>& optimizers) {
  validate_batch(x);
  validate_batch(y);
  const DrstConfig& cfg = bundle.config;
  LossReport report;
  report.phase.stage = Stage::DrstPretrain;
  Rollback<Scalar> rollback(optimizers);

  // (a) discriminators on detached translations.
  {
    TranslationResult<Scalar> fake;
    {
      NoGradGuard no_grad;
      fake = translate_step1(bundle, x, y);
    }
    optimizers.discriminators.zero_grad();
    const Var<Scalar> real_x = (*bundle.discriminator_x)(x.pixels);
    const Var<Scalar> fake_x = (*bundle.discriminator_x)(fake.x_hat->pixels);
    const Var<Scalar> real_y = (*bundle.discriminator_y)(y.pixels);
    const Var<Scalar> fake_y = (*bundle.discriminator_y)(fake.y_hat->pixels);
    const Var<Scalar> dc_x = (*bundle.content_discriminator)(fake.latents.c_x.features);
    const Var<Scalar> dc_y = (*bundle.content_discriminator)(fake.latents.c_y.features);

    const Var<Scalar> adv_x = adv_loss(real_x, fake_x);
    const Var<Scalar> adv_y = adv_loss(real_y, fake_y);
    const Var<Scalar> content = content_adv_discriminator_loss(dc_x, dc_y);
    const Var<Scalar> total = ops::add(ops::scale(ops::add(adv_x, adv_y), Scalar(-1)), content);
    backward(total);
    require_finite(total, optimizers.discriminators, "discriminator");
    report["adv_x"] = adv_x.item();
    report["adv_y"] = adv_y.item();
    report["content_adv"] = content.item();
  }

  optimizers.discriminators.step();
  optimizers.discriminators.zero_grad();

  // (b) encoders and generators against the updated, frozen critics.
  {
    FreezeGuard<Scalar> frozen(bundle.discriminator_parameters());
    optimizers.translators.zero_grad();
    TranslationResult<Scalar> t = translate_step2(bundle, translate_step1(bundle, x, y));
    const Var<Scalar> gen_adv = ops::add(generator_adv_loss((*bundle.discriminator_x)(t.x_hat->pixels)),
                                         generator_adv_loss((*bundle.discriminator_y)(t.y_hat->pixels)));
    const Var<Scalar> cyc = cycle_loss(x.pixels, t.x_rec->pixels, y.pixels, t.y_rec->pixels);
    const Var<Scalar> enc_content =
        content_adv_encoder_loss((*bundle.content_discriminator)(t.latents.c_x.features),
                                 (*bundle.content_discriminator)(t.latents.c_y.features));
    const Var<Scalar> total = ops::add(ops::add(ops::scale(gen_adv, Scalar(cfg.lambda_adv)), ops::scale(cyc, Scalar(cfg.lambda_cyc))),
                                       ops::scale(enc_content, Scalar(cfg.lambda_content)));
    backward(total);
    require_finite(total, optimizers.translators, "translator");
    optimizers.translators.step();
    optimizers.translators.zero_grad();
    report["cyc"] = cyc.item();
    report["gen_adv"] = gen_adv.item();
    report["content_enc"] = enc_content.item();
    report["drst_total"] = total.item();
  }
  rollback.commit();
  return report;
}

template struct DrstBundle<float>;
template struct DrstBundle<double>;
template TranslationResult<float> translate_step1(const DrstBundle<float>&, const ImageBatch<float>&, const ImageBatch<float>&);
template TranslationResult<double> translate_step1(const DrstBundle<double>&, const ImageBatch<double>&, const ImageBatch<double>&);
template TranslationResult<float> translate_step2(const DrstBundle<float>&, TranslationResult<float>);
template TranslationResult<double> translate_step2(const DrstBundle<double>&, TranslationResult<double>);
template LossReport drst_train_step(const DrstBundle<float>&, const ImageBatch<float>&, const ImageBatch<float>&,
                                    DrstOptimizers<float>&);
template LossReport drst_train_step(const DrstBundle<double>&, const ImageBatch<double>&, const ImageBatch<double>&,
                                    DrstOptimizers<double>&);

}  // namespace dcda::drst

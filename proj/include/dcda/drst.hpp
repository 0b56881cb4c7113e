#ifndef DCDA_DRST_HPP
#define DCDA_DRST_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dcda/core_types.hpp"
#include "dcda/losses.hpp"
#include "dcda/nn.hpp"

/// Disentangled style transfer: content/style encoders, style-conditioned
/// generators, image and content discriminators, and their training step.
namespace dcda::drst {

struct DrstConfig {
  Index base_channels = 8;
  /// Stride-2 blocks in the content encoder; content maps are 1/2^k of the input.
  Index downsample_blocks = 3;
  Index style_dim = 8;
  Index residual_blocks = 2;
  Index disc_channels = 8;
  /// Stride-2 layers of the patch discriminator (3 gives a 70x70 receptive field).
  Index disc_layers = 3;
  double lambda_adv = 1.0;
  double lambda_cyc = 10.0;
  double lambda_content = 1.0;

  [[nodiscard]] Index content_channels() const { return base_channels << downsample_blocks; }
  [[nodiscard]] Index downsample_factor() const { return Index{1} << downsample_blocks; }
};

// ---------------------------------------------------------------------------
// Component interfaces. The bundle only depends on these, so tests can plug
// in closed-form stand-ins.

template <typename Scalar>
class ImageEncoder : public nn::Module<Scalar> {
 public:
  virtual Var<Scalar> operator()(const Var<Scalar>& images) const = 0;
};

template <typename Scalar>
class StyleGenerator : public nn::Module<Scalar> {
 public:
  virtual Var<Scalar> operator()(const Var<Scalar>& content, const Var<Scalar>& style) const = 0;
};

/// Maps a batch to one probability per sample, shape [N].
template <typename Scalar>
class Critic : public nn::Module<Scalar> {
 public:
  virtual Var<Scalar> operator()(const Var<Scalar>& input) const = 0;
};

// ---------------------------------------------------------------------------
// Reference architectures.

template <typename Scalar>
class ContentEncoder final : public ImageEncoder<Scalar> {
 public:
  /// shared_last is the final conv, registered in both domains' encoders.
  ContentEncoder(const DrstConfig& cfg, std::shared_ptr<nn::Conv2d<Scalar>> shared_last, Rng& rng) {
    const Index b = cfg.base_channels;
    stem_ = this->register_module("stem", std::make_shared<nn::Conv2d<Scalar>>(1, b, 7, 1, 3, rng));
    for (Index i = 0; i < cfg.downsample_blocks; ++i) {
      downs_.push_back(this->register_module("down" + std::to_string(i),
                                             std::make_shared<nn::Conv2d<Scalar>>(b << i, b << (i + 1), 4, 2, 1, rng)));
    }
    shared_ = this->register_module("shared", std::move(shared_last));
  }

  Var<Scalar> operator()(const Var<Scalar>& images) const override {
    Var<Scalar> h = ops::relu(ops::instance_norm((*stem_)(images)));
    for (const auto& down : downs_) h = ops::relu(ops::instance_norm((*down)(h)));
    return ops::instance_norm((*shared_)(h));
  }

 private:
  std::shared_ptr<nn::Conv2d<Scalar>> stem_;
  std::vector<std::shared_ptr<nn::Conv2d<Scalar>>> downs_;
  std::shared_ptr<nn::Conv2d<Scalar>> shared_;
};

/// Convolutions without normalisation, global average pool, linear head.
template <typename Scalar>
class StyleEncoder final : public ImageEncoder<Scalar> {
 public:
  StyleEncoder(const DrstConfig& cfg, Rng& rng) {
    const Index b = cfg.base_channels;
    convs_.push_back(this->register_module("conv0", std::make_shared<nn::Conv2d<Scalar>>(1, b, 7, 1, 3, rng)));
    convs_.push_back(this->register_module("conv1", std::make_shared<nn::Conv2d<Scalar>>(b, 2 * b, 4, 2, 1, rng)));
    convs_.push_back(this->register_module("conv2", std::make_shared<nn::Conv2d<Scalar>>(2 * b, 4 * b, 4, 2, 1, rng)));
    head_ = this->register_module("head", std::make_shared<nn::Linear<Scalar>>(4 * b, cfg.style_dim, rng, 1.0));
  }

  Var<Scalar> operator()(const Var<Scalar>& images) const override {
    Var<Scalar> h = images;
    for (const auto& conv : convs_) h = ops::relu((*conv)(h));
    return (*head_)(ops::global_avg_pool(h));
  }

 private:
  std::vector<std::shared_ptr<nn::Conv2d<Scalar>>> convs_;
  std::shared_ptr<nn::Linear<Scalar>> head_;
};

/// Residual blocks modulated by adaptive instance normalisation, then
/// nearest-upsample + conv stages back to full resolution, sigmoid output.
template <typename Scalar>
class AdainGenerator final : public StyleGenerator<Scalar> {
 public:
  AdainGenerator(const DrstConfig& cfg, Rng& rng) : channels_(cfg.content_channels()) {
    const Index c = channels_;
    for (Index r = 0; r < cfg.residual_blocks; ++r) {
      res_.push_back({this->register_module("res" + std::to_string(r) + ".conv0", std::make_shared<nn::Conv2d<Scalar>>(c, c, 3, 1, 1, rng)),
                      this->register_module("res" + std::to_string(r) + ".conv1", std::make_shared<nn::Conv2d<Scalar>>(c, c, 3, 1, 1, rng))});
    }
    mlp_hidden_ = this->register_module("mlp.hidden", std::make_shared<nn::Linear<Scalar>>(cfg.style_dim, c, rng));
    mlp_out_ = this->register_module("mlp.out", std::make_shared<nn::Linear<Scalar>>(c, 4 * c * cfg.residual_blocks, rng, 0.1));
    Index ch = c;
    for (Index i = 0; i < cfg.downsample_blocks; ++i) {
      ups_.push_back(this->register_module("up" + std::to_string(i), std::make_shared<nn::Conv2d<Scalar>>(ch, ch / 2, 5, 1, 2, rng)));
      ch /= 2;
    }
    out_ = this->register_module("out", std::make_shared<nn::Conv2d<Scalar>>(ch, 1, 7, 1, 3, rng, true));
  }

  Var<Scalar> operator()(const Var<Scalar>& content, const Var<Scalar>& style) const override {
    if (content.shape()[1] != channels_) throw ShapeError("generator: content has " + content.shape().str());
    const Var<Scalar> params = (*mlp_out_)(ops::relu((*mlp_hidden_)(style)));
    Index slot = 0;
    auto modulate = [&](const Var<Scalar>& h) {
      const Var<Scalar> gamma = ops::shift(ops::slice_columns(params, (slot++) * channels_, channels_), Scalar(1));
      const Var<Scalar> beta = ops::slice_columns(params, (slot++) * channels_, channels_);
      return ops::channel_affine(ops::instance_norm(h), gamma, beta);
    };
    Var<Scalar> h = content;
    for (const auto& [conv0, conv1] : res_) {
      Var<Scalar> r = ops::relu(modulate((*conv0)(h)));
      r = modulate((*conv1)(r));
      h = ops::add(h, r);
    }
    for (const auto& up : ups_) h = ops::relu((*up)(ops::upsample2x(h)));
    return ops::sigmoid((*out_)(h));
  }

 private:
  Index channels_;
  std::vector<std::pair<std::shared_ptr<nn::Conv2d<Scalar>>, std::shared_ptr<nn::Conv2d<Scalar>>>> res_;
  std::shared_ptr<nn::Linear<Scalar>> mlp_hidden_;
  std::shared_ptr<nn::Linear<Scalar>> mlp_out_;
  std::vector<std::shared_ptr<nn::Conv2d<Scalar>>> ups_;
  std::shared_ptr<nn::Conv2d<Scalar>> out_;
};

/// PatchGAN discriminator; patch logits are averaged to one score per image.
template <typename Scalar>
class PatchDiscriminator final : public Critic<Scalar> {
 public:
  PatchDiscriminator(const DrstConfig& cfg, Rng& rng) {
    Index ch = cfg.disc_channels;
    layers_.push_back(this->register_module("conv0", std::make_shared<nn::Conv2d<Scalar>>(1, ch, 4, 2, 1, rng)));
    for (Index i = 1; i < cfg.disc_layers; ++i) {
      layers_.push_back(this->register_module("conv" + std::to_string(i), std::make_shared<nn::Conv2d<Scalar>>(ch, 2 * ch, 4, 2, 1, rng)));
      ch *= 2;
    }
    penultimate_ = this->register_module("conv" + std::to_string(cfg.disc_layers),
                                         std::make_shared<nn::Conv2d<Scalar>>(ch, 2 * ch, 4, 1, 1, rng));
    head_ = this->register_module("head", std::make_shared<nn::Conv2d<Scalar>>(2 * ch, 1, 4, 1, 1, rng, true));
  }

  Var<Scalar> operator()(const Var<Scalar>& images) const override {
    Var<Scalar> h = ops::leaky_relu((*layers_.front())(images), Scalar(0.2));
    for (std::size_t i = 1; i < layers_.size(); ++i) h = ops::leaky_relu(ops::instance_norm((*layers_[i])(h)), Scalar(0.2));
    h = ops::leaky_relu(ops::instance_norm((*penultimate_)(h)), Scalar(0.2));
    const Var<Scalar> logits = ops::global_avg_pool((*head_)(h));
    return ops::sigmoid(ops::reshape(logits, Shape{logits.shape()[0]}));
  }

 private:
  std::vector<std::shared_ptr<nn::Conv2d<Scalar>>> layers_;
  std::shared_ptr<nn::Conv2d<Scalar>> penultimate_;
  std::shared_ptr<nn::Conv2d<Scalar>> head_;
};

/// Small classifier telling source content maps (0) from target ones (1).
template <typename Scalar>
class ContentDiscriminator final : public Critic<Scalar> {
 public:
  ContentDiscriminator(const DrstConfig& cfg, Rng& rng) {
    const Index c = cfg.content_channels();
    conv0_ = this->register_module("conv0", std::make_shared<nn::Conv2d<Scalar>>(c, c, 3, 2, 1, rng));
    conv1_ = this->register_module("conv1", std::make_shared<nn::Conv2d<Scalar>>(c, c, 3, 2, 1, rng));
    head_ = this->register_module("head", std::make_shared<nn::Linear<Scalar>>(c, 1, rng, 1.0));
  }

  Var<Scalar> operator()(const Var<Scalar>& content) const override {
    Var<Scalar> h = ops::leaky_relu((*conv0_)(content), Scalar(0.2));
    h = ops::leaky_relu((*conv1_)(h), Scalar(0.2));
    const Var<Scalar> logits = (*head_)(ops::global_avg_pool(h));
    return ops::sigmoid(ops::reshape(logits, Shape{logits.shape()[0]}));
  }

 private:
  std::shared_ptr<nn::Conv2d<Scalar>> conv0_;
  std::shared_ptr<nn::Conv2d<Scalar>> conv1_;
  std::shared_ptr<nn::Linear<Scalar>> head_;
};

// ---------------------------------------------------------------------------

/// All DRST networks under their symbolic names (E_C^X, G_Y, D_C, ...).
template <typename Scalar>
struct DrstBundle {
  DrstConfig config;
  std::shared_ptr<ImageEncoder<Scalar>> content_encoder_x;
  std::shared_ptr<ImageEncoder<Scalar>> content_encoder_y;
  std::shared_ptr<ImageEncoder<Scalar>> style_encoder_x;
  std::shared_ptr<ImageEncoder<Scalar>> style_encoder_y;
  std::shared_ptr<StyleGenerator<Scalar>> generator_x;
  std::shared_ptr<StyleGenerator<Scalar>> generator_y;
  std::shared_ptr<Critic<Scalar>> discriminator_x;
  std::shared_ptr<Critic<Scalar>> discriminator_y;
  std::shared_ptr<Critic<Scalar>> content_discriminator;
  /// Parameter block shared by the last layer of both content encoders.
  std::shared_ptr<nn::Module<Scalar>> shared_layer;

  /// Reference architecture, deterministically initialised from seed.
  static DrstBundle create(const DrstConfig& config, std::uint64_t seed);

  /// Translation-side networks (encoders and generators), deduplicated.
  [[nodiscard]] nn::NamedParameters<Scalar> translator_parameters() const;
  /// D_X, D_Y and D_C.
  [[nodiscard]] nn::NamedParameters<Scalar> discriminator_parameters() const;
  /// Everything, deduplicated; shared storage appears once under its E_C^X name.
  [[nodiscard]] nn::NamedParameters<Scalar> named_parameters() const;

  /// Checkpoint key prefix of the shared block, e.g. "E_C^X.shared".
  [[nodiscard]] std::string shared_layer_key() const { return "E_C^X.shared"; }
  /// Parameters reachable through each content encoder's last layer.
  [[nodiscard]] nn::NamedParameters<Scalar> shared_block(DomainTag encoder) const;
};

template <typename Scalar>
struct Latents {
  ContentMap<Scalar> c_x;
  ContentMap<Scalar> c_y;
  StyleCode<Scalar> s_x;
  StyleCode<Scalar> s_y;
};

template <typename Scalar>
struct TranslationResult {
  std::optional<ImageBatch<Scalar>> x_hat;  ///< source style, content of y
  std::optional<ImageBatch<Scalar>> y_hat;  ///< target style, content of x
  std::optional<ImageBatch<Scalar>> x_rec;
  std::optional<ImageBatch<Scalar>> y_rec;
  Latents<Scalar> latents;
};

/// x_hat = G_X(E_S^X(x), E_C^Y(y)), y_hat = G_Y(E_S^Y(y), E_C^X(x)).
template <typename Scalar>
TranslationResult<Scalar> translate_step1(const DrstBundle<Scalar>& bundle, const ImageBatch<Scalar>& x,
                                          const ImageBatch<Scalar>& y);

/// Swaps styles back: x_rec = G_X(E_S^X(x_hat), E_C^Y(y_hat)),
/// y_rec = G_Y(E_S^Y(y_hat), E_C^X(x_hat)).
template <typename Scalar>
TranslationResult<Scalar> translate_step2(const DrstBundle<Scalar>& bundle, TranslationResult<Scalar> partial);

template <typename Scalar>
struct DrstOptimizers {
  nn::Adam<Scalar> discriminators;
  nn::Adam<Scalar> translators;

  static DrstOptimizers create(const DrstBundle<Scalar>& bundle, const nn::AdamOptions& options) {
    return {nn::Adam<Scalar>(bundle.discriminator_parameters(), options),
            nn::Adam<Scalar>(bundle.translator_parameters(), options)};
  }
};

/// One alternating update: D_X, D_Y, D_C on detached translations, then
/// encoders and generators on the weighted adversarial, cycle and content
/// objectives. A non-finite loss or gradient leaves all parameters and
/// optimizer state as they were and throws NonFiniteError.
template <typename Scalar>
LossReport drst_train_step(const DrstBundle<Scalar>& bundle, const ImageBatch<Scalar>& x, const ImageBatch<Scalar>& y,
                           DrstOptimizers<Scalar>& optimizers);

extern template struct DrstBundle<float>;
extern template struct DrstBundle<double>;
extern template TranslationResult<float> translate_step1(const DrstBundle<float>&, const ImageBatch<float>&, const ImageBatch<float>&);
extern template TranslationResult<double> translate_step1(const DrstBundle<double>&, const ImageBatch<double>&, const ImageBatch<double>&);
extern template TranslationResult<float> translate_step2(const DrstBundle<float>&, TranslationResult<float>);
extern template TranslationResult<double> translate_step2(const DrstBundle<double>&, TranslationResult<double>);
extern template LossReport drst_train_step(const DrstBundle<float>&, const ImageBatch<float>&, const ImageBatch<float>&,
                                           DrstOptimizers<float>&);
extern template LossReport drst_train_step(const DrstBundle<double>&, const ImageBatch<double>&, const ImageBatch<double>&,
                                           DrstOptimizers<double>&);

}  // namespace dcda::drst

#endif  // DCDA_DRST_HPP

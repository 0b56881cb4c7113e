#include "dcda/ccl.hpp"

namespace dcda::ccl {

std::string_view to_string(SegRole role) { return role == SegRole::SourceExpert ? "source" : "target"; }

template <typename Scalar>
SegModel<Scalar>::SegModel(SegRole role, const SegConfig& config, Rng& rng) : role_(role), config_(config) {
  if (config.depth < 1 || config.base_channels < 1) throw ConfigError("segmentation model needs depth and width >= 1");
  const Index b = config.base_channels;
  stem_ = this->register_module("stem", std::make_shared<nn::Conv2d<Scalar>>(1, b, 3, 1, 1, rng));
  for (Index l = 0; l < config.depth; ++l) {
    downs_.push_back(
        this->register_module("down" + std::to_string(l), std::make_shared<ResidualDown<Scalar>>(b << l, b << (l + 1), rng)));
  }
  // ups_[l] merges the upsampled stage l+1 features with the stage-l skip.
  for (Index l = 0; l < config.depth; ++l) {
    const Index in = (b << (l + 1)) + (b << l);
    ups_.push_back(this->register_module("up" + std::to_string(l), std::make_shared<nn::Conv2d<Scalar>>(in, b << l, 3, 1, 1, rng)));
  }
  head_ = this->register_module("head", std::make_shared<nn::Conv2d<Scalar>>(b, 2, 1, 1, 0, rng));
}

template <typename Scalar>
Var<Scalar> SegModel<Scalar>::logits(const Var<Scalar>& images) const {
  const Shape& s = images.shape();
  const Index factor = Index{1} << config_.depth;
  if (s.rank() != 4 || s[1] != 1) throw ShapeError("segmentation input must be [N, 1, H, W], got " + s.str());
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ShapeError("segmentation input " + s.str() + " is not divisible by " + std::to_string(factor));
  }
  std::vector<Var<Scalar>> skips;
  skips.push_back(ops::relu(ops::instance_norm((*stem_)(images))));
  for (const auto& down : downs_) skips.push_back((*down)(skips.back()));
  Var<Scalar> h = skips.back();
  for (Index l = config_.depth - 1; l >= 0; --l) {
    h = ops::concat_channels(ops::upsample2x(h), skips[static_cast<std::size_t>(l)]);
    h = ops::relu(ops::instance_norm((*ups_[static_cast<std::size_t>(l)])(h)));
  }
  return (*head_)(h);
}

template <typename Scalar>
ProbMap<Scalar> SegModel<Scalar>::operator()(const ImageBatch<Scalar>& batch) const {
  return normalize_probs(logits(validate_batch(batch).pixels));
}

template <typename Scalar>
CclBatchWiring<Scalar> wire_batch(const SegModel<Scalar>& f_s, const SegModel<Scalar>& f_t, const ImageBatch<Scalar>& x,
                                  const ImageBatch<Scalar>& y, const ImageBatch<Scalar>& x_hat,
                                  const ImageBatch<Scalar>& y_hat, const Mask& gt_x, bool teacher_grad) {
  if (x.pixels.shape() != y.pixels.shape()) {
    throw ShapeError("wire_batch: x " + x.pixels.shape().str() + " and y " + y.pixels.shape().str() + " differ");
  }
  if (x_hat.pixels.shape() != y.pixels.shape()) {
    throw ShapeError("wire_batch: x_hat " + x_hat.pixels.shape().str() + " does not match y " + y.pixels.shape().str());
  }
  if (y_hat.pixels.shape() != x.pixels.shape()) {
    throw ShapeError("wire_batch: y_hat " + y_hat.pixels.shape().str() + " does not match x " + x.pixels.shape().str());
  }
  if (gt_x.n != x.batch() || gt_x.height != x.height() || gt_x.width != x.width()) {
    throw ShapeError("wire_batch: labels do not match x " + x.pixels.shape().str());
  }
  auto teacher = [&] {
    if (teacher_grad) return f_s(x_hat);
    NoGradGuard no_grad;
    return f_s(x_hat);
  };
  return CclBatchWiring<Scalar>{f_s(x), teacher(), f_t(y), f_t(y_hat), gt_x};
}

template <typename Scalar>
std::pair<Var<Scalar>, LossReport> joint_loss(const CclBatchWiring<Scalar>& wiring, const TrainPhase& phase,
                                              const JointTerms& terms) {
  if (phase.stage == Stage::DrstPretrain) throw StateError("joint_loss is undefined during DRST pretraining");
  LossReport report;
  report.phase = phase;
  report.epoch = phase.epoch;
  std::vector<Var<Scalar>> parts;
  auto include = [&](const Var<Scalar>& term, const char* key) {
    report[key] += static_cast<double>(term.item());
    parts.push_back(term);
  };

  const bool past_tau = phase.stage == Stage::Joint && phase.past_tau();
  if (terms.source_expert && (!past_tau || terms.seg_after_tau)) include(seg_loss(wiring.f_s_x, wiring.gt_x), "seg_source");
  if (past_tau) {
    if (terms.seg_after_tau) include(seg_loss(wiring.f_t_yhat, wiring.gt_x), "seg_target");
    if (terms.source_expert && terms.consistency) {
      include(ccl_loss(wiring.f_t_yhat, wiring.f_s_x, terms.teacher_grad), "ccl");
      include(ccl_loss(wiring.f_t_y, wiring.f_s_xhat, terms.teacher_grad), "ccl");
    }
  }

  Var<Scalar> total(Tensor<Scalar>(Shape{1}, Scalar(0)));
  if (!parts.empty()) {
    total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = ops::add(total, parts[i]);
  }
  report["joint"] = static_cast<double>(total.item());
  return {total, report};
}

template <typename Scalar>
Mask predict(const ProbMap<Scalar>& probs) {
  const Shape& s = probs.probs.shape();
  Mask out(s[0], s[2], s[3]);
  const auto& v = probs.probs.value();
  for (Index n = 0; n < s[0]; ++n) {
    out.image(n) = (v.plane(n, 1).array() > v.plane(n, 0).array()).template cast<std::uint8_t>();
  }
  return out;
}

template <typename Scalar>
Mask predict(const SegModel<Scalar>& model, const ImageBatch<Scalar>& images) {
  NoGradGuard no_grad;
  return predict(model(images));
}

template class SegModel<float>;
template class SegModel<double>;
template CclBatchWiring<float> wire_batch(const SegModel<float>&, const SegModel<float>&, const ImageBatch<float>&,
                                          const ImageBatch<float>&, const ImageBatch<float>&, const ImageBatch<float>&,
                                          const Mask&, bool);
template CclBatchWiring<double> wire_batch(const SegModel<double>&, const SegModel<double>&, const ImageBatch<double>&,
                                           const ImageBatch<double>&, const ImageBatch<double>&,
                                           const ImageBatch<double>&, const Mask&, bool);
template std::pair<Var<float>, LossReport> joint_loss(const CclBatchWiring<float>&, const TrainPhase&, const JointTerms&);
template std::pair<Var<double>, LossReport> joint_loss(const CclBatchWiring<double>&, const TrainPhase&,
                                                       const JointTerms&);
template Mask predict(const ProbMap<float>&);
template Mask predict(const ProbMap<double>&);
template Mask predict(const SegModel<float>&, const ImageBatch<float>&);
template Mask predict(const SegModel<double>&, const ImageBatch<double>&);

}  // namespace dcda::ccl

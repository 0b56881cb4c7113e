#ifndef DCDA_LOSSES_HPP
#define DCDA_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <utility>

#include "dcda/core_types.hpp"

/// Training objectives. Each loss comes as a pure kernel over Eigen arrays
/// (value plus analytic gradient) and as a graph-recording overload on Var
/// that wires the same gradient into the backward pass.
namespace dcda {

/// Floor applied to every logarithm argument of the probability losses.
inline constexpr double kProbEps = 1e-7;

namespace detail {

template <typename Derived>
void require_unit_interval(const Eigen::ArrayBase<Derived>& p, const char* what) {
  using Scalar = typename Derived::Scalar;
  if (!p.allFinite()) throw NonFiniteError(std::string(what) + ": non-finite input");
  if (!((p >= Scalar(0)) && (p <= Scalar(1))).all()) throw RangeError(std::string(what) + ": inputs must lie in [0, 1]");
}

/// log(max(a, eps)).
template <typename Derived>
auto safe_log(const Eigen::ArrayBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return a.max(Scalar(kProbEps)).log();
}

/// d/da of safe_log: 1 / a above the floor, 0 where it is active.
template <typename Derived>
auto safe_log_derivative(const Eigen::ArrayBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return (a >= Scalar(kProbEps)).template cast<Scalar>() / a.max(Scalar(kProbEps));
}

}  // namespace detail

template <typename Scalar>
struct PairGradient {
  ArrayX<Scalar> first;
  ArrayX<Scalar> second;
};

// ---------------------------------------------------------------------------
// Adversarial objective: mean log D(real) + mean log(1 - D(fake)).

template <typename DR, typename DF>
typename DR::Scalar adv_loss(const Eigen::ArrayBase<DR>& d_real, const Eigen::ArrayBase<DF>& d_fake) {
  detail::require_unit_interval(d_real, "adv_loss");
  detail::require_unit_interval(d_fake, "adv_loss");
  using Scalar = typename DR::Scalar;
  return detail::safe_log(d_real).mean() + detail::safe_log(Scalar(1) - d_fake).mean();
}

template <typename DR, typename DF>
PairGradient<typename DR::Scalar> adv_loss_gradient(const Eigen::ArrayBase<DR>& d_real, const Eigen::ArrayBase<DF>& d_fake) {
  using Scalar = typename DR::Scalar;
  return {(detail::safe_log_derivative(d_real) / Scalar(d_real.size())).eval(),
          (-detail::safe_log_derivative(Scalar(1) - d_fake) / Scalar(d_fake.size())).eval()};
}

/// Non-saturating generator objective: mean -log D(fake).
template <typename DF>
typename DF::Scalar generator_adv_loss(const Eigen::ArrayBase<DF>& d_fake) {
  detail::require_unit_interval(d_fake, "generator_adv_loss");
  return -detail::safe_log(d_fake).mean();
}

template <typename DF>
ArrayX<typename DF::Scalar> generator_adv_loss_gradient(const Eigen::ArrayBase<DF>& d_fake) {
  using Scalar = typename DF::Scalar;
  return (-detail::safe_log_derivative(d_fake) / Scalar(d_fake.size())).eval();
}

// ---------------------------------------------------------------------------
// Cycle consistency: per-pixel mean L1 in each direction, summed.

template <typename X, typename XR, typename Y, typename YR>
typename X::Scalar cycle_loss(const Eigen::ArrayBase<X>& x, const Eigen::ArrayBase<XR>& x_rec,
                              const Eigen::ArrayBase<Y>& y, const Eigen::ArrayBase<YR>& y_rec) {
  if (x.size() != x_rec.size() || y.size() != y_rec.size()) throw ShapeError("cycle_loss: reconstruction sizes differ");
  return (x_rec - x).abs().mean() + (y_rec - y).abs().mean();
}

/// Gradient with respect to the two reconstructions (sign(0) = 0).
template <typename X, typename XR, typename Y, typename YR>
PairGradient<typename X::Scalar> cycle_loss_gradient(const Eigen::ArrayBase<X>& x, const Eigen::ArrayBase<XR>& x_rec,
                                                     const Eigen::ArrayBase<Y>& y, const Eigen::ArrayBase<YR>& y_rec) {
  using Scalar = typename X::Scalar;
  return {((x_rec - x).sign() / Scalar(x.size())).eval(), ((y_rec - y).sign() / Scalar(y.size())).eval()};
}

// ---------------------------------------------------------------------------
// Content discriminator. D_C labels content from the source encoder 0 and
// from the target encoder 1; the encoders aim for the 0.5 chance output.
// Both objectives are sums of the per-side batch means.

template <typename Scalar>
struct ContentAdversarialLoss {
  Scalar discriminator;
  Scalar encoder;
};

template <typename CX, typename CY>
ContentAdversarialLoss<typename CX::Scalar> content_adv_loss(const Eigen::ArrayBase<CX>& dc_on_cx,
                                                             const Eigen::ArrayBase<CY>& dc_on_cy) {
  detail::require_unit_interval(dc_on_cx, "content_adv_loss");
  detail::require_unit_interval(dc_on_cy, "content_adv_loss");
  using Scalar = typename CX::Scalar;
  using detail::safe_log;
  const Scalar disc = -safe_log(Scalar(1) - dc_on_cx).mean() - safe_log(dc_on_cy).mean();
  const Scalar enc = -Scalar(0.5) * (safe_log(dc_on_cx) + safe_log(Scalar(1) - dc_on_cx)).mean() -
                     Scalar(0.5) * (safe_log(dc_on_cy) + safe_log(Scalar(1) - dc_on_cy)).mean();
  return {disc, enc};
}

template <typename CX, typename CY>
PairGradient<typename CX::Scalar> content_adv_discriminator_gradient(const Eigen::ArrayBase<CX>& dc_on_cx,
                                                                     const Eigen::ArrayBase<CY>& dc_on_cy) {
  using Scalar = typename CX::Scalar;
  return {(detail::safe_log_derivative(Scalar(1) - dc_on_cx) / Scalar(dc_on_cx.size())).eval(),
          (-detail::safe_log_derivative(dc_on_cy) / Scalar(dc_on_cy.size())).eval()};
}

template <typename CX, typename CY>
PairGradient<typename CX::Scalar> content_adv_encoder_gradient(const Eigen::ArrayBase<CX>& dc_on_cx,
                                                               const Eigen::ArrayBase<CY>& dc_on_cy) {
  using Scalar = typename CX::Scalar;
  auto side = [](const auto& p) {
    return (Scalar(-0.5) * (detail::safe_log_derivative(p) - detail::safe_log_derivative(Scalar(1) - p)) /
            Scalar(p.size()))
        .eval();
  };
  return {side(dc_on_cx), side(dc_on_cy)};
}

// ---------------------------------------------------------------------------
// Segmentation: smoothed Dice on the vessel probability, batch-pooled.

inline constexpr double kDiceSmooth = 1.0;

template <typename P, typename G>
typename P::Scalar dice_loss(const Eigen::ArrayBase<P>& vessel_prob, const Eigen::ArrayBase<G>& gt) {
  using Scalar = typename P::Scalar;
  if (vessel_prob.size() != gt.size()) throw ShapeError("seg_loss: prediction and label sizes differ");
  const Scalar s(kDiceSmooth);
  const Scalar inter = (vessel_prob * gt).sum();
  return Scalar(1) - (Scalar(2) * inter + s) / (vessel_prob.sum() + gt.sum() + s);
}

template <typename P, typename G>
ArrayX<typename P::Scalar> dice_loss_gradient(const Eigen::ArrayBase<P>& vessel_prob, const Eigen::ArrayBase<G>& gt) {
  using Scalar = typename P::Scalar;
  const Scalar s(kDiceSmooth);
  const Scalar numer = Scalar(2) * (vessel_prob * gt).sum() + s;
  const Scalar denom = vessel_prob.sum() + gt.sum() + s;
  return (-(Scalar(2) * gt * denom - numer) / (denom * denom)).eval();
}

// ---------------------------------------------------------------------------
// Consistency: soft-target cross-entropy, mean over pixels, sum over classes.
// Arguments are [N, K, H, W] laid out flat; classes is K.

template <typename S, typename T>
typename S::Scalar soft_cross_entropy(const Eigen::ArrayBase<S>& student, const Eigen::ArrayBase<T>& teacher,
                                      Index pixels) {
  using Scalar = typename S::Scalar;
  if (student.size() != teacher.size()) throw ShapeError("ccl_loss: student and teacher sizes differ");
  return -(teacher * student.max(Scalar(kProbEps)).min(Scalar(1)).log()).sum() / Scalar(pixels);
}

template <typename S, typename T>
ArrayX<typename S::Scalar> soft_cross_entropy_gradient(const Eigen::ArrayBase<S>& student,
                                                       const Eigen::ArrayBase<T>& teacher, Index pixels) {
  using Scalar = typename S::Scalar;
  const auto pass = (student >= Scalar(kProbEps)).template cast<Scalar>();
  return (-pass * teacher / (student.max(Scalar(kProbEps)) * Scalar(pixels))).eval();
}

// ---------------------------------------------------------------------------
// Graph-recording overloads.

namespace detail {

template <typename Scalar>
Var<Scalar> scalar_var(Scalar v) {
  return Var<Scalar>(Tensor<Scalar>(Shape{1}, v));
}

template <typename Scalar>
void accumulate_scaled(const std::shared_ptr<Node<Scalar>>& node, const ArrayX<Scalar>& g, Scalar upstream) {
  if (node->requires_grad) node->accumulate(Tensor<Scalar>(node->value.shape(), (g * upstream).eval()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> adv_loss(const Var<Scalar>& d_real, const Var<Scalar>& d_fake) {
  const Scalar value = adv_loss(d_real.value().array(), d_fake.value().array());
  auto rn = d_real.node();
  auto fn = d_fake.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {d_real, d_fake},
                              [rn, fn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                auto g = adv_loss_gradient(rn->value.array(), fn->value.array());
                                detail::accumulate_scaled(rn, g.first, grad[0]);
                                detail::accumulate_scaled(fn, g.second, grad[0]);
                              });
}

/// Objective minimised by a discriminator: the negated adversarial loss.
template <typename Scalar>
Var<Scalar> discriminator_adv_loss(const Var<Scalar>& d_real, const Var<Scalar>& d_fake) {
  return ops::scale(adv_loss(d_real, d_fake), Scalar(-1));
}

template <typename Scalar>
Var<Scalar> generator_adv_loss(const Var<Scalar>& d_fake) {
  const Scalar value = generator_adv_loss(d_fake.value().array());
  auto fn = d_fake.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {d_fake},
                              [fn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                detail::accumulate_scaled(fn, generator_adv_loss_gradient(fn->value.array()), grad[0]);
                              });
}

template <typename Scalar>
Var<Scalar> cycle_loss(const Var<Scalar>& x, const Var<Scalar>& x_rec, const Var<Scalar>& y, const Var<Scalar>& y_rec) {
  require_same_shape(x.value(), x_rec.value(), "cycle_loss");
  require_same_shape(y.value(), y_rec.value(), "cycle_loss");
  const Scalar value = cycle_loss(x.value().array(), x_rec.value().array(), y.value().array(), y_rec.value().array());
  auto xn = x.node();
  auto xrn = x_rec.node();
  auto yn = y.node();
  auto yrn = y_rec.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {x, x_rec, y, y_rec},
                              [xn, xrn, yn, yrn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                auto g = cycle_loss_gradient(xn->value.array(), xrn->value.array(), yn->value.array(),
                                                             yrn->value.array());
                                detail::accumulate_scaled(xrn, g.first, grad[0]);
                                detail::accumulate_scaled(yrn, g.second, grad[0]);
                                detail::accumulate_scaled(xn, g.first, -grad[0]);
                                detail::accumulate_scaled(yn, g.second, -grad[0]);
                              });
}

template <typename Scalar>
Var<Scalar> content_adv_discriminator_loss(const Var<Scalar>& dc_on_cx, const Var<Scalar>& dc_on_cy) {
  const auto value = content_adv_loss(dc_on_cx.value().array(), dc_on_cy.value().array());
  auto xn = dc_on_cx.node();
  auto yn = dc_on_cy.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value.discriminator), {dc_on_cx, dc_on_cy},
                              [xn, yn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                auto g = content_adv_discriminator_gradient(xn->value.array(), yn->value.array());
                                detail::accumulate_scaled(xn, g.first, grad[0]);
                                detail::accumulate_scaled(yn, g.second, grad[0]);
                              });
}

template <typename Scalar>
Var<Scalar> content_adv_encoder_loss(const Var<Scalar>& dc_on_cx, const Var<Scalar>& dc_on_cy) {
  const auto value = content_adv_loss(dc_on_cx.value().array(), dc_on_cy.value().array());
  auto xn = dc_on_cx.node();
  auto yn = dc_on_cy.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value.encoder), {dc_on_cx, dc_on_cy},
                              [xn, yn](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                auto g = content_adv_encoder_gradient(xn->value.array(), yn->value.array());
                                detail::accumulate_scaled(xn, g.first, grad[0]);
                                detail::accumulate_scaled(yn, g.second, grad[0]);
                              });
}

namespace detail {

template <typename Scalar>
ArrayX<Scalar> vessel_channel(const Tensor<Scalar>& probs) {
  const Index n = probs.dim(0);
  const Index area = probs.dim(2) * probs.dim(3);
  ArrayX<Scalar> out(n * area);
  for (Index i = 0; i < n; ++i) out.segment(i * area, area) = probs.array().segment((i * 2 + 1) * area, area);
  return out;
}

inline void require_mask_matches(const Shape& probs, const Mask& gt) {
  if (probs[0] != gt.n || probs[2] != gt.height || probs[3] != gt.width) {
    throw ShapeError("seg_loss: prediction " + probs.str() + " vs mask [" + std::to_string(gt.n) + "," +
                     std::to_string(gt.height) + "," + std::to_string(gt.width) + "]");
  }
}

}  // namespace detail

/// Smoothed Dice loss of the vessel channel against a binary mask.
template <typename Scalar>
Var<Scalar> seg_loss(const ProbMap<Scalar>& pred, const Mask& gt) {
  detail::require_mask_matches(pred.probs.shape(), gt);
  const ArrayX<Scalar> labels = gt.labels.template cast<Scalar>();
  const Scalar value = dice_loss(detail::vessel_channel(pred.probs.value()), labels);
  auto pn = pred.probs.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {pred.probs},
                              [pn, labels](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                const ArrayX<Scalar> g = dice_loss_gradient(detail::vessel_channel(pn->value), labels);
                                Tensor<Scalar> full(pn->value.shape());
                                const Index area = full.dim(2) * full.dim(3);
                                for (Index i = 0; i < full.dim(0); ++i) {
                                  full.array().segment((i * 2 + 1) * area, area) = grad[0] * g.segment(i * area, area);
                                }
                                pn->accumulate(full);
                              });
}

/// Soft-target cross-entropy of student against teacher. By default no
/// gradient reaches the teacher; teacher_grad lets it flow into both sides.
template <typename Scalar>
Var<Scalar> ccl_loss(const ProbMap<Scalar>& student, const ProbMap<Scalar>& teacher, bool teacher_grad = false) {
  require_same_shape(student.probs.value(), teacher.probs.value(), "ccl_loss");
  const Shape& s = student.probs.shape();
  const Index pixels = s[0] * s[2] * s[3];
  const Tensor<Scalar> target = teacher.probs.value();
  const Scalar value = soft_cross_entropy(student.probs.value().array(), target.array(), pixels);
  auto sn = student.probs.node();
  if (!teacher_grad) {
    return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {student.probs},
                                [sn, target, pixels](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                  detail::accumulate_scaled(
                                      sn, soft_cross_entropy_gradient(sn->value.array(), target.array(), pixels), grad[0]);
                                });
  }
  auto tn = teacher.probs.node();
  return Var<Scalar>::from_op(Tensor<Scalar>(Shape{1}, value), {student.probs, teacher.probs},
                              [sn, tn, pixels](const Tensor<Scalar>& grad, const Tensor<Scalar>&) {
                                detail::accumulate_scaled(
                                    sn, soft_cross_entropy_gradient(sn->value.array(), tn->value.array(), pixels), grad[0]);
                                const ArrayX<Scalar> dt = -detail::safe_log(sn->value.array()) / Scalar(pixels);
                                detail::accumulate_scaled(tn, dt, grad[0]);
                              });
}

}  // namespace dcda

#endif  // DCDA_LOSSES_HPP

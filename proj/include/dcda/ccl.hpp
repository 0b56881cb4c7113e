#ifndef DCDA_CCL_HPP
#define DCDA_CCL_HPP

#include <memory>
#include <utility>
#include <vector>

#include "dcda/core_types.hpp"
#include "dcda/losses.hpp"
#include "dcda/nn.hpp"

/// Collaborative consistency learning: the source- and target-style
/// segmentation experts, their batch wiring and the staged joint objective.
namespace dcda::ccl {

enum class SegRole { SourceExpert, TargetExpert };

[[nodiscard]] std::string_view to_string(SegRole role);

struct SegConfig {
  /// Stride-2 residual stages; inputs must be divisible by 2^depth.
  Index depth = 4;
  Index base_channels = 8;
};

/// Residual stage: stride-2 conv pair with a strided 1x1 projection shortcut.
template <typename Scalar>
class ResidualDown final : public nn::Module<Scalar> {
 public:
  ResidualDown(Index in, Index out, Rng& rng) {
    conv0_ = this->register_module("conv0", std::make_shared<nn::Conv2d<Scalar>>(in, out, 3, 2, 1, rng));
    conv1_ = this->register_module("conv1", std::make_shared<nn::Conv2d<Scalar>>(out, out, 3, 1, 1, rng));
    skip_ = this->register_module("skip", std::make_shared<nn::Conv2d<Scalar>>(in, out, 1, 2, 0, rng, false));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    const Var<Scalar> h = ops::relu(ops::instance_norm((*conv0_)(x)));
    return ops::relu(ops::add(ops::instance_norm((*conv1_)(h)), ops::instance_norm((*skip_)(x))));
  }

 private:
  std::shared_ptr<nn::Conv2d<Scalar>> conv0_;
  std::shared_ptr<nn::Conv2d<Scalar>> conv1_;
  std::shared_ptr<nn::Conv2d<Scalar>> skip_;
};

/// U-Net with a residual encoder and a two-class softmax head.
template <typename Scalar>
class SegModel final : public nn::Module<Scalar> {
 public:
  SegModel(SegRole role, const SegConfig& config, Rng& rng);

  /// Class logits [N, 2, H, W] for images [N, 1, H, W].
  [[nodiscard]] Var<Scalar> logits(const Var<Scalar>& images) const;
  [[nodiscard]] ProbMap<Scalar> operator()(const ImageBatch<Scalar>& batch) const;

  [[nodiscard]] SegRole role() const { return role_; }
  [[nodiscard]] const SegConfig& config() const { return config_; }
  /// "F^S" or "F^T".
  [[nodiscard]] std::string symbol() const { return role_ == SegRole::SourceExpert ? "F^S" : "F^T"; }

 private:
  SegRole role_;
  SegConfig config_;
  std::shared_ptr<nn::Conv2d<Scalar>> stem_;
  std::vector<std::shared_ptr<ResidualDown<Scalar>>> downs_;
  std::vector<std::shared_ptr<nn::Conv2d<Scalar>>> ups_;
  std::shared_ptr<nn::Conv2d<Scalar>> head_;
};

/// The four expert outputs of one unpaired batch. f_t_yhat and f_s_x share
/// x's content; f_t_y and f_s_xhat share y's.
template <typename Scalar>
struct CclBatchWiring {
  ProbMap<Scalar> f_s_x;
  ProbMap<Scalar> f_s_xhat;
  ProbMap<Scalar> f_t_y;
  ProbMap<Scalar> f_t_yhat;
  Mask gt_x;
};

/// Runs both experts. f_s_xhat is only ever a teacher, so it is computed
/// without a graph unless teacher_grad is set.
template <typename Scalar>
CclBatchWiring<Scalar> wire_batch(const SegModel<Scalar>& f_s, const SegModel<Scalar>& f_t, const ImageBatch<Scalar>& x,
                                  const ImageBatch<Scalar>& y, const ImageBatch<Scalar>& x_hat,
                                  const ImageBatch<Scalar>& y_hat, const Mask& gt_x, bool teacher_grad = false);

/// Which terms of the joint objective are enabled; the defaults give the
/// full method, each flag switched off gives one ablation.
struct JointTerms {
  /// Source expert in the loop: its segmentation term and both teacher terms.
  bool source_expert = true;
  /// Segmentation terms after the starting flag.
  bool seg_after_tau = true;
  /// Both consistency terms.
  bool consistency = true;
  /// Let the consistency loss also update the teacher.
  bool teacher_grad = false;
};

/// Staged objective. Up to epoch tau: Dice of F^S on x. After tau: adds Dice
/// of F^T on y_hat against x's labels and the two consistency terms
/// F^T(y_hat) <- F^S(x), F^T(y) <- F^S(x_hat). The report holds each term
/// (0 when disabled) and their sum under "joint".
template <typename Scalar>
std::pair<Var<Scalar>, LossReport> joint_loss(const CclBatchWiring<Scalar>& wiring, const TrainPhase& phase,
                                              const JointTerms& terms = {});

/// Per-pixel argmax; an exact tie goes to background.
template <typename Scalar>
Mask predict(const ProbMap<Scalar>& probs);

template <typename Scalar>
Mask predict(const SegModel<Scalar>& model, const ImageBatch<Scalar>& images);

extern template class SegModel<float>;
extern template class SegModel<double>;
extern template CclBatchWiring<float> wire_batch(const SegModel<float>&, const SegModel<float>&, const ImageBatch<float>&,
                                                 const ImageBatch<float>&, const ImageBatch<float>&,
                                                 const ImageBatch<float>&, const Mask&, bool);
extern template CclBatchWiring<double> wire_batch(const SegModel<double>&, const SegModel<double>&,
                                                  const ImageBatch<double>&, const ImageBatch<double>&,
                                                  const ImageBatch<double>&, const ImageBatch<double>&, const Mask&, bool);
extern template std::pair<Var<float>, LossReport> joint_loss(const CclBatchWiring<float>&, const TrainPhase&,
                                                             const JointTerms&);
extern template std::pair<Var<double>, LossReport> joint_loss(const CclBatchWiring<double>&, const TrainPhase&,
                                                              const JointTerms&);
extern template Mask predict(const ProbMap<float>&);
extern template Mask predict(const ProbMap<double>&);
extern template Mask predict(const SegModel<float>&, const ImageBatch<float>&);
extern template Mask predict(const SegModel<double>&, const ImageBatch<double>&);

}  // namespace dcda::ccl

#endif  // DCDA_CCL_HPP

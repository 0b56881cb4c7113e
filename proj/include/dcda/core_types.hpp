#ifndef DCDA_CORE_TYPES_HPP
#define DCDA_CORE_TYPES_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dcda/autograd.hpp"
#include "dcda/ops.hpp"

namespace dcda {

enum class DomainTag { Source, Target };

[[nodiscard]] std::string_view to_string(DomainTag tag);
[[nodiscard]] DomainTag parse_domain(std::string_view text);

/// Single-channel images [N, 1, H, W] with values in [0, 1], all from one domain.
/// The pixels are a graph node so generated batches keep their lineage.
template <typename Scalar>
struct ImageBatch {
  Var<Scalar> pixels;
  DomainTag domain = DomainTag::Source;
  std::vector<std::string> ids;

  [[nodiscard]] Index batch() const { return pixels.shape()[0]; }
  [[nodiscard]] Index height() const { return pixels.shape()[2]; }
  [[nodiscard]] Index width() const { return pixels.shape()[3]; }
};

/// Domain-invariant spatial features [N, C_c, H/f, W/f].
template <typename Scalar>
struct ContentMap {
  Var<Scalar> features;
  DomainTag source_domain = DomainTag::Source;
};

/// Domain-specific appearance vector [N, d_s].
template <typename Scalar>
struct StyleCode {
  Var<Scalar> code;
  DomainTag source_domain = DomainTag::Source;
};

/// Binary vessel labels [N, H, W].
struct Mask {
  Index n = 0;
  Index height = 0;
  Index width = 0;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, 1> labels;

  Mask() = default;
  Mask(Index n_, Index h, Index w) : n(n_), height(h), width(w), labels(decltype(labels)::Zero(n_ * h * w)) {}

  using ImageMap = Eigen::Map<Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstImageMap = Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  ImageMap image(Index i) { return ImageMap(labels.data() + i * height * width, height, width); }
  [[nodiscard]] ConstImageMap image(Index i) const {
    return ConstImageMap(labels.data() + i * height * width, height, width);
  }
};

/// Single H x W binary image, the unit the metrics work on.
using BinaryImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Turns on the sum-to-one check every ProbMap performs on construction.
/// Test builds enable it by default (DCDA_CHECK_INVARIANTS).
void set_probmap_checks(bool enabled);
[[nodiscard]] bool probmap_checks_enabled();

/// Per-pixel class probabilities [N, 2, H, W]; channel 1 is vessel.
template <typename Scalar>
struct ProbMap {
  static constexpr Index kClasses = 2;
  Var<Scalar> probs;

  ProbMap() = default;
  explicit ProbMap(Var<Scalar> p);

  [[nodiscard]] Index batch() const { return probs.shape()[0]; }
};

/// Oracle is the target-supervised upper-bound run, outside the main schedule.
enum class Stage { DrstPretrain, SourcePretrain, Joint, Oracle };

[[nodiscard]] std::string_view to_string(Stage stage);

/// Active stage of the schedule. Epochs count from 1 within each stage;
/// tau is the consistency starting flag of the joint stage.
struct TrainPhase {
  Stage stage = Stage::DrstPretrain;
  int epoch = 1;
  int tau = 0;

  /// Consistency terms are active (epoch > tau).
  [[nodiscard]] bool past_tau() const { return epoch > tau; }
};

/// Named scalar losses for one step or one epoch average.
struct LossReport {
  static constexpr const char* kKeys[] = {"adv_x", "adv_y", "content_adv", "cyc", "seg_source", "seg_target", "ccl", "joint"};

  std::map<std::string, double> values;
  int epoch = 0;
  TrainPhase phase;

  LossReport();
  double& operator[](const std::string& key) { return values[key]; }
  [[nodiscard]] double at(const std::string& key) const { return values.at(key); }
  [[nodiscard]] bool all_finite() const;
  /// One whitespace-separated key=value record.
  [[nodiscard]] std::string to_record() const;
  static LossReport from_record(const std::string& line);
  friend bool operator==(const LossReport& a, const LossReport& b) {
    return a.values == b.values && a.epoch == b.epoch && a.phase.stage == b.phase.stage;
  }
};

/// Checks shape [N>=1, 1, H, W] with H == W, finiteness and the [0, 1] range.
template <typename Scalar>
const ImageBatch<Scalar>& validate_batch(const ImageBatch<Scalar>& batch) {
  const Shape& s = batch.pixels.shape();
  if (s.rank() != 4) throw ShapeError("image batch must be rank 4, got " + s.str());
  if (s[0] < 1) throw ShapeError("image batch is empty");
  if (s[1] != 1) throw ShapeError("image batch must be single-channel, got " + s.str());
  if (s[2] != s[3]) throw ShapeError("image batch must be square, got " + s.str());
  if (!batch.ids.empty() && static_cast<Index>(batch.ids.size()) != s[0]) {
    throw ShapeError("image batch has " + std::to_string(batch.ids.size()) + " ids for " + std::to_string(s[0]) + " images");
  }
  const auto& a = batch.pixels.value().array();
  if (!a.allFinite()) throw NonFiniteError("image batch contains non-finite pixels");
  if ((a < Scalar(-1e-6)).any() || (a > Scalar(1 + 1e-6)).any()) throw RangeError("image batch pixels outside [0, 1]");
  return batch;
}

/// Softmax over the class axis of [N, K, H, W] logits.
template <typename Scalar>
ProbMap<Scalar> normalize_probs(const Var<Scalar>& logits) {
  if (logits.shape().rank() != 4) throw ShapeError("logits must be [N, K, H, W], got " + logits.shape().str());
  if (!logits.value().all_finite()) throw NonFiniteError("logits contain non-finite values");
  return ProbMap<Scalar>(ops::softmax_channels(logits));
}

template <typename Scalar>
ProbMap<Scalar>::ProbMap(Var<Scalar> p) : probs(std::move(p)) {
  const Shape& s = probs.shape();
  if (s.rank() != 4 || s[1] != kClasses) throw ShapeError("ProbMap must be [N, 2, H, W], got " + s.str());
  if (!probmap_checks_enabled()) return;
  const auto& v = probs.value();
  if ((v.array() < Scalar(0)).any() || (v.array() > Scalar(1)).any()) throw RangeError("ProbMap entries outside [0, 1]");
  for (Index n = 0; n < s[0]; ++n) {
    const auto sums = v.sample(n).colwise().sum();
    const double worst = (sums.array() - Scalar(1)).abs().maxCoeff();
    if (!(worst <= 1e-5)) throw RangeError("ProbMap pixel sums deviate from 1 by " + std::to_string(worst));
  }
}

/// Image tensor from a batch of equally sized H x W planes.
template <typename Scalar>
ImageBatch<Scalar> make_batch(const std::vector<RowMatrix<Scalar>>& planes, DomainTag domain,
                              std::vector<std::string> ids = {}) {
  if (planes.empty()) throw ShapeError("make_batch: no images");
  const Index h = planes.front().rows();
  const Index w = planes.front().cols();
  Tensor<Scalar> t(Shape{static_cast<Index>(planes.size()), 1, h, w});
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (planes[i].rows() != h || planes[i].cols() != w) throw ShapeError("make_batch: images differ in size");
    t.plane(static_cast<Index>(i), 0) = planes[i];
  }
  return ImageBatch<Scalar>{Var<Scalar>(std::move(t)), domain, std::move(ids)};
}

}  // namespace dcda

#endif  // DCDA_CORE_TYPES_HPP

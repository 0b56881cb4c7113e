#ifndef DCDA_METRICS_HPP
#define DCDA_METRICS_HPP

#include <optional>
#include <string>
#include <vector>

#include "dcda/ccl.hpp"
#include "dcda/data.hpp"

/// Overlap and boundary metrics, aggregation and the paired t-test.
namespace dcda::metrics {

using MaskView = Eigen::Ref<const BinaryImage>;

/// 100 * 2|P & G| / (|P| + |G|); 100 when both are empty.
[[nodiscard]] double dice_score(const MaskView& pred, const MaskView& gt);

/// Exact Euclidean distance from every pixel centre to the nearest set pixel
/// (infinity everywhere if the set is empty).
[[nodiscard]] Eigen::ArrayXXd distance_transform(const MaskView& set);

/// Percentile with linear interpolation between order statistics at q * (n - 1).
[[nodiscard]] double percentile(std::vector<double> values, double q);

/// 95th percentile of the pooled directed distances P -> G and G -> P, in
/// pixels. Empty when either mask is empty.
[[nodiscard]] std::optional<double> hd95(const MaskView& pred, const MaskView& gt);

/// Regularized incomplete beta function I_x(a, b).
[[nodiscard]] double incomplete_beta(double a, double b, double x);
/// Two-tailed p-value of Student's t with dof degrees of freedom.
[[nodiscard]] double student_t_two_tailed(double t, double dof);

struct TTestResult {
  double t = 0;
  double dof = 0;
  double p = 1;
};

/// Paired two-tailed t-test on a - b.
[[nodiscard]] TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

struct ImageScore {
  std::string id;
  double dice = 0;
  std::optional<double> hd95;
};

/// Per-image scores plus mean and population standard deviation; HD95
/// aggregates use only images where it is defined.
struct EvalResult {
  std::vector<ImageScore> per_image;  ///< sorted by id
  double mean_dice = 0;
  double std_dice = 0;
  std::optional<double> mean_hd95;
  std::optional<double> std_hd95;
  Index hd95_undefined = 0;

  static EvalResult aggregate(std::vector<ImageScore> scores);
  /// id,dice,hd95 rows (UNDEFINED where missing) and a trailing mean±std row.
  [[nodiscard]] std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
  /// "Dice 83.85±3.51  HD95 2.10±0.40"
  [[nodiscard]] std::string summary() const;
  [[nodiscard]] std::vector<double> dice_values() const;
};

[[nodiscard]] std::string mean_std(double mean, double std);

EvalResult score_masks(const std::vector<std::string>& ids, const Mask& pred, const Mask& gt);

/// Predicts every labeled image of the domain's split with the model
/// (no gradient, fixed batching) and scores it at the model resolution.
template <typename Scalar>
EvalResult evaluate(const ccl::SegModel<Scalar>& model, const data::DatasetManifest& manifest, DomainTag domain,
                    bool invert, Index image_size, data::Split split = data::Split::Test, Index batch_size = 8,
                    Mask* predictions = nullptr);

/// Scores prediction PNGs named <id>.png in pred_dir against the domain's
/// labels, both resized to image_size.
EvalResult evaluate_predictions(const std::filesystem::path& pred_dir, const data::DatasetManifest& manifest,
                                DomainTag domain, Index image_size, data::Split split = data::Split::Test);

}  // namespace dcda::metrics

#endif  // DCDA_METRICS_HPP

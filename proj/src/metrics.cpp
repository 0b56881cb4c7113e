#include "dcda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace dcda::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const MaskView& a, const MaskView& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": masks differ in shape (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

// Lower envelope of parabolas, squared distances along one line.
void edt_1d(const double* f, double* d, Index n, std::vector<Index>& v, std::vector<double>& z) {
  Index k = -1;
  for (Index q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const auto qd = static_cast<double>(q);
    double s = -kInf;
    while (k >= 0) {
      const auto vk = static_cast<double>(v[static_cast<std::size_t>(k)]);
      s = ((f[q] + qd * qd) - (f[v[static_cast<std::size_t>(k)]] + vk * vk)) / (2 * qd - 2 * vk);
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d, d + n, kInf);
    return;
  }
  Index j = 0;
  for (Index q = 0; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    while (z[static_cast<std::size_t>(j) + 1] < qd) ++j;
    const auto vj = static_cast<double>(v[static_cast<std::size_t>(j)]);
    d[q] = (qd - vj) * (qd - vj) + f[v[static_cast<std::size_t>(j)]];
  }
}

std::vector<double> directed(const MaskView& from, const Eigen::ArrayXXd& to_distance) {
  std::vector<double> out;
  for (Index i = 0; i < from.rows(); ++i) {
    for (Index j = 0; j < from.cols(); ++j) {
      if (from(i, j)) out.push_back(to_distance(i, j));
    }
  }
  return out;
}

double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double c = 1;
  double d = 1 - (a + b) * x / (a + 1);
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1) * (a + m2));
    d = 1 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1));
    d = 1 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1) < eps) return h;
  }
  return h;
}

std::pair<double, double> mean_and_std(const std::vector<double>& v) {
  if (v.empty()) return {0, 0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double dice_score(const MaskView& pred, const MaskView& gt) {
  require_same_shape(pred, gt, "dice_score");
  Index both = 0, p = 0, g = 0;
  for (Index i = 0; i < pred.rows(); ++i) {
    for (Index j = 0; j < pred.cols(); ++j) {
      const bool a = pred(i, j) != 0, b = gt(i, j) != 0;
      p += a;
      g += b;
      both += a && b;
    }
  }
  if (p + g == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

Eigen::ArrayXXd distance_transform(const MaskView& set) {
  const Index h = set.rows(), w = set.cols();
  Eigen::ArrayXXd f(h, w);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) f(i, j) = set(i, j) ? 0.0 : kInf;
  }
  const Index n = std::max(h, w);
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  std::vector<double> in(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
  for (Index j = 0; j < w; ++j) {
    for (Index i = 0; i < h; ++i) in[static_cast<std::size_t>(i)] = f(i, j);
    edt_1d(in.data(), out.data(), h, v, z);
    for (Index i = 0; i < h; ++i) f(i, j) = out[static_cast<std::size_t>(i)];
  }
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) in[static_cast<std::size_t>(j)] = f(i, j);
    edt_1d(in.data(), out.data(), w, v, z);
    for (Index j = 0; j < w; ++j) f(i, j) = out[static_cast<std::size_t>(j)];
  }
  return f.unaryExpr([](double v) { return std::sqrt(v); });
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw RangeError("percentile of an empty set");
  if (!(q >= 0 && q <= 1)) throw RangeError("percentile q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

std::optional<double> hd95(const MaskView& pred, const MaskView& gt) {
  require_same_shape(pred, gt, "hd95");
  if ((pred != 0).count() == 0 || (gt != 0).count() == 0) return std::nullopt;
  auto pooled = directed(pred, distance_transform(gt));
  const auto back = directed(gt, distance_transform(pred));
  pooled.insert(pooled.end(), back.begin(), back.end());
  return percentile(std::move(pooled), 0.95);
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw RangeError("incomplete_beta needs a, b > 0");
  if (!(x >= 0 && x <= 1)) throw RangeError("incomplete_beta needs x in [0, 1]");
  if (x == 0 || x == 1) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_continued_fraction(a, b, x) / a;
  return 1 - front * beta_continued_fraction(b, a, 1 - x) / b;
}

double student_t_two_tailed(double t, double dof) {
  if (!(dof > 0)) throw RangeError("degrees of freedom must be positive");
  if (!std::isfinite(t)) throw NonFiniteError("t statistic is not finite");
  if (t == 0) return 1.0;
  return incomplete_beta(dof / 2, 0.5, dof / (dof + t * t));
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("paired_ttest: samples differ in length");
  if (a.size() < 2) throw RangeError("paired_ttest needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  if (std::all_of(d.begin(), d.end(), [&](double x) { return x == d.front(); })) {
    throw DegenerateError("paired_ttest: all differences are equal");
  }
  const double sd = std::sqrt(ss / (n - 1));
  TTestResult r;
  r.dof = n - 1;
  r.t = mean == 0 ? 0.0 : mean / (sd / std::sqrt(n));
  r.p = student_t_two_tailed(r.t, r.dof);
  return r;
}

std::string mean_std(double mean, double std) { return fixed2(mean) + "±" + fixed2(std); }

EvalResult EvalResult::aggregate(std::vector<ImageScore> scores) {
  std::sort(scores.begin(), scores.end(), [](const ImageScore& x, const ImageScore& y) { return x.id < y.id; });
  EvalResult r;
  r.per_image = std::move(scores);
  std::vector<double> dice, hd;
  for (const auto& s : r.per_image) {
    dice.push_back(s.dice);
    if (s.hd95) {
      hd.push_back(*s.hd95);
    } else {
      ++r.hd95_undefined;
    }
  }
  std::tie(r.mean_dice, r.std_dice) = mean_and_std(dice);
  if (!hd.empty()) {
    const auto [m, s] = mean_and_std(hd);
    r.mean_hd95 = m;
    r.std_hd95 = s;
  }
  return r;
}

std::vector<double> EvalResult::dice_values() const {
  std::vector<double> out;
  for (const auto& s : per_image) out.push_back(s.dice);
  return out;
}

std::string EvalResult::csv() const {
  std::ostringstream out;
  out << "id,dice,hd95\n";
  for (const auto& s : per_image) out << s.id << ',' << full(s.dice) << ',' << (s.hd95 ? full(*s.hd95) : "UNDEFINED") << '\n';
  out << "mean±std," << mean_std(mean_dice, std_dice) << ','
      << (mean_hd95 ? mean_std(*mean_hd95, *std_hd95) : std::string("UNDEFINED")) << '\n';
  return out.str();
}

void EvalResult::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << csv();
  if (!out) throw IOError("cannot write " + path.string());
}

std::string EvalResult::summary() const {
  std::string s = "Dice " + mean_std(mean_dice, std_dice) + "  HD95 ";
  s += mean_hd95 ? mean_std(*mean_hd95, *std_hd95) : "UNDEFINED";
  if (mean_hd95 && hd95_undefined > 0) s += " (" + std::to_string(hd95_undefined) + " undefined)";
  return s;
}

EvalResult score_masks(const std::vector<std::string>& ids, const Mask& pred, const Mask& gt) {
  if (pred.n != gt.n || pred.height != gt.height || pred.width != gt.width ||
      static_cast<Index>(ids.size()) != pred.n) {
    throw ShapeError("score_masks: predictions, labels and ids disagree in size");
  }
  std::vector<ImageScore> scores;
  for (Index i = 0; i < pred.n; ++i) {
    const BinaryImage p = pred.image(i);
    const BinaryImage g = gt.image(i);
    scores.push_back({ids[static_cast<std::size_t>(i)], dice_score(p, g), hd95(p, g)});
  }
  return EvalResult::aggregate(std::move(scores));
}

template <typename Scalar>
EvalResult evaluate(const ccl::SegModel<Scalar>& model, const data::DatasetManifest& manifest, DomainTag domain,
                    bool invert, Index image_size, data::Split split, Index batch_size, Mask* predictions) {
  const auto samples = manifest.evaluation_samples(domain, split);
  if (samples.empty()) throw ConfigError("no labeled " + std::string(data::to_string(split)) + " images for evaluation");
  const auto set = data::load_labeled<Scalar>(manifest, samples, image_size, invert);
  Mask all(set.size(), image_size, image_size);
  std::vector<std::size_t> everything(set.ids.size());
  std::iota(everything.begin(), everything.end(), std::size_t{0});
  const Mask gt = data::stack_masks(set.labels, everything);
  for (std::size_t start = 0; start < everything.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(everything.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<std::size_t> picks(everything.begin() + static_cast<std::ptrdiff_t>(start),
                                         everything.begin() + static_cast<std::ptrdiff_t>(stop));
    const Mask pred = ccl::predict(model, data::stack(set.images, picks, set.ids, domain));
    for (Index k = 0; k < pred.n; ++k) all.image(static_cast<Index>(start) + k) = pred.image(k);
  }
  if (predictions) *predictions = all;
  return score_masks(set.ids, all, gt);
}

EvalResult evaluate_predictions(const std::filesystem::path& pred_dir, const data::DatasetManifest& manifest,
                                DomainTag domain, Index image_size, data::Split split) {
  const auto samples = manifest.evaluation_samples(domain, split);
  if (samples.empty()) throw ConfigError("no labeled images for evaluation");
  std::vector<ImageScore> scores;
  for (const auto& s : samples) {
    const auto pred_path = pred_dir / (s.id + ".png");
    if (!std::filesystem::is_regular_file(pred_path)) throw IOError("missing prediction " + pred_path.string());
    const BinaryImage p = data::preprocess_mask(data::read_png(pred_path), image_size);
    const BinaryImage g = data::preprocess_mask(data::read_png(manifest.root() / s.label_path), image_size);
    scores.push_back({s.id, dice_score(p, g), hd95(p, g)});
  }
  return EvalResult::aggregate(std::move(scores));
}

template EvalResult evaluate(const ccl::SegModel<float>&, const data::DatasetManifest&, DomainTag, bool, Index,
                             data::Split, Index, Mask*);
template EvalResult evaluate(const ccl::SegModel<double>&, const data::DatasetManifest&, DomainTag, bool, Index,
                             data::Split, Index, Mask*);

}  // namespace dcda::metrics

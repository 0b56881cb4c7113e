#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dcda/metrics.hpp"

using namespace dcda;
using namespace dcda::metrics;

namespace {

BinaryImage random_mask(Index size, double rate, Rng& rng) {
  BinaryImage m(size, size);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? 1 : 0;
  return m;
}

BinaryImage from_points(Index h, Index w, std::initializer_list<std::pair<Index, Index>> pts) {
  BinaryImage m = BinaryImage::Zero(h, w);
  for (auto [r, c] : pts) m(r, c) = 1;
  return m;
}

double dice_oracle(const BinaryImage& p, const BinaryImage& g) {
  std::size_t both = 0, np = 0, ng = 0;
  for (Index i = 0; i < p.size(); ++i) {
    np += p.data()[i] != 0;
    ng += g.data()[i] != 0;
    both += p.data()[i] != 0 && g.data()[i] != 0;
  }
  if (np + ng == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::vector<double> directed_oracle(const BinaryImage& from, const BinaryImage& to) {
  std::vector<double> out;
  for (Index a = 0; a < from.rows(); ++a) {
    for (Index b = 0; b < from.cols(); ++b) {
      if (!from(a, b)) continue;
      double best = INFINITY;
      for (Index c = 0; c < to.rows(); ++c) {
        for (Index d = 0; d < to.cols(); ++d) {
          if (to(c, d)) best = std::min(best, std::hypot(double(a - c), double(b - d)));
        }
      }
      out.push_back(best);
    }
  }
  return out;
}

double hd95_oracle(const BinaryImage& p, const BinaryImage& g) {
  auto pooled = directed_oracle(p, g);
  const auto back = directed_oracle(g, p);
  pooled.insert(pooled.end(), back.begin(), back.end());
  std::sort(pooled.begin(), pooled.end());
  const double h = 0.95 * static_cast<double>(pooled.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= pooled.size()) return pooled.back();
  return pooled[lo] + (h - static_cast<double>(lo)) * (pooled[lo + 1] - pooled[lo]);
}

double max_hausdorff_oracle(const BinaryImage& p, const BinaryImage& g) {
  const auto a = directed_oracle(p, g);
  const auto b = directed_oracle(g, p);
  return std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
}

// Two-tailed p from Simpson integration of the t density over [0, |t|].
double t_pvalue_oracle(double t, double nu) {
  const double c = std::tgamma((nu + 1) / 2) / (std::sqrt(nu * std::numbers::pi) * std::tgamma(nu / 2));
  auto f = [&](double x) { return c * std::pow(1 + x * x / nu, -(nu + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = f(0) + f(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
  return 1 - 2 * s * h / 3;
}

}  // namespace

TEST_CASE("dice examples") {
  const auto a = from_points(4, 4, {{1, 1}, {2, 2}});
  CHECK(dice_score(a, a) == 100.0);
  CHECK(dice_score(a, from_points(4, 4, {{0, 0}})) == 0.0);
  CHECK(dice_score(from_points(2, 2, {{0, 0}, {0, 1}}), from_points(2, 2, {{0, 1}, {1, 1}})) == 50.0);
  CHECK(dice_score(BinaryImage::Zero(3, 3), BinaryImage::Zero(3, 3)) == 100.0);
  CHECK(dice_score(a, BinaryImage::Zero(4, 4)) == 0.0);
  CHECK_THROWS_AS(static_cast<void>(dice_score(a, BinaryImage::Zero(3, 4))), ShapeError);
}

TEST_CASE("hd95 examples") {
  const auto a = from_points(8, 8, {{1, 1}, {2, 5}});
  CHECK(*hd95(a, a) == 0.0);
  CHECK(*hd95(from_points(5, 5, {{0, 0}}), from_points(5, 5, {{3, 4}})) == 5.0);
  CHECK_FALSE(hd95(a, BinaryImage::Zero(8, 8)).has_value());
  CHECK_FALSE(hd95(BinaryImage::Zero(8, 8), BinaryImage::Zero(8, 8)).has_value());
  CHECK_THROWS_AS(static_cast<void>(hd95(a, BinaryImage::Zero(8, 9))), ShapeError);

  BinaryImage block = BinaryImage::Zero(8, 8), shifted = BinaryImage::Zero(8, 8);
  block.topLeftCorner(4, 4) = 1;
  shifted.block(1, 0, 4, 4) = 1;
  CHECK(*hd95(block, shifted) == hd95_oracle(block, shifted));
}

TEST_CASE("distance transform matches brute force") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_mask(13, 0.05, rng);
    if ((m != 0).count() == 0) continue;
    const auto d = distance_transform(m);
    const BinaryImage all = BinaryImage::Ones(13, 13);
    const auto brute = directed_oracle(all, m);
    for (Index i = 0; i < 13 * 13; ++i) CHECK(d(i / 13, i % 13) == doctest::Approx(brute[i]).epsilon(1e-12));
  }
  CHECK(std::isinf(distance_transform(BinaryImage::Zero(3, 3))(1, 1)));
}

TEST_CASE("percentile interpolation") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(percentile({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK(percentile({7}, 0.95) == 7.0);
  CHECK_THROWS_AS(static_cast<void>(percentile({}, 0.5)), RangeError);
}

TEST_CASE("oracle equivalence and properties on random 16x16 pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_mask(16, rng.uniform(0.02, 0.4), rng);
    const auto g = random_mask(16, rng.uniform(0.02, 0.4), rng);
    CHECK(dice_score(p, g) == dice_oracle(p, g));
    CHECK(dice_score(p, g) == dice_score(g, p));
    const auto h = hd95(p, g);
    if (!h) continue;
    CHECK(std::abs(*h - hd95_oracle(p, g)) <= 1e-9);
    CHECK(*h == *hd95(g, p));
    CHECK(*h <= max_hausdorff_oracle(p, g) + 1e-12);
  }
}

TEST_CASE("removing a false positive never lowers dice") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_mask(16, 0.3, rng);
    const auto g = random_mask(16, 0.3, rng);
    std::vector<Index> fp;
    for (Index i = 0; i < p.size(); ++i) {
      if (p.data()[i] && !g.data()[i]) fp.push_back(i);
    }
    if (fp.empty()) continue;
    const double before = dice_score(p, g);
    p.data()[fp[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(fp.size()) - 1))]] = 0;
    CHECK(dice_score(p, g) >= before);
  }
}

TEST_CASE("paired t-test") {
  const auto r = paired_ttest({1, 2, 3}, {0, 0, 0});
  CHECK(r.t == doctest::Approx(2 * std::sqrt(3.0)).epsilon(1e-12));
  CHECK(r.dof == 2);
  CHECK(std::abs(r.p - 0.0742) <= 5e-4);
  CHECK(std::abs(r.p - t_pvalue_oracle(r.t, 2)) < 1e-9);

  const double d = 0.37;
  CHECK(paired_ttest({5 + d, 5 - d, 5 + d, 5 - d}, {5, 5, 5, 5}).p == 1.0);
  CHECK_THROWS_AS(static_cast<void>(paired_ttest({2, 3, 4}, {1, 2, 3})), DegenerateError);
  CHECK_THROWS_AS(static_cast<void>(paired_ttest({1, 2}, {1, 2})), DegenerateError);
  CHECK_THROWS_AS(static_cast<void>(paired_ttest({1}, {2})), RangeError);
  CHECK_THROWS_AS(static_cast<void>(paired_ttest({1, 2}, {2})), ShapeError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double t = rng.uniform(-6, 6);
    const double nu = static_cast<double>(rng.integer(1, 30));
    CHECK(std::abs(student_t_two_tailed(t, nu) - t_pvalue_oracle(t, nu)) < 1e-7);
  }
  CHECK(incomplete_beta(2, 3, 0.4) == doctest::Approx(0.5248).epsilon(1e-12));
}

TEST_CASE("aggregation, csv and ordering") {
  std::vector<ImageScore> scores{{"b", 80, 2.0}, {"a", 100, 0.0}, {"c", 60, std::nullopt}};
  const auto r = EvalResult::aggregate(scores);
  CHECK(r.per_image.front().id == "a");
  CHECK(r.mean_dice == doctest::Approx(80));
  CHECK(r.std_dice == doctest::Approx(std::sqrt(800.0 / 3)));
  CHECK(*r.mean_hd95 == doctest::Approx(1.0));
  CHECK(r.hd95_undefined == 1);
  std::reverse(scores.begin(), scores.end());
  const auto r2 = EvalResult::aggregate(scores);
  CHECK(r2.mean_dice == r.mean_dice);
  CHECK(r2.csv() == r.csv());
  CHECK(r.csv().rfind("id,dice,hd95\n", 0) == 0);
  CHECK(r.csv().find("c,60.000000,UNDEFINED") != std::string::npos);

  Mask gt(2, 4, 4);
  gt.image(0)(1, 1) = 1;
  gt.image(1)(2, 3) = 1;
  const auto perfect = score_masks({"x", "y"}, gt, gt);
  CHECK(perfect.mean_dice == 100.0);
  CHECK(*perfect.mean_hd95 == 0.0);
  CHECK(perfect.summary().rfind("Dice 100.00±0.00", 0) == 0);
  const auto empty = score_masks({"x", "y"}, Mask(2, 4, 4), gt);
  CHECK(empty.mean_dice == 0.0);
  CHECK_FALSE(empty.mean_hd95.has_value());
  CHECK(empty.hd95_undefined == 2);
}

TEST_CASE("evaluate on phantoms with a model and with prediction folders") {
  const auto root = std::filesystem::temp_directory_path() / "dcda_test_metrics_eval";
  std::filesystem::remove_all(root);
  data::PhantomSpec spec;
  spec.n_images = 4;
  spec.test_count = 2;
  spec.image_size = 32;
  const auto manifest = data::generate_phantoms(spec, root);

  for (const auto& s : manifest.evaluation_samples(DomainTag::Target)) {
    std::filesystem::create_directories(root / "pred");
    std::filesystem::copy_file(root / s.label_path, root / "pred" / (s.id + ".png"));
  }
  const auto perfect = evaluate_predictions(root / "pred", manifest, DomainTag::Target, 32);
  CHECK(perfect.mean_dice == 100.0);
  CHECK(*perfect.mean_hd95 == 0.0);

  Rng rng(1);
  ccl::SegModel<float> model(ccl::SegRole::TargetExpert, ccl::SegConfig{2, 2}, rng);
  Mask preds;
  const auto r = evaluate(model, manifest, DomainTag::Target, false, 32, data::Split::Test, 1, &preds);
  CHECK(r.per_image.size() == 2);
  CHECK(preds.n == 2);
  CHECK(r.mean_dice >= 0.0);
  CHECK(r.mean_dice <= 100.0);
  const auto r2 = evaluate(model, manifest, DomainTag::Target, false, 32, data::Split::Test, 8);
  CHECK(r2.csv() == r.csv());
  std::filesystem::remove_all(root);
}

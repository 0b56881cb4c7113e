#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dcda/data.hpp"

namespace dcda::data {

namespace {

struct Point {
  double x = 0, y = 0;
};

struct Segment {
  Point p0, p1, p2;
  double width = 1;
  [[nodiscard]] Point at(double t) const {
    const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
    return {a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y};
  }
};

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point border_point(double size, Rng& rng) {
  const double s = rng.uniform(0.1, 0.9) * size;
  switch (rng.integer(0, 3)) {
    case 0:
      return {s, 0};
    case 1:
      return {size, s};
    case 2:
      return {s, size};
    default:
      return {0, s};
  }
}

Segment bend(Point a, Point b, double width, const PhantomSpec& spec, Rng& rng) {
  const double len = distance(a, b);
  const Point mid{(a.x + b.x) / 2, (a.y + b.y) / 2};
  const Point normal{-(b.y - a.y) / std::max(len, 1e-9), (b.x - a.x) / std::max(len, 1e-9)};
  const double offset = spec.curvature * len * rng.uniform(-1, 1);
  return {a, {mid.x + offset * normal.x, mid.y + offset * normal.y}, b, width};
}

void rasterize(const Segment& seg, BinaryImage& mask) {
  const double r = std::max(seg.width / 2, 0.5);
  const double len = distance(seg.p0, seg.p1) + distance(seg.p1, seg.p2);
  const int steps = std::max(2, static_cast<int>(std::ceil(len * 4)));
  const Index h = mask.rows(), w = mask.cols();
  for (int k = 0; k <= steps; ++k) {
    const Point c = seg.at(static_cast<double>(k) / steps);
    const auto y0 = std::max<Index>(0, static_cast<Index>(std::floor(c.y - r)));
    const auto y1 = std::min<Index>(h - 1, static_cast<Index>(std::ceil(c.y + r)));
    const auto x0 = std::max<Index>(0, static_cast<Index>(std::floor(c.x - r)));
    const auto x1 = std::min<Index>(w - 1, static_cast<Index>(std::ceil(c.x + r)));
    for (Index i = y0; i <= y1; ++i) {
      for (Index j = x0; j <= x1; ++j) {
        const double dy = static_cast<double>(i) + 0.5 - c.y;
        const double dx = static_cast<double>(j) + 0.5 - c.x;
        if (dx * dx + dy * dy <= r * r) mask(i, j) = 1;
      }
    }
  }
}

Eigen::ArrayXXd clean_intensity(const BinaryImage& mask, Rng& rng) {
  const double background = rng.uniform(0.08, 0.2);
  const double vessel = rng.uniform(0.7, 0.92);
  const double tilt = rng.uniform(-0.05, 0.05);
  const auto h = static_cast<double>(mask.rows());
  Eigen::ArrayXXd out(mask.rows(), mask.cols());
  for (Index i = 0; i < mask.rows(); ++i) {
    for (Index j = 0; j < mask.cols(); ++j) {
      out(i, j) = mask(i, j) ? vessel : background + tilt * (static_cast<double>(i) / h - 0.5);
    }
  }
  return out;
}

GrayImage quantize(const Eigen::ArrayXXd& v) {
  GrayImage out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) {
      out(i, j) = static_cast<std::uint8_t>(std::lround(std::clamp(v(i, j), 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

void add_noise(Eigen::ArrayXXd& v, double sigma, Rng& rng) {
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) v(i, j) += sigma * rng.normal();
  }
}

Index reflect(Index i, Index n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

Eigen::ArrayXXd gaussian_blur(const Eigen::ArrayXXd& v, double sigma) {
  if (sigma <= 0) return v;
  const auto radius = static_cast<Index>(std::ceil(3 * sigma));
  Eigen::ArrayXd kernel(2 * radius + 1);
  for (Index k = -radius; k <= radius; ++k) {
    kernel(k + radius) = std::exp(-static_cast<double>(k * k) / (2 * sigma * sigma));
  }
  kernel /= kernel.sum();
  Eigen::ArrayXXd rows(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel(k + radius) * v(i, reflect(j + k, v.cols()));
      rows(i, j) = acc;
    }
  }
  Eigen::ArrayXXd out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel(k + radius) * rows(reflect(i + k, v.rows()), j);
      out(i, j) = acc;
    }
  }
  return out;
}

void write_mask(const fs::path& path, const BinaryImage& mask) {
  GrayImage out = mask.cast<std::uint8_t>() * std::uint8_t{255};
  write_png(path, out);
}

}  // namespace

BinaryImage draw_vessels(const PhantomSpec& spec, Rng& rng) {
  const auto size = static_cast<double>(spec.image_size);
  BinaryImage mask = BinaryImage::Zero(spec.image_size, spec.image_size);
  std::vector<Segment> segments;
  const Point start = border_point(size, rng);
  Point end = border_point(size, rng);
  while (distance(start, end) < size / 2) end = border_point(size, rng);
  segments.push_back(bend(start, end, rng.uniform(std::max(spec.min_width, (spec.min_width + spec.max_width) / 2), spec.max_width),
                          spec, rng));
  const auto branches = rng.integer(spec.min_branches, spec.max_branches);
  for (std::int64_t b = 1; b < branches; ++b) {
    const Segment& parent = segments[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(segments.size()) - 1))];
    const Point from = parent.at(rng.uniform(0.2, 0.8));
    Point to{rng.uniform(0, size), rng.uniform(0, size)};
    while (distance(from, to) < size / 4) to = {rng.uniform(0, size), rng.uniform(0, size)};
    segments.push_back(bend(from, to, rng.uniform(spec.min_width, parent.width), spec, rng));
  }
  for (const auto& s : segments) rasterize(s, mask);
  return mask;
}

GrayImage render_style_a(const BinaryImage& mask, const PhantomSpec& spec, Rng& rng) {
  Eigen::ArrayXXd v = clean_intensity(mask, rng);
  add_noise(v, spec.a_noise, rng);
  return quantize(v);
}

GrayImage render_style_b(const BinaryImage& mask, const PhantomSpec& spec, Rng& rng) {
  Eigen::ArrayXXd v = (1.0 - clean_intensity(mask, rng)).pow(spec.b_gamma);
  v = gaussian_blur(v, spec.b_blur);
  add_noise(v, spec.b_noise, rng);
  return quantize(v);
}

DatasetManifest generate_phantoms(const PhantomSpec& spec, const fs::path& out_dir) {
  if (spec.image_size < 8 || spec.n_images < 1) throw ConfigError("phantoms need image_size >= 8 and n_images >= 1");
  if (spec.min_branches < 1 || spec.max_branches < spec.min_branches) throw ConfigError("invalid branch range");
  if (spec.min_width <= 0 || spec.max_width < spec.min_width) throw ConfigError("invalid vessel width range");
  if (spec.min_positive < 0 || spec.max_positive > 1 || spec.max_positive <= spec.min_positive) {
    throw ConfigError("invalid positive-fraction range");
  }
  Rng root(spec.seed);
  const double pixels = static_cast<double>(spec.image_size * spec.image_size);
  for (DomainTag domain : {DomainTag::Source, DomainTag::Target}) {
    Rng rng = root.split();
    const fs::path dir = out_dir / std::string(to_string(domain));
    fs::remove_all(dir);
    const char* prefix = domain == DomainTag::Source ? "synth_s_" : "synth_t_";
    for (Index i = 0; i < spec.n_images; ++i) {
      BinaryImage mask;
      for (int attempt = 0;; ++attempt) {
        if (attempt == 1000) throw ConfigError("cannot draw vessels within the positive-fraction range");
        mask = draw_vessels(spec, rng);
        const double fraction = static_cast<double>(mask.cast<Index>().sum()) / pixels;
        if (fraction >= spec.min_positive && fraction <= spec.max_positive) break;
      }
      char id[32];
      std::snprintf(id, sizeof id, "%s%04ld", prefix, static_cast<long>(i));
      const GrayImage image = domain == DomainTag::Source ? render_style_a(mask, spec, rng) : render_style_b(mask, spec, rng);
      write_png(dir / "images" / (std::string(id) + ".png"), image);
      write_mask(dir / "labels" / (std::string(id) + ".png"), mask);
    }
  }
  DatasetManifest manifest = load_manifest(out_dir, spec.seed, spec.test_count);
  manifest.save(out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace dcda::data

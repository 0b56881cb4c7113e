#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dcda/data.hpp"

namespace dcda::data {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

std::string_view to_string(Fov fov) {
  switch (fov) {
    case Fov::M3:
      return "3M";
    case Fov::M6:
      return "6M";
    case Fov::Synth:
      return "SYNTH";
  }
  return "?";
}

Fov parse_fov(std::string_view text) {
  if (text == "3M") return Fov::M3;
  if (text == "6M") return Fov::M6;
  if (text == "SYNTH") return Fov::Synth;
  throw ConfigError("unknown field of view '" + std::string(text) + "'");
}

Fov infer_fov(const std::string& id, Index native_size) {
  auto starts = [&](const char* p) {
    return id.size() >= 2 && std::toupper(static_cast<unsigned char>(id[0])) == p[0] &&
           std::toupper(static_cast<unsigned char>(id[1])) == p[1];
  };
  if (starts("3M")) return Fov::M3;
  if (starts("6M")) return Fov::M6;
  if (native_size == 304) return Fov::M3;
  if (native_size == 400) return Fov::M6;
  return Fov::Synth;
}

// ---------------------------------------------------------------------------

DatasetManifest::DatasetManifest(fs::path root, std::vector<ManifestEntry> entries)
    : root_(std::move(root)), entries_(std::move(entries)) {
  std::set<std::pair<DomainTag, std::string>> seen;
  for (const auto& e : entries_) {
    if (!seen.insert({e.domain, e.id}).second) throw LayoutError("duplicate id '" + e.id + "' in manifest");
    if (e.domain == DomainTag::Source && e.split == Split::Train && !e.label_path) {
      throw LabelError("source training image '" + e.id + "' has no label");
    }
  }
}

Split DatasetManifest::split_of(const std::string& id, DomainTag domain) const {
  for (const auto& e : entries_) {
    if (e.id == id && e.domain == domain) return e.split;
  }
  throw ConfigError("unknown id '" + id + "'");
}

std::vector<LabeledSample> DatasetManifest::source_train() const {
  std::vector<LabeledSample> out;
  for (const auto& e : entries_) {
    if (e.domain == DomainTag::Source && e.split == Split::Train) out.push_back({e.id, e.image_path, *e.label_path});
  }
  return out;
}

std::vector<UnlabeledSample> DatasetManifest::target_train() const {
  std::vector<UnlabeledSample> out;
  for (const auto& e : entries_) {
    if (e.domain == DomainTag::Target && e.split == Split::Train) out.push_back({e.id, e.image_path});
  }
  return out;
}

std::vector<LabeledSample> DatasetManifest::evaluation_samples(DomainTag domain, Split split) const {
  std::vector<LabeledSample> out;
  for (const auto& e : entries_) {
    if (e.domain != domain || e.split != split) continue;
    if (!e.label_path) throw LabelError("evaluation image '" + e.id + "' has no label");
    out.push_back({e.id, e.image_path, *e.label_path});
  }
  return out;
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IOError("cannot write manifest " + path.string());
  out << "# id\tdomain\tsplit\tfov\timage\tlabel\n";
  for (const auto& e : entries_) {
    out << e.id << '\t' << dcda::to_string(e.domain) << '\t' << to_string(e.split) << '\t' << to_string(e.fov) << '\t'
        << e.image_path.generic_string() << '\t' << (e.label_path ? e.label_path->generic_string() : "-") << '\n';
  }
  if (!out) throw IOError("cannot write manifest " + path.string());
}

DatasetManifest DatasetManifest::load_table(const fs::path& path, const fs::path& root) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string id, domain, split, fov, image, label;
    if (!std::getline(row, id, '\t') || !std::getline(row, domain, '\t') || !std::getline(row, split, '\t') ||
        !std::getline(row, fov, '\t') || !std::getline(row, image, '\t') || !std::getline(row, label)) {
      throw LayoutError("malformed manifest row: " + line);
    }
    ManifestEntry e;
    e.id = id;
    e.domain = parse_domain(domain);
    if (split != "train" && split != "test") throw LayoutError("unknown split '" + split + "'");
    e.split = split == "train" ? Split::Train : Split::Test;
    e.fov = parse_fov(fov);
    e.image_path = image;
    if (label != "-") e.label_path = fs::path(label);
    entries.push_back(std::move(e));
  }
  return DatasetManifest(root, std::move(entries));
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.id != y.id || x.domain != y.domain || x.split != y.split || x.fov != y.fov || x.image_path != y.image_path ||
        x.label_path != y.label_path) {
      return false;
    }
  }
  return true;
}

namespace {

std::vector<std::string> png_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& item : fs::directory_iterator(dir)) {
    if (item.is_regular_file() && item.path().extension() == ".png") ids.push_back(item.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, std::uint64_t split_seed, Index test_count) {
  if (!fs::is_directory(root)) throw IOError("dataset root " + root.string() + " is not a directory");
  if (test_count < 0) throw ConfigError("test_count must be non-negative");
  Rng rng(split_seed);
  std::vector<ManifestEntry> entries;
  for (DomainTag domain : {DomainTag::Source, DomainTag::Target}) {
    Rng domain_rng = rng.split();
    const std::string name(dcda::to_string(domain));
    const fs::path images = fs::path(name) / "images";
    const fs::path labels = fs::path(name) / "labels";
    if (!fs::is_directory(root / images)) throw LayoutError("missing folder " + (root / images).string());
    const auto ids = png_ids(root / images);
    if (ids.empty()) throw LayoutError("no PNG images in " + (root / images).string());
    if (test_count >= static_cast<Index>(ids.size())) {
      throw ConfigError("test_count " + std::to_string(test_count) + " leaves no " + name + " training images");
    }
    const auto order = domain_rng.permutation(ids.size());
    std::vector<bool> is_test(ids.size(), false);
    for (Index i = 0; i < test_count; ++i) is_test[order[static_cast<std::size_t>(i)]] = true;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ManifestEntry e;
      e.id = ids[i];
      e.domain = domain;
      e.split = is_test[i] ? Split::Test : Split::Train;
      e.image_path = images / (ids[i] + ".png");
      const fs::path label = labels / (ids[i] + ".png");
      if (fs::is_regular_file(root / label)) {
        e.label_path = label;
      } else if (domain == DomainTag::Source) {
        throw LabelError("source image '" + ids[i] + "' has no label at " + (root / label).string());
      }
      e.fov = infer_fov(e.id, png_size(root / e.image_path).first);
      entries.push_back(std::move(e));
    }
  }
  return DatasetManifest(root, std::move(entries));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
RowMatrix<Scalar> preprocess_image(const GrayImage& raw, Index size, bool invert) {
  if (raw.size() == 0) throw IOError("empty image");
  if (size < 1) throw ConfigError("target size must be positive");
  const Index in_h = raw.rows();
  const Index in_w = raw.cols();
  RowMatrix<Scalar> out(size, size);
  auto source = [](Index i, Index in, Index out_size, Index& lo, Index& hi, double& frac) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out_size) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<Index>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  for (Index i = 0; i < size; ++i) {
    Index y0, y1;
    double fy;
    source(i, in_h, size, y0, y1, fy);
    for (Index j = 0; j < size; ++j) {
      Index x0, x1;
      double fx;
      source(j, in_w, size, x0, x1, fx);
      const double top = (1 - fx) * raw(y0, x0) + fx * raw(y0, x1);
      const double bottom = (1 - fx) * raw(y1, x0) + fx * raw(y1, x1);
      const double v = ((1 - fy) * top + fy * bottom) / 255.0;
      out(i, j) = static_cast<Scalar>(invert ? 1.0 - v : v);
    }
  }
  return out;
}

template <typename Scalar>
ImageBatch<Scalar> preprocess(const GrayImage& raw, Index size, bool invert, DomainTag domain, std::string id) {
  std::vector<std::string> ids;
  if (!id.empty()) ids.push_back(std::move(id));
  return make_batch<Scalar>({preprocess_image<Scalar>(raw, size, invert)}, domain, std::move(ids));
}

BinaryImage preprocess_mask(const GrayImage& raw, Index size) {
  if (raw.size() == 0) throw IOError("empty label image");
  BinaryImage out(size, size);
  for (Index i = 0; i < size; ++i) {
    const Index si = std::min(raw.rows() - 1, i * raw.rows() / size);
    for (Index j = 0; j < size; ++j) {
      const Index sj = std::min(raw.cols() - 1, j * raw.cols() / size);
      out(i, j) = raw(si, sj) > 127 ? 1 : 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
TrainingData<Scalar> load_training_data(const DatasetManifest& manifest, Index size, bool invert_target) {
  TrainingData<Scalar> data;
  data.source = load_labeled<Scalar>(manifest, manifest.source_train(), size, false);
  for (const auto& s : manifest.target_train()) {
    data.target.ids.push_back(s.id);
    data.target.images.push_back(preprocess_image<Scalar>(read_png(manifest.root() / s.image_path), size, invert_target));
  }
  return data;
}

template <typename Scalar>
LabeledSet<Scalar> load_labeled(const DatasetManifest& manifest, const std::vector<LabeledSample>& samples, Index size,
                                bool invert) {
  LabeledSet<Scalar> set;
  for (const auto& s : samples) {
    const fs::path label = manifest.root() / s.label_path;
    if (!fs::is_regular_file(label)) throw LabelError("missing label " + label.string());
    set.ids.push_back(s.id);
    set.images.push_back(preprocess_image<Scalar>(read_png(manifest.root() / s.image_path), size, invert));
    set.labels.push_back(preprocess_mask(read_png(label), size));
  }
  return set;
}

template <typename Scalar>
ImageBatch<Scalar> stack(const std::vector<RowMatrix<Scalar>>& images, const std::vector<std::size_t>& picks,
                         const std::vector<std::string>& ids, DomainTag domain) {
  std::vector<RowMatrix<Scalar>> planes;
  std::vector<std::string> names;
  for (std::size_t i : picks) {
    planes.push_back(images.at(i));
    names.push_back(ids.at(i));
  }
  return make_batch<Scalar>(planes, domain, std::move(names));
}

Mask stack_masks(const std::vector<BinaryImage>& labels, const std::vector<std::size_t>& picks) {
  if (picks.empty()) throw ShapeError("stack_masks: no labels");
  const BinaryImage& first = labels.at(picks.front());
  Mask m(static_cast<Index>(picks.size()), first.rows(), first.cols());
  for (std::size_t k = 0; k < picks.size(); ++k) m.image(static_cast<Index>(k)) = labels.at(picks[k]);
  return m;
}

template <typename Scalar>
UnpairedSampler<Scalar>::UnpairedSampler(const TrainingData<Scalar>& data, Index batch_size, Rng rng)
    : data_(&data), batch_size_(batch_size), rng_(std::move(rng)) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  reset();
}

template <typename Scalar>
void UnpairedSampler<Scalar>::reset() {
  source_order_ = rng_.permutation(data_->source.ids.size());
  target_order_ = rng_.permutation(data_->target.ids.size());
  cursor_ = 0;
}

template <typename Scalar>
Index UnpairedSampler<Scalar>::batches_per_epoch() const {
  return std::min(data_->source.size(), data_->target.size()) / batch_size_;
}

template <typename Scalar>
UnpairedBatch<Scalar> UnpairedSampler<Scalar>::next() {
  const auto bs = static_cast<std::size_t>(batch_size_);
  if (cursor_ + bs > source_order_.size() || cursor_ + bs > target_order_.size()) {
    throw ExhaustedError("unpaired sampler exhausted for this epoch");
  }
  const std::vector<std::size_t> xs(source_order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                    source_order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + bs));
  const std::vector<std::size_t> ys(target_order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                    target_order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + bs));
  cursor_ += bs;
  return {stack(data_->source.images, xs, data_->source.ids, DomainTag::Source), stack_masks(data_->source.labels, xs),
          stack(data_->target.images, ys, data_->target.ids, DomainTag::Target)};
}

template <typename Scalar>
LabeledSampler<Scalar>::LabeledSampler(const LabeledSet<Scalar>& data, DomainTag domain, Index batch_size, Rng rng)
    : data_(&data), domain_(domain), batch_size_(batch_size), rng_(std::move(rng)) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  reset();
}

template <typename Scalar>
void LabeledSampler<Scalar>::reset() {
  order_ = rng_.permutation(data_->ids.size());
  cursor_ = 0;
}

template <typename Scalar>
Index LabeledSampler<Scalar>::batches_per_epoch() const {
  return data_->size() / batch_size_;
}

template <typename Scalar>
std::pair<ImageBatch<Scalar>, Mask> LabeledSampler<Scalar>::next() {
  const auto bs = static_cast<std::size_t>(batch_size_);
  if (cursor_ + bs > order_.size()) throw ExhaustedError("sampler exhausted for this epoch");
  const std::vector<std::size_t> picks(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                       order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + bs));
  cursor_ += bs;
  return {stack(data_->images, picks, data_->ids, domain_), stack_masks(data_->labels, picks)};
}

#define DCDA_INSTANTIATE(S)                                                                                         \
  template RowMatrix<S> preprocess_image<S>(const GrayImage&, Index, bool);                                        \
  template ImageBatch<S> preprocess<S>(const GrayImage&, Index, bool, DomainTag, std::string);                     \
  template TrainingData<S> load_training_data<S>(const DatasetManifest&, Index, bool);                             \
  template LabeledSet<S> load_labeled<S>(const DatasetManifest&, const std::vector<LabeledSample>&, Index, bool);  \
  template ImageBatch<S> stack<S>(const std::vector<RowMatrix<S>>&, const std::vector<std::size_t>&,               \
                                  const std::vector<std::string>&, DomainTag);                                     \
  template class UnpairedSampler<S>;                                                                               \
  template class LabeledSampler<S>;

DCDA_INSTANTIATE(float)
DCDA_INSTANTIATE(double)
#undef DCDA_INSTANTIATE

}  // namespace dcda::data

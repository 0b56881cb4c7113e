#ifndef DCDA_DATA_HPP
#define DCDA_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcda/core_types.hpp"
#include "dcda/rng.hpp"

/// Image folders, preprocessing, splits, unpaired sampling and the synthetic
/// two-domain vessel phantoms.
namespace dcda::data {

namespace fs = std::filesystem;

/// 8-bit grayscale raster, row-major.
using GrayImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// PNG

/// Reads any PNG as 8-bit grayscale (palette, alpha and 16-bit are reduced).
GrayImage read_png(const fs::path& path);
void write_png(const fs::path& path, const GrayImage& image);
/// Width and height from the header only.
std::pair<Index, Index> png_size(const fs::path& path);

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Train, Test };
enum class Fov { M3, M6, Synth };

[[nodiscard]] std::string_view to_string(Split split);
[[nodiscard]] std::string_view to_string(Fov fov);
[[nodiscard]] Fov parse_fov(std::string_view text);
/// 3M/6M from an id prefix, else from the native scan size (304 or 400 px), else SYNTH.
[[nodiscard]] Fov infer_fov(const std::string& id, Index native_size);

struct ManifestEntry {
  std::string id;
  DomainTag domain = DomainTag::Source;
  Split split = Split::Train;
  Fov fov = Fov::Synth;
  fs::path image_path;                    ///< relative to the manifest root
  std::optional<fs::path> label_path;     ///< relative to the manifest root
};

/// A training sample that carries its label (source domain only).
struct LabeledSample {
  std::string id;
  fs::path image_path;
  fs::path label_path;
};

/// A training sample with no way to reach a label (target domain).
struct UnlabeledSample {
  std::string id;
  fs::path image_path;
};

class DatasetManifest {
 public:
  DatasetManifest(fs::path root, std::vector<ManifestEntry> entries);

  [[nodiscard]] const fs::path& root() const { return root_; }
  /// All rows, as persisted. Not meant for training code.
  [[nodiscard]] const std::vector<ManifestEntry>& entries() const { return entries_; }
  [[nodiscard]] Split split_of(const std::string& id, DomainTag domain) const;

  /// Training-facing accessors: labeled source, unlabeled target.
  [[nodiscard]] std::vector<LabeledSample> source_train() const;
  [[nodiscard]] std::vector<UnlabeledSample> target_train() const;

  /// Evaluation-only accessor; reaches labels of either domain. Training
  /// code uses it only for the target-trained upper bound.
  [[nodiscard]] std::vector<LabeledSample> evaluation_samples(DomainTag domain, Split split = Split::Test) const;

  /// Tab-separated table: id, domain, split, fov, image, label ("-" if none).
  void save(const fs::path& path) const;
  static DatasetManifest load_table(const fs::path& path, const fs::path& root);

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b);

 private:
  fs::path root_;
  std::vector<ManifestEntry> entries_;
};

/// Scans root/{source,target}/{images,labels}/<id>.png, shuffles each domain
/// with split_seed and marks test_count ids per domain as TEST.
DatasetManifest load_manifest(const fs::path& root, std::uint64_t split_seed, Index test_count);

// ---------------------------------------------------------------------------
// Preprocessing

/// Bilinear resize (pixel-centre aligned) to size x size, scale to [0, 1],
/// then v -> 1 - v if invert.
template <typename Scalar>
RowMatrix<Scalar> preprocess_image(const GrayImage& raw, Index size, bool invert);

/// Single-image batch from preprocess_image.
template <typename Scalar>
ImageBatch<Scalar> preprocess(const GrayImage& raw, Index size, bool invert, DomainTag domain, std::string id = "");

/// Nearest-neighbour resize of a 0/255 label image to a binary mask.
BinaryImage preprocess_mask(const GrayImage& raw, Index size);

// ---------------------------------------------------------------------------
// In-memory data and unpaired sampling

template <typename Scalar>
struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<RowMatrix<Scalar>> images;
  std::vector<BinaryImage> labels;
  [[nodiscard]] Index size() const { return static_cast<Index>(ids.size()); }
};

template <typename Scalar>
struct UnlabeledSet {
  std::vector<std::string> ids;
  std::vector<RowMatrix<Scalar>> images;
  [[nodiscard]] Index size() const { return static_cast<Index>(ids.size()); }
};

template <typename Scalar>
struct TrainingData {
  LabeledSet<Scalar> source;
  UnlabeledSet<Scalar> target;
};

template <typename Scalar>
TrainingData<Scalar> load_training_data(const DatasetManifest& manifest, Index size, bool invert_target);

/// Loads labeled samples (e.g. from evaluation_samples). invert applies to images only.
template <typename Scalar>
LabeledSet<Scalar> load_labeled(const DatasetManifest& manifest, const std::vector<LabeledSample>& samples, Index size,
                                bool invert);

template <typename Scalar>
ImageBatch<Scalar> stack(const std::vector<RowMatrix<Scalar>>& images, const std::vector<std::size_t>& picks,
                         const std::vector<std::string>& ids, DomainTag domain);
Mask stack_masks(const std::vector<BinaryImage>& labels, const std::vector<std::size_t>& picks);

template <typename Scalar>
struct UnpairedBatch {
  ImageBatch<Scalar> x;
  Mask gt_x;
  ImageBatch<Scalar> y;
};

/// Independent draws without replacement from each domain. An epoch is one
/// pass over the smaller training set; next() throws ExhaustedError when
/// either domain cannot fill another batch, and reset() starts a new epoch.
template <typename Scalar>
class UnpairedSampler {
 public:
  UnpairedSampler(const TrainingData<Scalar>& data, Index batch_size, Rng rng);

  UnpairedBatch<Scalar> next();
  void reset();
  [[nodiscard]] Index batches_per_epoch() const;
  [[nodiscard]] const Rng& rng() const { return rng_; }

 private:
  const TrainingData<Scalar>* data_;
  Index batch_size_;
  Rng rng_;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
  std::size_t cursor_ = 0;
};

/// Draws batches from one labeled set only (source pretraining, oracle).
template <typename Scalar>
class LabeledSampler {
 public:
  LabeledSampler(const LabeledSet<Scalar>& data, DomainTag domain, Index batch_size, Rng rng);
  std::pair<ImageBatch<Scalar>, Mask> next();
  void reset();
  [[nodiscard]] Index batches_per_epoch() const;
  [[nodiscard]] const Rng& rng() const { return rng_; }

 private:
  const LabeledSet<Scalar>* data_;
  DomainTag domain_;
  Index batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Phantoms

struct PhantomSpec {
  std::uint64_t seed = 7;
  Index image_size = 64;
  Index n_images = 10;  ///< per domain
  Index test_count = 0; ///< per domain, recorded in the returned manifest
  Index min_branches = 2;
  Index max_branches = 5;
  double min_width = 1.0;
  double max_width = 3.0;
  /// Control-point offset of each Bezier segment as a fraction of its length.
  double curvature = 0.35;
  double min_positive = 0.02;
  double max_positive = 0.30;
  // Style A (source): bright vessels on a dark background.
  double a_noise = 0.02;
  // Style B (target): inverted contrast, gamma, blur, stronger noise.
  double b_gamma = 1.5;
  double b_blur = 0.7;
  double b_noise = 0.05;
};

/// One vessel tree rasterised to a binary mask.
BinaryImage draw_vessels(const PhantomSpec& spec, Rng& rng);
/// Style-A or style-B rendering of a mask, as 8-bit grayscale.
GrayImage render_style_a(const BinaryImage& mask, const PhantomSpec& spec, Rng& rng);
GrayImage render_style_b(const BinaryImage& mask, const PhantomSpec& spec, Rng& rng);

/// Writes both domains under out_dir in the folder layout above, plus
/// manifest.tsv, and returns the manifest.
DatasetManifest generate_phantoms(const PhantomSpec& spec, const fs::path& out_dir);

}  // namespace dcda::data

#endif  // DCDA_DATA_HPP

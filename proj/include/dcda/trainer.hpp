#ifndef DCDA_TRAINER_HPP
#define DCDA_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcda/ccl.hpp"
#include "dcda/data.hpp"
#include "dcda/drst.hpp"

/// Three-stage schedule, run configuration, checkpoints and metrics logs.
namespace dcda::trainer {

namespace fs = std::filesystem;

/// Training runs in single precision; tests use double through the modules directly.
using Real = float;

struct OptimizerConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  [[nodiscard]] nn::AdamOptions adam() const { return {lr, beta1, beta2, 1e-8, weight_decay}; }
};

struct RunConfig {
  std::uint64_t seed = 7;
  Index image_size = 384;
  Index batch_size = 4;
  struct {
    int drst = 200;
    int source = 100;
    int joint = 800;
    int oracle = 100;
  } epochs;
  int tau = 0;
  OptimizerConfig optimizer;
  OptimizerConfig seg_optimizer{1e-4, 1e-4, 0.9, 0.999};
  std::string seg_schedule = "none";
  drst::DrstConfig drst;
  ccl::SegConfig seg;
  struct {
    bool no_fs = false;
    bool no_seg_after_tau = false;
    bool no_ccl = false;
  } ablation;
  struct {
    bool cotrain_drst = false;
    bool cache_translations = false;
    bool teacher_grad = false;
  } joint;
  bool invert_target = false;
  struct {
    std::string root = "data";
    std::uint64_t split_seed = 7;
    Index test_count = 50;
  } data;
  struct {
    std::string checkpoint_dir = "runs/checkpoints";
    std::string output_dir = "runs/output";
  } paths;

  /// Flat key=value text applied over base; '#' starts a comment, unknown keys are errors.
  static RunConfig parse(const std::string& text);
  static RunConfig parse(const std::string& text, RunConfig base);
  static RunConfig load(const fs::path& path);
  static RunConfig load(const fs::path& path, RunConfig base);
  /// Sets one dotted key from its textual value.
  void set(const std::string& key, const std::string& value);
  /// Every field, one per line, in a fixed order.
  [[nodiscard]] std::string serialize() const;
  /// Throws ConfigError on values no stage can run with.
  void validate() const;

  [[nodiscard]] ccl::JointTerms joint_terms() const {
    return {!ablation.no_fs, !ablation.no_seg_after_tau, !ablation.no_ccl, joint.teacher_grad};
  }
  [[nodiscard]] fs::path checkpoint(const std::string& stage) const { return fs::path(paths.checkpoint_dir) / (stage + ".ckpt"); }
  [[nodiscard]] fs::path metrics_log(const std::string& stage) const { return fs::path(paths.output_dir) / (stage + "_metrics.log"); }

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.serialize() == b.serialize(); }
};

/// Keys accepted by RunConfig::set, in serialization order.
const std::vector<std::string>& config_keys();

/// Reads DCDA_DEVICE; only the CPU backend exists, anything else is a ConfigError.
std::string compute_device();

// ---------------------------------------------------------------------------
// Checkpoints

/// Binary container of named float tensors and string metadata. Saving
/// writes a temporary file and renames it over the target.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor<Real>> tensors;

  void save(const fs::path& path) const;
  static Checkpoint load(const fs::path& path);

  void put(const std::string& prefix, const nn::NamedParameters<Real>& params);
  /// Copies stored values into params; StateError if any is missing or misshapen.
  void get(const std::string& prefix, const nn::NamedParameters<Real>& params) const;
  void put_optimizer(const std::string& prefix, const nn::Adam<Real>& optimizer);
  void get_optimizer(const std::string& prefix, nn::Adam<Real>& optimizer) const;
  [[nodiscard]] const std::string& require(const std::string& key) const;
};

// ---------------------------------------------------------------------------
// Models as the stages see them

/// F^S and F^T with deterministic initialisation from the run seed.
struct SegPair {
  std::shared_ptr<ccl::SegModel<Real>> source;
  std::shared_ptr<ccl::SegModel<Real>> target;
  static SegPair create(const RunConfig& config);
};

/// Loads the DRST networks from a checkpoint written by run_stage_drst.
drst::DrstBundle<Real> load_drst(const Checkpoint& checkpoint, const RunConfig& config);

/// Which model of a checkpoint to evaluate: "fs" or "ft". Empty picks F^S
/// for source-stage checkpoints and F^T otherwise.
std::shared_ptr<ccl::SegModel<Real>> load_seg_model(const Checkpoint& checkpoint, std::string which = "");

/// The configuration a checkpoint was written with.
RunConfig checkpoint_config(const Checkpoint& checkpoint);

/// Manifest of config.data: root/manifest.tsv when present, else a scan of
/// the folder layout split with data.split_seed and data.test_count.
data::DatasetManifest dataset_manifest(const RunConfig& config);

// ---------------------------------------------------------------------------
// Stages

struct StageResult {
  fs::path checkpoint;
  std::vector<LossReport> records;  ///< one per epoch run in this call
};

/// Observer called after every epoch with the epoch's averaged report.
using EpochHook = std::function<void(const LossReport&)>;

struct StageOptions {
  /// Continue from the stage's own checkpoint if it exists and is unfinished.
  bool resume = false;
  /// Stop after this epoch (inclusive) instead of the configured count.
  std::optional<int> stop_after;
  EpochHook on_epoch;
};

StageResult run_stage_drst(const RunConfig& config, const StageOptions& options = {});
StageResult run_stage_source(const RunConfig& config, const StageOptions& options = {});
/// fs_checkpoint may be empty only with ablation.no_fs.
StageResult run_stage_joint(const RunConfig& config, const fs::path& drst_checkpoint, const fs::path& fs_checkpoint,
                            const StageOptions& options = {});
/// Target-supervised upper bound; reads target training labels through the evaluation accessor.
StageResult run_stage_oracle(const RunConfig& config, const StageOptions& options = {});

/// Records of a metrics log file.
std::vector<LossReport> read_metrics_log(const fs::path& path);

/// Writes x_hat (target content in source style) and y_hat (source content in
/// target style) PNGs for every image of the split.
void translate_folder(const RunConfig& config, const fs::path& drst_checkpoint, const fs::path& out_dir,
                      data::Split split);

}  // namespace dcda::trainer

#endif  // DCDA_TRAINER_HPP

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "dcda/losses.hpp"
#include "dcda/trainer.hpp"

namespace dcda::trainer {

namespace {

enum StreamId : int { kDrstStream = 1, kSourceStream = 2, kJointStream = 3, kOracleStream = 4 };

Rng stage_rng(std::uint64_t seed, int stream) {
  Rng root(seed);
  Rng out = root.split();
  for (int i = 1; i < stream; ++i) out = root.split();
  return out;
}

bool received_gradient(const nn::Adam<Real>& optimizer) {
  for (const auto& [name, p] : optimizer.params()) {
    if (p.has_grad()) return true;
  }
  return false;
}

void require_finite(const Var<Real>& loss, std::initializer_list<const nn::Adam<Real>*> optimizers) {
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NonFiniteError("non-finite loss");
  for (const auto* opt : optimizers) {
    if (!opt->gradients_finite()) throw NonFiniteError("non-finite gradient");
  }
}

/// Running per-key mean of step reports.
struct EpochAverage {
  std::map<std::string, double> sums;
  int steps = 0;
  void add(const LossReport& r) {
    for (const auto& [k, v] : r.values) sums[k] += v;
    ++steps;
  }
  [[nodiscard]] LossReport finish(Stage stage, int epoch, int tau) const {
    LossReport out;
    for (const auto& [k, v] : sums) out[k] = steps ? v / steps : 0.0;
    out.epoch = epoch;
    out.phase = TrainPhase{stage, epoch, tau};
    return out;
  }
};

/// Per-stage metrics log; a resumed run keeps the records up to its start.
class MetricsLog {
 public:
  MetricsLog(fs::path path, int first_epoch) : path_(std::move(path)) {
    std::vector<LossReport> kept;
    if (first_epoch > 1 && fs::exists(path_)) {
      for (auto& r : read_metrics_log(path_)) {
        if (r.epoch < first_epoch) kept.push_back(std::move(r));
      }
    }
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc);
    for (const auto& r : kept) out << r.to_record() << '\n';
    if (!out) throw IOError("cannot write metrics log " + path_.string());
  }
  void append(const LossReport& r) const {
    std::ofstream out(path_, std::ios::app);
    out << r.to_record() << '\n';
    if (!out) throw IOError("cannot write metrics log " + path_.string());
  }

 private:
  fs::path path_;
};

/// Where a stage starts: epoch 1, or one past a resumable checkpoint.
struct Resume {
  int first_epoch = 1;
  std::optional<Checkpoint> checkpoint;
};

Resume find_resume(const RunConfig& config, const std::string& stage, const StageOptions& options) {
  Resume r;
  const fs::path path = config.checkpoint(stage);
  if (!options.resume || !fs::exists(path)) return r;
  Checkpoint ck = Checkpoint::load(path);
  if (ck.require("stage") != stage) throw StateError(path.string() + " is not a " + stage + " checkpoint");
  if (checkpoint_config(ck).serialize() != config.serialize()) {
    throw StateError("cannot resume " + path.string() + ": it was written with a different configuration");
  }
  r.first_epoch = std::stoi(ck.require("epoch")) + 1;
  r.checkpoint = std::move(ck);
  return r;
}

Checkpoint stage_checkpoint(const RunConfig& config, const std::string& stage, int epoch, int total, const Rng& rng) {
  Checkpoint ck;
  ck.meta["stage"] = stage;
  ck.meta["epoch"] = std::to_string(epoch);
  ck.meta["epochs"] = std::to_string(total);
  ck.meta["sampler_rng"] = rng.state();
  ck.meta["config"] = config.serialize();
  ck.meta["device"] = compute_device();
  return ck;
}

Rng resumed_rng(const Resume& resume, Rng fresh) {
  if (resume.checkpoint) fresh.restore(resume.checkpoint->require("sampler_rng"));
  return fresh;
}

int last_epoch(int configured, const StageOptions& options) {
  return options.stop_after ? std::min(configured, *options.stop_after) : configured;
}

void finish_epoch(const LossReport& report, const MetricsLog& log, const StageOptions& options, StageResult& result) {
  if (!report.all_finite()) throw NonFiniteError("non-finite epoch report at epoch " + std::to_string(report.epoch));
  log.append(report);
  result.records.push_back(report);
  if (options.on_epoch) options.on_epoch(report);
}

void require_batches(Index batches, const std::string& what) {
  if (batches < 1) throw ConfigError("batch_size exceeds the " + what + " training set");
}

data::GrayImage to_gray(const RowMatrix<Real>& v) {
  data::GrayImage out(v.rows(), v.cols());
  for (Index i = 0; i < v.size(); ++i) {
    out.data()[i] = static_cast<std::uint8_t>(std::lround(std::clamp(static_cast<double>(v.data()[i]), 0.0, 1.0) * 255.0));
  }
  return out;
}

/// Translations of every image against a fixed partner (i mod n of the other
/// domain): first holds y_hat per source image, second x_hat per target image.
std::pair<std::vector<RowMatrix<Real>>, std::vector<RowMatrix<Real>>> translate_all(
    const drst::DrstBundle<Real>& bundle, const std::vector<RowMatrix<Real>>& sources,
    const std::vector<RowMatrix<Real>>& targets) {
  NoGradGuard no_grad;
  std::vector<RowMatrix<Real>> y_hat, x_hat;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto r = drst::translate_step1(bundle, make_batch<Real>({sources[i]}, DomainTag::Source),
                                         make_batch<Real>({targets[i % targets.size()]}, DomainTag::Target));
    y_hat.emplace_back(r.y_hat->pixels.value().plane(0, 0));
  }
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const auto r = drst::translate_step1(bundle, make_batch<Real>({sources[j % sources.size()]}, DomainTag::Source),
                                         make_batch<Real>({targets[j]}, DomainTag::Target));
    x_hat.emplace_back(r.x_hat->pixels.value().plane(0, 0));
  }
  return {std::move(y_hat), std::move(x_hat)};
}

std::vector<std::size_t> indices_of(const std::vector<std::string>& ids,
                                    const std::unordered_map<std::string, std::size_t>& index) {
  std::vector<std::size_t> out;
  for (const auto& id : ids) out.push_back(index.at(id));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

SegPair SegPair::create(const RunConfig& config) {
  Rng root(config.seed ^ 0x5e65e65e65e65e6ULL);
  Rng fs_rng = root.split();
  Rng ft_rng = root.split();
  return {std::make_shared<ccl::SegModel<Real>>(ccl::SegRole::SourceExpert, config.seg, fs_rng),
          std::make_shared<ccl::SegModel<Real>>(ccl::SegRole::TargetExpert, config.seg, ft_rng)};
}

RunConfig checkpoint_config(const Checkpoint& checkpoint) { return RunConfig::parse(checkpoint.require("config")); }

drst::DrstBundle<Real> load_drst(const Checkpoint& checkpoint, const RunConfig& config) {
  auto bundle = drst::DrstBundle<Real>::create(config.drst, config.seed);
  checkpoint.get("drst.", bundle.named_parameters());
  return bundle;
}

std::shared_ptr<ccl::SegModel<Real>> load_seg_model(const Checkpoint& checkpoint, std::string which) {
  const RunConfig config = checkpoint_config(checkpoint);
  const std::string& stage = checkpoint.require("stage");
  if (which.empty()) which = stage == "source" ? "fs" : "ft";
  if (which != "fs" && which != "ft") throw ConfigError("model must be 'fs' or 'ft', got '" + which + "'");
  if (stage == "drst") throw StateError("a DRST checkpoint holds no segmentation model");
  if (stage == "oracle" && which == "fs") throw StateError("an oracle checkpoint holds only F^T");
  const SegPair pair = SegPair::create(config);
  auto model = which == "fs" ? pair.source : pair.target;
  checkpoint.get(which == "fs" ? "F^S." : "F^T.", model->named_parameters());
  return model;
}

data::DatasetManifest dataset_manifest(const RunConfig& config) {
  const fs::path root = config.data.root;
  if (fs::exists(root / "manifest.tsv")) return data::DatasetManifest::load_table(root / "manifest.tsv", root);
  return data::load_manifest(root, config.data.split_seed, config.data.test_count);
}

std::vector<LossReport> read_metrics_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read metrics log " + path.string());
  std::vector<LossReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(LossReport::from_record(line));
  }
  return out;
}

// ---------------------------------------------------------------------------

StageResult run_stage_drst(const RunConfig& config, const StageOptions& options) {
  config.validate();
  const auto manifest = dataset_manifest(config);
  const auto data = data::load_training_data<Real>(manifest, config.image_size, config.invert_target);
  auto bundle = drst::DrstBundle<Real>::create(config.drst, config.seed);
  auto optimizers = drst::DrstOptimizers<Real>::create(bundle, config.optimizer.adam());

  const Resume resume = find_resume(config, "drst", options);
  if (resume.checkpoint) {
    resume.checkpoint->get("drst.", bundle.named_parameters());
    resume.checkpoint->get_optimizer("opt.D.", optimizers.discriminators);
    resume.checkpoint->get_optimizer("opt.G.", optimizers.translators);
  }
  data::UnpairedSampler<Real> sampler(data, config.batch_size, resumed_rng(resume, stage_rng(config.seed, kDrstStream)));
  require_batches(sampler.batches_per_epoch(), "unpaired");

  StageResult result{config.checkpoint("drst"), {}};
  const MetricsLog log(config.metrics_log("drst"), resume.first_epoch);
  for (int epoch = resume.first_epoch; epoch <= last_epoch(config.epochs.drst, options); ++epoch) {
    if (epoch != resume.first_epoch) sampler.reset();
    EpochAverage avg;
    for (Index b = 0; b < sampler.batches_per_epoch(); ++b) {
      const auto batch = sampler.next();
      avg.add(drst::drst_train_step(bundle, batch.x, batch.y, optimizers));
    }
    finish_epoch(avg.finish(Stage::DrstPretrain, epoch, config.tau), log, options, result);
    Checkpoint ck = stage_checkpoint(config, "drst", epoch, config.epochs.drst, sampler.rng());
    ck.put("drst.", bundle.named_parameters());
    ck.put_optimizer("opt.D.", optimizers.discriminators);
    ck.put_optimizer("opt.G.", optimizers.translators);
    ck.save(result.checkpoint);
  }
  return result;
}

StageResult run_stage_source(const RunConfig& config, const StageOptions& options) {
  config.validate();
  const auto manifest = dataset_manifest(config);
  const auto source = data::load_labeled<Real>(manifest, manifest.source_train(), config.image_size, false);
  const SegPair pair = SegPair::create(config);
  nn::Adam<Real> optimizer(pair.source->named_parameters(), config.seg_optimizer.adam());

  const Resume resume = find_resume(config, "source", options);
  if (resume.checkpoint) {
    resume.checkpoint->get("F^S.", pair.source->named_parameters());
    resume.checkpoint->get("F^T.", pair.target->named_parameters());
    resume.checkpoint->get_optimizer("opt.F^S.", optimizer);
  }
  data::LabeledSampler<Real> sampler(source, DomainTag::Source, config.batch_size,
                                     resumed_rng(resume, stage_rng(config.seed, kSourceStream)));
  require_batches(sampler.batches_per_epoch(), "source");

  StageResult result{config.checkpoint("source"), {}};
  const MetricsLog log(config.metrics_log("source"), resume.first_epoch);
  for (int epoch = resume.first_epoch; epoch <= last_epoch(config.epochs.source, options); ++epoch) {
    if (epoch != resume.first_epoch) sampler.reset();
    EpochAverage avg;
    for (Index b = 0; b < sampler.batches_per_epoch(); ++b) {
      const auto [images, labels] = sampler.next();
      optimizer.zero_grad();
      const Var<Real> loss = seg_loss((*pair.source)(images), labels);
      backward(loss);
      require_finite(loss, {&optimizer});
      optimizer.step();
      LossReport r;
      r["seg_source"] = static_cast<double>(loss.item());
      r["joint"] = r["seg_source"];
      avg.add(r);
    }
    finish_epoch(avg.finish(Stage::SourcePretrain, epoch, config.tau), log, options, result);
    Checkpoint ck = stage_checkpoint(config, "source", epoch, config.epochs.source, sampler.rng());
    ck.put("F^S.", pair.source->named_parameters());
    ck.put("F^T.", pair.target->named_parameters());
    ck.put_optimizer("opt.F^S.", optimizer);
    ck.save(result.checkpoint);
  }
  return result;
}

StageResult run_stage_joint(const RunConfig& config, const fs::path& drst_checkpoint, const fs::path& fs_checkpoint,
                            const StageOptions& options) {
  config.validate();
  if (!config.ablation.no_fs && fs_checkpoint.empty()) throw ConfigError("the joint stage needs an F^S checkpoint");
  const auto manifest = dataset_manifest(config);
  const auto data = data::load_training_data<Real>(manifest, config.image_size, config.invert_target);

  const Checkpoint drst_ck = Checkpoint::load(drst_checkpoint);
  if (drst_ck.require("stage") != "drst") throw StateError(drst_checkpoint.string() + " is not a DRST checkpoint");
  auto bundle = load_drst(drst_ck, config);
  auto drst_optimizers = drst::DrstOptimizers<Real>::create(bundle, config.optimizer.adam());
  if (config.joint.cotrain_drst) {
    drst_ck.get_optimizer("opt.D.", drst_optimizers.discriminators);
    drst_ck.get_optimizer("opt.G.", drst_optimizers.translators);
  }

  const SegPair pair = SegPair::create(config);
  nn::Adam<Real> opt_s(pair.source->named_parameters(), config.seg_optimizer.adam());
  nn::Adam<Real> opt_t(pair.target->named_parameters(), config.seg_optimizer.adam());
  if (!fs_checkpoint.empty()) {
    const Checkpoint fs_ck = Checkpoint::load(fs_checkpoint);
    if (fs_ck.require("stage") != "source") throw StateError(fs_checkpoint.string() + " is not a source checkpoint");
    fs_ck.get("F^T.", pair.target->named_parameters());
    if (!config.ablation.no_fs) {
      fs_ck.get("F^S.", pair.source->named_parameters());
      fs_ck.get_optimizer("opt.F^S.", opt_s);
    }
  }

  const Resume resume = find_resume(config, "joint", options);
  if (resume.checkpoint) {
    resume.checkpoint->get("F^S.", pair.source->named_parameters());
    resume.checkpoint->get("F^T.", pair.target->named_parameters());
    resume.checkpoint->get_optimizer("opt.F^S.", opt_s);
    resume.checkpoint->get_optimizer("opt.F^T.", opt_t);
    if (config.joint.cotrain_drst) {
      resume.checkpoint->get("drst.", bundle.named_parameters());
      resume.checkpoint->get_optimizer("opt.D.", drst_optimizers.discriminators);
      resume.checkpoint->get_optimizer("opt.G.", drst_optimizers.translators);
    }
  }

  std::vector<RowMatrix<Real>> y_hat_cache, x_hat_cache;
  std::unordered_map<std::string, std::size_t> source_index, target_index;
  if (config.joint.cache_translations) {
    std::tie(y_hat_cache, x_hat_cache) = translate_all(bundle, data.source.images, data.target.images);
    for (std::size_t i = 0; i < data.source.ids.size(); ++i) source_index[data.source.ids[i]] = i;
    for (std::size_t j = 0; j < data.target.ids.size(); ++j) target_index[data.target.ids[j]] = j;
  }

  data::UnpairedSampler<Real> sampler(data, config.batch_size, resumed_rng(resume, stage_rng(config.seed, kJointStream)));
  require_batches(sampler.batches_per_epoch(), "unpaired");
  const ccl::JointTerms terms = config.joint_terms();

  StageResult result{fs::path(config.paths.checkpoint_dir) / "joint.ckpt", {}};
  const MetricsLog log(config.metrics_log("joint"), resume.first_epoch);
  for (int epoch = resume.first_epoch; epoch <= last_epoch(config.epochs.joint, options); ++epoch) {
    if (epoch != resume.first_epoch) sampler.reset();
    const TrainPhase phase{Stage::Joint, epoch, config.tau};
    EpochAverage avg;
    for (Index b = 0; b < sampler.batches_per_epoch(); ++b) {
      const auto batch = sampler.next();
      LossReport drst_report;
      if (config.joint.cotrain_drst) drst_report = drst::drst_train_step(bundle, batch.x, batch.y, drst_optimizers);

      ImageBatch<Real> x_hat, y_hat;
      if (config.joint.cache_translations) {
        const auto ys = indices_of(batch.y.ids, target_index);
        const auto xs = indices_of(batch.x.ids, source_index);
        x_hat = data::stack(x_hat_cache, ys, data.target.ids, DomainTag::Source);
        y_hat = data::stack(y_hat_cache, xs, data.source.ids, DomainTag::Target);
      } else {
        NoGradGuard no_grad;
        auto translated = drst::translate_step1(bundle, batch.x, batch.y);
        x_hat = std::move(*translated.x_hat);
        y_hat = std::move(*translated.y_hat);
      }

      const auto wiring = ccl::wire_batch(*pair.source, *pair.target, batch.x, batch.y, x_hat, y_hat, batch.gt_x,
                                          terms.teacher_grad);
      auto [total, report] = ccl::joint_loss(wiring, phase, terms);
      opt_s.zero_grad();
      opt_t.zero_grad();
      backward(total);
      require_finite(total, {&opt_s, &opt_t});
      if (received_gradient(opt_s)) opt_s.step();
      if (received_gradient(opt_t)) opt_t.step();
      if (config.joint.cotrain_drst) {
        for (const char* key : {"adv_x", "adv_y", "content_adv", "cyc"}) report[key] = drst_report.at(key);
      }
      avg.add(report);
    }
    finish_epoch(avg.finish(Stage::Joint, epoch, config.tau), log, options, result);
    Checkpoint ck = stage_checkpoint(config, "joint", epoch, config.epochs.joint, sampler.rng());
    ck.put("F^S.", pair.source->named_parameters());
    ck.put("F^T.", pair.target->named_parameters());
    ck.put_optimizer("opt.F^S.", opt_s);
    ck.put_optimizer("opt.F^T.", opt_t);
    if (config.joint.cotrain_drst) {
      ck.put("drst.", bundle.named_parameters());
      ck.put_optimizer("opt.D.", drst_optimizers.discriminators);
      ck.put_optimizer("opt.G.", drst_optimizers.translators);
    }
    ck.save(result.checkpoint);
  }
  return result;
}

StageResult run_stage_oracle(const RunConfig& config, const StageOptions& options) {
  config.validate();
  const auto manifest = dataset_manifest(config);
  const auto target = data::load_labeled<Real>(manifest, manifest.evaluation_samples(DomainTag::Target, data::Split::Train),
                                               config.image_size, config.invert_target);
  const auto model = SegPair::create(config).target;
  nn::Adam<Real> optimizer(model->named_parameters(), config.seg_optimizer.adam());

  const Resume resume = find_resume(config, "oracle", options);
  if (resume.checkpoint) {
    resume.checkpoint->get("F^T.", model->named_parameters());
    resume.checkpoint->get_optimizer("opt.F^T.", optimizer);
  }
  data::LabeledSampler<Real> sampler(target, DomainTag::Target, config.batch_size,
                                     resumed_rng(resume, stage_rng(config.seed, kOracleStream)));
  require_batches(sampler.batches_per_epoch(), "target");

  StageResult result{config.checkpoint("oracle"), {}};
  const MetricsLog log(config.metrics_log("oracle"), resume.first_epoch);
  for (int epoch = resume.first_epoch; epoch <= last_epoch(config.epochs.oracle, options); ++epoch) {
    if (epoch != resume.first_epoch) sampler.reset();
    EpochAverage avg;
    for (Index b = 0; b < sampler.batches_per_epoch(); ++b) {
      const auto [images, labels] = sampler.next();
      optimizer.zero_grad();
      const Var<Real> loss = seg_loss((*model)(images), labels);
      backward(loss);
      require_finite(loss, {&optimizer});
      optimizer.step();
      LossReport r;
      r["seg_target"] = static_cast<double>(loss.item());
      r["joint"] = r["seg_target"];
      avg.add(r);
    }
    finish_epoch(avg.finish(Stage::Oracle, epoch, config.tau), log, options, result);
    Checkpoint ck = stage_checkpoint(config, "oracle", epoch, config.epochs.oracle, sampler.rng());
    ck.put("F^T.", model->named_parameters());
    ck.put_optimizer("opt.F^T.", optimizer);
    ck.save(result.checkpoint);
  }
  return result;
}

void translate_folder(const RunConfig& config, const fs::path& drst_checkpoint, const fs::path& out_dir,
                      data::Split split) {
  const Checkpoint ck = Checkpoint::load(drst_checkpoint);
  if (ck.require("stage") != "drst") throw StateError(drst_checkpoint.string() + " is not a DRST checkpoint");
  const RunConfig trained = checkpoint_config(ck);
  const auto bundle = load_drst(ck, trained);
  const auto manifest = dataset_manifest(config);
  std::vector<std::string> source_ids, target_ids;
  std::vector<RowMatrix<Real>> sources, targets;
  for (const auto& e : manifest.entries()) {
    if (e.split != split) continue;
    const bool invert = e.domain == DomainTag::Target && trained.invert_target;
    auto image = data::preprocess_image<Real>(data::read_png(manifest.root() / e.image_path), trained.image_size, invert);
    (e.domain == DomainTag::Source ? source_ids : target_ids).push_back(e.id);
    (e.domain == DomainTag::Source ? sources : targets).push_back(std::move(image));
  }
  if (sources.empty() || targets.empty()) throw ConfigError("translate needs images of both domains in the split");
  const auto [y_hat, x_hat] = translate_all(bundle, sources, targets);
  for (std::size_t i = 0; i < y_hat.size(); ++i) data::write_png(out_dir / "y_hat" / (source_ids[i] + ".png"), to_gray(y_hat[i]));
  for (std::size_t j = 0; j < x_hat.size(); ++j) data::write_png(out_dir / "x_hat" / (target_ids[j] + ".png"), to_gray(x_hat[j]));
}

}  // namespace dcda::trainer

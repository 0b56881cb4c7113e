#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <ostream>

#include "dcda/metrics.hpp"
#include "dcda/trainer.hpp"

namespace dcda::cli {

namespace {

namespace fs = std::filesystem;
using trainer::Checkpoint;
using trainer::RunConfig;

/// Thrown while assembling the configuration; reported as a usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigOptions {
  std::vector<std::string> config_files;
  std::vector<std::string> overrides;
  std::string data_root;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_files, "key = value configuration file; repeatable, later files win")
        ->check(CLI::ExistingFile)
        ->take_all();
    cmd->add_option("--set", overrides, "override one key, e.g. --set epochs.drst=2")->type_name("KEY=VALUE");
    cmd->add_option("--data", data_root, "dataset root (data.root)");
  }

  [[nodiscard]] RunConfig build(RunConfig base = RunConfig{}) const {
    try {
      RunConfig config = std::move(base);
      for (const auto& file : config_files) config = RunConfig::load(file, std::move(config));
      if (!data_root.empty()) config.data.root = data_root;
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        config.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      config.validate();
      return config;
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
};

data::Split parse_split(const std::string& s) { return s == "train" ? data::Split::Train : data::Split::Test; }
DomainTag parse_domain(const std::string& s) { return s == "source" ? DomainTag::Source : DomainTag::Target; }

trainer::StageOptions stage_options(bool resume, std::ostream& out) {
  trainer::StageOptions options;
  options.resume = resume;
  options.on_epoch = [&out](const LossReport& r) { out << r.to_record() << std::endl; };
  return options;
}

void write_predictions(const fs::path& dir, const std::vector<data::LabeledSample>& samples, const Mask& masks) {
  fs::create_directories(dir);
  for (Index i = 0; i < masks.n; ++i) {
    const data::GrayImage png = (masks.image(i).template cast<int>() * 255).template cast<std::uint8_t>();
    data::write_png(dir / (samples[static_cast<std::size_t>(i)].id + ".png"), png);
  }
}

struct Scored {
  metrics::EvalResult result;
  std::string label;
};

/// Scores a prediction folder or a checkpoint, depending on what path names.
Scored score(const fs::path& path, const std::string& which, Index size, const RunConfig& config,
             const data::DatasetManifest& manifest, DomainTag domain, data::Split split, const std::string& save_dir) {
  if (fs::is_directory(path)) {
    return {metrics::evaluate_predictions(path, manifest, domain, size, split), path.string()};
  }
  const Checkpoint ck = Checkpoint::load(path);
  const auto model = trainer::load_seg_model(ck, which);
  const RunConfig trained = trainer::checkpoint_config(ck);
  const bool invert = domain == DomainTag::Target && trained.invert_target;
  Mask predictions;
  auto result = metrics::evaluate<trainer::Real>(*model, manifest, domain, invert, trained.image_size, split,
                                                 config.batch_size, &predictions);
  if (!save_dir.empty()) write_predictions(save_dir, manifest.evaluation_samples(domain, split), predictions);
  return {std::move(result), path.string() + " (" + model->symbol() + ")"};
}

void report_undefined(const metrics::EvalResult& r, std::ostream& out) {
  if (r.hd95_undefined > 0) out << "HD95 undefined for " << r.hd95_undefined << " image(s)\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised domain adaptation for vessel segmentation: style transfer plus collaborative consistency."};
  app.name("dcda");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // synth-data
  data::PhantomSpec phantom;
  phantom.n_images = 200;
  phantom.test_count = 50;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "write a two-domain vessel phantom dataset");
  synth->add_option("--out", synth_out, "output folder")->required();
  synth->add_option("--seed", phantom.seed, "generator seed")->capture_default_str();
  synth->add_option("--n", phantom.n_images, "images per domain")->capture_default_str();
  synth->add_option("--size", phantom.image_size, "image side in pixels")->capture_default_str();
  synth->add_option("--test-count", phantom.test_count, "test images per domain")->capture_default_str();

  // training stages
  struct TrainCommand {
    CLI::App* cmd = nullptr;
    ConfigOptions config;
    bool resume = false;
  };
  TrainCommand drst_cmd, source_cmd, joint_cmd, oracle_cmd;
  auto add_train = [&app](TrainCommand& t, const std::string& name, const std::string& help) {
    t.cmd = app.add_subcommand(name, help);
    t.config.attach(t.cmd);
    t.cmd->add_flag("--resume", t.resume, "continue from this stage's unfinished checkpoint");
  };
  add_train(drst_cmd, "train-drst", "train the style transfer networks alone");
  add_train(source_cmd, "pretrain-source", "train F^S on labeled source images");
  add_train(joint_cmd, "train-joint", "collaborative training of F^S and F^T on translated images");
  add_train(oracle_cmd, "train-oracle", "train F^T on labeled target images (upper bound)");
  std::string drst_ckpt, fs_ckpt;
  bool cotrain = false, cache = false;
  joint_cmd.cmd->add_option("--drst-ckpt", drst_ckpt, "DRST checkpoint (default <checkpoint_dir>/drst.ckpt)");
  joint_cmd.cmd->add_option("--fs-ckpt", fs_ckpt, "source-stage checkpoint (default <checkpoint_dir>/source.ckpt)");
  joint_cmd.cmd->add_flag("--cotrain-drst", cotrain, "keep updating DRST during the joint stage");
  joint_cmd.cmd->add_flag("--cache-translations", cache, "translate the training sets once instead of per batch");

  // translate
  ConfigOptions translate_config;
  std::string translate_ckpt, translate_out, translate_split = "test";
  auto* translate = app.add_subcommand("translate", "write x_hat and y_hat PNGs for a split of the dataset");
  translate_config.attach(translate);
  translate->add_option("--drst-ckpt", translate_ckpt, "DRST checkpoint (default <checkpoint_dir>/drst.ckpt)");
  translate->add_option("--out", translate_out, "output folder")->required();
  translate->add_option("--split", translate_split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  // evaluate
  ConfigOptions eval_config;
  std::string eval_ckpt, eval_model, eval_pred, eval_domain = "target", eval_split = "test", eval_csv, eval_compare,
                                                 eval_save;
  auto* evaluate = app.add_subcommand("evaluate", "Dice and HD95 mean±std of a model or a prediction folder");
  eval_config.attach(evaluate);
  auto* ck_opt = evaluate->add_option("--checkpoint", eval_ckpt, "stage checkpoint to predict with")->check(CLI::ExistingFile);
  evaluate->add_option("--model", eval_model, "fs or ft (default: fs for source checkpoints, else ft)")
      ->check(CLI::IsMember({"fs", "ft"}))
      ->needs(ck_opt);
  auto* pred_opt = evaluate->add_option("--predictions", eval_pred, "folder of <id>.png masks")->check(CLI::ExistingDirectory);
  ck_opt->excludes(pred_opt);
  evaluate->add_option("--domain", eval_domain, "source or target")->check(CLI::IsMember({"source", "target"}))->capture_default_str();
  evaluate->add_option("--split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  evaluate->add_option("--csv", eval_csv, "write per-image scores");
  evaluate->add_option("--compare", eval_compare, "second prediction folder or checkpoint for a paired t-test on Dice")
      ->check(CLI::ExistingPath);
  evaluate->add_option("--save-predictions", eval_save, "write predicted masks as <id>.png")->needs(ck_opt);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (evaluate->parsed() && eval_ckpt.empty() && eval_pred.empty()) {
      throw CLI::RequiredError("--checkpoint or --predictions");
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }

  try {
    if (synth->parsed()) {
      const auto manifest = data::generate_phantoms(phantom, synth_out);
      out << "wrote " << manifest.entries().size() << " images to " << synth_out << "\n";
      return kOk;
    }

    for (auto* t : {&drst_cmd, &source_cmd, &joint_cmd, &oracle_cmd}) {
      if (!t->cmd->parsed()) continue;
      RunConfig config = t->config.build();
      if (t == &joint_cmd) {
        try {
          if (cotrain) config.joint.cotrain_drst = true;
          if (cache) config.joint.cache_translations = true;
          config.validate();
        } catch (const Error& e) {
          throw UsageError(e.what());
        }
      }
      const auto options = stage_options(t->resume, out);
      trainer::StageResult result;
      if (t == &drst_cmd) result = trainer::run_stage_drst(config, options);
      if (t == &source_cmd) result = trainer::run_stage_source(config, options);
      if (t == &oracle_cmd) result = trainer::run_stage_oracle(config, options);
      if (t == &joint_cmd) {
        const fs::path d = drst_ckpt.empty() ? config.checkpoint("drst") : fs::path(drst_ckpt);
        const fs::path f = !fs_ckpt.empty() ? fs::path(fs_ckpt) : config.ablation.no_fs ? fs::path() : config.checkpoint("source");
        result = trainer::run_stage_joint(config, d, f, options);
      }
      out << "checkpoint " << result.checkpoint.string() << "\n";
      return kOk;
    }

    if (translate->parsed()) {
      const RunConfig config = translate_config.build();
      const fs::path ckpt = translate_ckpt.empty() ? config.checkpoint("drst") : fs::path(translate_ckpt);
      trainer::translate_folder(config, ckpt, translate_out, parse_split(translate_split));
      out << "wrote translations to " << translate_out << "\n";
      return kOk;
    }

    if (evaluate->parsed()) {
      const RunConfig config = eval_config.build();
      const auto manifest = trainer::dataset_manifest(config);
      const DomainTag domain = parse_domain(eval_domain);
      const data::Split split = parse_split(eval_split);
      const fs::path subject = eval_ckpt.empty() ? fs::path(eval_pred) : fs::path(eval_ckpt);
      // Prediction folders are scored at the resolution of the checkpoint they are compared with.
      Index size = config.image_size;
      for (const auto& p : {subject, fs::path(eval_compare)}) {
        if (!p.empty() && fs::is_regular_file(p)) size = trainer::checkpoint_config(Checkpoint::load(p)).image_size;
      }
      const Scored first = score(subject, eval_model, size, config, manifest, domain, split, eval_save);
      out << first.label << " on " << eval_domain << " " << eval_split << " (n=" << first.result.per_image.size()
          << "): " << first.result.summary() << "\n";
      report_undefined(first.result, out);
      if (!eval_csv.empty()) first.result.write_csv(eval_csv);
      if (!eval_compare.empty()) {
        const Scored second = score(eval_compare, "", size, config, manifest, domain, split, "");
        out << second.label << ": " << second.result.summary() << "\n";
        report_undefined(second.result, out);
        try {
          const auto t = metrics::paired_ttest(first.result.dice_values(), second.result.dice_values());
          char line[128];
          std::snprintf(line, sizeof line, "paired t-test on Dice: t=%.4f dof=%.0f p=%.4g\n", t.t, t.dof, t.p);
          out << line;
        } catch (const DegenerateError& e) {
          out << "paired t-test on Dice: undefined (" << e.what() << ")\n";
        }
      }
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace dcda::cli

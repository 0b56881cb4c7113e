#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "dcda/metrics.hpp"
#include "dcda/trainer.hpp"

using namespace dcda;
using namespace dcda::trainer;

namespace {

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("dcda_test_trainer_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
};

/// 32 px phantoms with small networks; a few seconds per stage.
RunConfig small_run(const fs::path& root, Index n_images = 12) {
  data::PhantomSpec spec;
  spec.image_size = 32;
  spec.n_images = n_images;
  spec.test_count = 4;
  if (!fs::exists(root / "data" / "manifest.tsv")) data::generate_phantoms(spec, root / "data");
  RunConfig c;
  c.image_size = 32;
  c.batch_size = 4;
  c.epochs.drst = 2;
  c.epochs.source = 2;
  c.epochs.joint = 2;
  c.epochs.oracle = 2;
  c.drst.base_channels = 4;
  c.drst.downsample_blocks = 2;
  c.drst.style_dim = 4;
  c.drst.residual_blocks = 1;
  c.drst.disc_channels = 4;
  c.drst.disc_layers = 3;
  c.seg.depth = 2;
  c.seg.base_channels = 4;
  c.data.root = (root / "data").string();
  c.paths.checkpoint_dir = (root / "ckpt").string();
  c.paths.output_dir = (root / "out").string();
  return c;
}

std::map<std::string, Tensor<Real>> snapshot(const nn::NamedParameters<Real>& params) {
  std::map<std::string, Tensor<Real>> out;
  for (const auto& [name, p] : params) out[name] = p.value();
  return out;
}

bool identical(const std::map<std::string, Tensor<Real>>& a, const std::map<std::string, Tensor<Real>>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const auto& u = b.at(name);
    if (t.shape() != u.shape() || (t.array() != u.array()).any()) return false;
  }
  return true;
}

std::map<std::string, Tensor<Real>> model_in(const fs::path& ckpt, const std::string& which) {
  return snapshot(load_seg_model(Checkpoint::load(ckpt), which)->named_parameters());
}

}  // namespace

TEST_CASE("config: defaults, round trip and errors") {
  const RunConfig defaults;
  CHECK(defaults.epochs.drst == 200);
  CHECK(defaults.epochs.source == 100);
  CHECK(defaults.epochs.joint == 800);
  CHECK(defaults.optimizer.lr == 1e-4);
  CHECK(defaults.optimizer.weight_decay == 1e-4);
  CHECK(defaults.seg_optimizer.lr == 1e-4);
  CHECK(defaults.tau == 0);
  CHECK_FALSE(defaults.ablation.no_fs);
  CHECK_FALSE(defaults.joint.cotrain_drst);

  CHECK(RunConfig::parse(defaults.serialize()) == defaults);
  const std::string messy =
      "# a comment\n\n  tau=5   # trailing\nablation.no_ccl = yes\noptimizer.lr = 2e-4\ndata.root = /tmp/x y\nseed = 11\n";
  const RunConfig parsed = RunConfig::parse(messy);
  CHECK(parsed.tau == 5);
  CHECK(parsed.ablation.no_ccl);
  CHECK(parsed.optimizer.lr == 2e-4);
  CHECK(parsed.data.root == "/tmp/x y");
  CHECK(RunConfig::parse(parsed.serialize()).serialize() == parsed.serialize());
  CHECK(parsed.serialize().find("optimizer.lr = 2e-04\n") != std::string::npos);
  CHECK(config_keys().size() == 40);

  CHECK_THROWS_AS(RunConfig::parse("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("tau = five\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("ablation.no_fs = maybe\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("just a line\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.txt"), IOError);

  RunConfig bad;
  bad.image_size = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.joint.cotrain_drst = bad.joint.cache_translations = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.seg_schedule = "cosine";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("ablation rows are reachable by config") {
  auto terms = [](const std::string& text) { return RunConfig::parse(text).joint_terms(); };
  const auto full = terms("");
  CHECK((full.source_expert && full.seg_after_tau && full.consistency));
  CHECK_FALSE(terms("ablation.no_fs = true").source_expert);
  CHECK_FALSE(terms("ablation.no_seg_after_tau = true").seg_after_tau);
  CHECK_FALSE(terms("ablation.no_ccl = true").consistency);
}

TEST_CASE("device selection") {
  ::setenv("DCDA_DEVICE", "cuda", 1);
  CHECK_THROWS_AS(static_cast<void>(compute_device()), ConfigError);
  ::setenv("DCDA_DEVICE", "cpu", 1);
  CHECK(compute_device() == "cpu");
  ::unsetenv("DCDA_DEVICE");
  CHECK(compute_device() == "cpu");
}

TEST_CASE("checkpoint container") {
  Workspace ws("ckpt");
  Checkpoint ck;
  ck.meta["stage"] = "x";
  Tensor<Real> t(Shape{2, 3}, 1.5f);
  t[4] = -2.25f;
  ck.tensors["a.weight"] = t;
  ck.save(ws.root / "sub" / "c.ckpt");
  const auto back = Checkpoint::load(ws.root / "sub" / "c.ckpt");
  CHECK(back.meta == ck.meta);
  CHECK(back.tensors.at("a.weight").shape() == t.shape());
  CHECK((back.tensors.at("a.weight").array() == t.array()).all());
  CHECK_THROWS_AS(static_cast<void>(back.require("epoch")), StateError);

  Var<Real> p(Tensor<Real>(Shape{3, 2}), true);
  CHECK_THROWS_AS(back.get("", {{"a.weight", p}}), StateError);
  CHECK_THROWS_AS(back.get("", {{"missing", p}}), StateError);

  { std::ofstream(ws.root / "junk.ckpt") << "not a checkpoint"; }
  CHECK_THROWS_AS(static_cast<void>(Checkpoint::load(ws.root / "junk.ckpt")), StateError);
  CHECK_THROWS_AS(static_cast<void>(Checkpoint::load(ws.root / "none.ckpt")), IOError);
}

TEST_CASE("drst stage: records, checkpoint, determinism, resume") {
  Workspace ws("drst");
  RunConfig c = small_run(ws.root);
  const auto first = run_stage_drst(c);
  CHECK(first.records.size() == 2);
  CHECK(fs::exists(first.checkpoint));
  CHECK(read_metrics_log(c.metrics_log("drst")) == first.records);
  CHECK(first.records[0].epoch == 1);

  const auto again = run_stage_drst(c);
  CHECK(again.records[0] == first.records[0]);
  CHECK(again.records[1] == first.records[1]);

  StageOptions partial;
  partial.stop_after = 1;
  CHECK(run_stage_drst(c, partial).records.size() == 1);
  StageOptions resume;
  resume.resume = true;
  const auto resumed = run_stage_drst(c, resume);
  REQUIRE(resumed.records.size() == 1);
  CHECK(resumed.records[0] == first.records[1]);
  CHECK(read_metrics_log(c.metrics_log("drst")) == first.records);

  RunConfig other = c;
  other.seed = 8;
  CHECK_THROWS_AS(run_stage_drst(other, resume), StateError);
}

TEST_CASE("source stage: F^T untouched, F^S improves, labels required") {
  Workspace ws("source");
  RunConfig c = small_run(ws.root);
  c.epochs.source = 6;
  const auto init = SegPair::create(c);
  const auto manifest = dataset_manifest(c);
  const double before =
      metrics::evaluate(*init.source, manifest, DomainTag::Source, false, c.image_size, data::Split::Train).mean_dice;
  const auto result = run_stage_source(c);
  CHECK(result.records.size() == 6);
  CHECK(identical(model_in(result.checkpoint, "ft"), snapshot(init.target->named_parameters())));
  CHECK_FALSE(identical(model_in(result.checkpoint, "fs"), snapshot(init.source->named_parameters())));
  const auto trained = load_seg_model(Checkpoint::load(result.checkpoint));
  CHECK(trained->role() == ccl::SegRole::SourceExpert);
  const double after =
      metrics::evaluate(*trained, manifest, DomainTag::Source, false, c.image_size, data::Split::Train).mean_dice;
  MESSAGE("source-train dice before " << before << " after " << after);
  CHECK(after > before);

  fs::remove(fs::path(c.data.root) / "manifest.tsv");
  c.data.test_count = 4;
  const auto labels = fs::path(c.data.root) / "source" / "labels";
  fs::remove(fs::directory_iterator(labels)->path());
  CHECK_THROWS_AS(run_stage_source(c), LabelError);
}

TEST_CASE("joint stage: tau schedule, no-op ablation, resume, variants") {
  Workspace ws("joint");
  RunConfig c = small_run(ws.root);
  c.epochs.drst = 1;
  c.epochs.source = 1;
  const auto drst_ck = run_stage_drst(c).checkpoint;
  const auto fs_ck = run_stage_source(c).checkpoint;
  const auto ft_init = model_in(fs_ck, "ft");
  const auto fs_init = model_in(fs_ck, "fs");

  SUBCASE("F^T frozen through epoch tau, trained after") {
    c.tau = 2;
    c.epochs.joint = 3;
    for (int stop : {1, 2, 3}) {
      StageOptions opts;
      opts.stop_after = stop;
      run_stage_joint(c, drst_ck, fs_ck, opts);
      CHECK(identical(model_in(c.checkpoint("joint"), "ft"), ft_init) == (stop <= c.tau));
      CHECK_FALSE(identical(model_in(c.checkpoint("joint"), "fs"), fs_init));
    }
  }

  SUBCASE("no ccl and no seg after tau with tau 0 is a no-op") {
    c.ablation.no_ccl = true;
    c.ablation.no_seg_after_tau = true;
    const auto r = run_stage_joint(c, drst_ck, fs_ck);
    for (const auto& rec : r.records) CHECK(rec.at("joint") == 0.0);
    CHECK(identical(model_in(r.checkpoint, "ft"), ft_init));
    CHECK(identical(model_in(r.checkpoint, "fs"), fs_init));
  }

  SUBCASE("resume reproduces the uninterrupted record") {
    const auto full = run_stage_joint(c, drst_ck, fs_ck);
    StageOptions partial;
    partial.stop_after = 1;
    run_stage_joint(c, drst_ck, fs_ck, partial);
    StageOptions resume;
    resume.resume = true;
    const auto rest = run_stage_joint(c, drst_ck, fs_ck, resume);
    REQUIRE(rest.records.size() == 1);
    CHECK(rest.records[0] == full.records[1]);
    const auto resumed_ft = model_in(rest.checkpoint, "ft");
    run_stage_joint(c, drst_ck, fs_ck);
    CHECK(identical(resumed_ft, model_in(c.checkpoint("joint"), "ft")));
  }

  SUBCASE("without F^S only the target segmentation term is used") {
    c.ablation.no_fs = true;
    const auto r = run_stage_joint(c, drst_ck, "");
    for (const auto& rec : r.records) {
      CHECK(rec.at("ccl") == 0.0);
      CHECK(rec.at("seg_source") == 0.0);
      CHECK(rec.at("seg_target") > 0.0);
    }
    c.ablation.no_fs = false;
    CHECK_THROWS_AS(run_stage_joint(c, drst_ck, ""), ConfigError);
  }

  SUBCASE("cached translations and co-training run") {
    c.joint.cache_translations = true;
    CHECK(run_stage_joint(c, drst_ck, fs_ck).records.size() == 2);
    c.joint.cache_translations = false;
    c.joint.cotrain_drst = true;
    const auto r = run_stage_joint(c, drst_ck, fs_ck);
    CHECK(r.records.back().at("cyc") > 0.0);
    CHECK_THROWS_AS(run_stage_joint(c, fs_ck, fs_ck), StateError);
  }
}

TEST_CASE("oracle stage and translation dump") {
  Workspace ws("oracle");
  RunConfig c = small_run(ws.root);
  const auto r = run_stage_oracle(c);
  CHECK(r.records.size() == 2);
  CHECK(r.records[0].phase.stage == Stage::Oracle);
  CHECK(load_seg_model(Checkpoint::load(r.checkpoint))->role() == ccl::SegRole::TargetExpert);
  CHECK_THROWS_AS(static_cast<void>(load_seg_model(Checkpoint::load(r.checkpoint), "fs")), StateError);

  c.epochs.drst = 1;
  const auto drst_ck = run_stage_drst(c).checkpoint;
  translate_folder(c, drst_ck, ws.root / "tr", data::Split::Test);
  CHECK(std::distance(fs::directory_iterator(ws.root / "tr" / "x_hat"), fs::directory_iterator{}) == 4);
  CHECK(std::distance(fs::directory_iterator(ws.root / "tr" / "y_hat"), fs::directory_iterator{}) == 4);
  CHECK(data::read_png(fs::directory_iterator(ws.root / "tr" / "x_hat")->path()).rows() == 32);
}

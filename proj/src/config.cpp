#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dcda/trainer.hpp"

namespace dcda::trainer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), value);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field number(const std::string& key, T& ref) {
  return {key,
          [&ref] {
            if constexpr (std::is_floating_point_v<T>) {
              return format(ref);
            } else {
              return std::to_string(ref);
            }
          },
          [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
}

Field flag(const std::string& key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}

Field text(const std::string& key, std::string& ref) {
  return {key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

std::vector<Field> fields(RunConfig& c) {
  return {
      number("seed", c.seed),
      number("image_size", c.image_size),
      number("batch_size", c.batch_size),
      number("epochs.drst", c.epochs.drst),
      number("epochs.source", c.epochs.source),
      number("epochs.joint", c.epochs.joint),
      number("epochs.oracle", c.epochs.oracle),
      number("tau", c.tau),
      number("optimizer.lr", c.optimizer.lr),
      number("optimizer.weight_decay", c.optimizer.weight_decay),
      number("optimizer.beta1", c.optimizer.beta1),
      number("optimizer.beta2", c.optimizer.beta2),
      number("seg_optimizer.lr", c.seg_optimizer.lr),
      number("seg_optimizer.weight_decay", c.seg_optimizer.weight_decay),
      number("seg_optimizer.beta1", c.seg_optimizer.beta1),
      number("seg_optimizer.beta2", c.seg_optimizer.beta2),
      text("seg_optimizer.schedule", c.seg_schedule),
      number("loss.lambda_adv", c.drst.lambda_adv),
      number("loss.lambda_cyc", c.drst.lambda_cyc),
      number("loss.lambda_content", c.drst.lambda_content),
      number("drst.base_channels", c.drst.base_channels),
      number("drst.downsample_blocks", c.drst.downsample_blocks),
      number("drst.style_dim", c.drst.style_dim),
      number("drst.residual_blocks", c.drst.residual_blocks),
      number("drst.disc_channels", c.drst.disc_channels),
      number("drst.disc_layers", c.drst.disc_layers),
      number("seg.depth", c.seg.depth),
      number("seg.base_channels", c.seg.base_channels),
      flag("ablation.no_fs", c.ablation.no_fs),
      flag("ablation.no_seg_after_tau", c.ablation.no_seg_after_tau),
      flag("ablation.no_ccl", c.ablation.no_ccl),
      flag("joint.cotrain_drst", c.joint.cotrain_drst),
      flag("joint.cache_translations", c.joint.cache_translations),
      flag("joint.teacher_grad", c.joint.teacher_grad),
      flag("invert_target", c.invert_target),
      text("data.root", c.data.root),
      number("data.split_seed", c.data.split_seed),
      number("data.test_count", c.data.test_count),
      text("paths.checkpoint_dir", c.paths.checkpoint_dir),
      text("paths.output_dir", c.paths.output_dir),
  };
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    RunConfig c;
    std::vector<std::string> out;
    for (const auto& f : fields(c)) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& f : fields(*this)) {
    if (f.key == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text, RunConfig base) {
  RunConfig config = std::move(base);
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig RunConfig::parse(const std::string& text) { return parse(text, RunConfig{}); }

RunConfig RunConfig::load(const fs::path& path) { return load(path, RunConfig{}); }

RunConfig RunConfig::load(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), std::move(base));
}

std::string RunConfig::serialize() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(image_size >= 8, "image_size must be at least 8");
  require(batch_size >= 1, "batch_size must be positive");
  require(epochs.drst >= 0 && epochs.source >= 0 && epochs.joint >= 0 && epochs.oracle >= 0, "epochs must be >= 0");
  require(tau >= 0, "tau must be >= 0");
  require(optimizer.lr > 0 && seg_optimizer.lr > 0, "learning rates must be positive");
  require(seg_schedule == "none", "seg_optimizer.schedule supports only 'none'");
  require(seg.depth >= 1 && seg.base_channels >= 1, "seg.depth and seg.base_channels must be >= 1");
  require(image_size % (Index{1} << seg.depth) == 0, "image_size must be divisible by 2^seg.depth");
  require(drst.downsample_blocks >= 1 && image_size % drst.downsample_factor() == 0,
          "image_size must be divisible by 2^drst.downsample_blocks");
  require(drst.base_channels >= 1 && drst.style_dim >= 1 && drst.disc_channels >= 1 && drst.disc_layers >= 1,
          "DRST widths must be >= 1");
  require((image_size >> drst.disc_layers) >= 4, "image_size too small for drst.disc_layers");
  require(!(joint.cotrain_drst && joint.cache_translations), "joint.cache_translations cannot be combined with co-training");
  require(data.test_count >= 0, "data.test_count must be >= 0");
}

std::string compute_device() {
  const char* env = std::getenv("DCDA_DEVICE");
  const std::string device = env && *env ? env : "cpu";
  if (device != "cpu") throw ConfigError("DCDA_DEVICE='" + device + "' is not available; only 'cpu' is supported");
  return device;
}

}  // namespace dcda::trainer

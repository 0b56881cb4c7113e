#include "dcda/core_types.hpp"

#include <iomanip>
#include <sstream>

namespace dcda {

namespace {
#ifdef DCDA_CHECK_INVARIANTS
bool probmap_checks = true;
#else
bool probmap_checks = false;
#endif
}  // namespace

void set_probmap_checks(bool enabled) { probmap_checks = enabled; }
bool probmap_checks_enabled() { return probmap_checks; }

std::string_view to_string(DomainTag tag) { return tag == DomainTag::Source ? "source" : "target"; }

DomainTag parse_domain(std::string_view text) {
  if (text == "source") return DomainTag::Source;
  if (text == "target") return DomainTag::Target;
  throw ConfigError("unknown domain '" + std::string(text) + "'");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::DrstPretrain:
      return "drst";
    case Stage::SourcePretrain:
      return "source";
    case Stage::Joint:
      return "joint";
    case Stage::Oracle:
      return "oracle";
  }
  return "?";
}

LossReport::LossReport() {
  for (const char* key : kKeys) values[key] = 0.0;
}

bool LossReport::all_finite() const {
  for (const auto& [key, v] : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string LossReport::to_record() const {
  std::ostringstream out;
  out << "stage=" << to_string(phase.stage) << " epoch=" << epoch << " tau=" << phase.tau;
  out << std::setprecision(17);
  for (const auto& [key, v] : values) out << ' ' << key << '=' << v;
  return out.str();
}

LossReport LossReport::from_record(const std::string& line) {
  LossReport report;
  std::istringstream in(line);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed loss record field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "stage") {
      if (value == "drst") report.phase.stage = Stage::DrstPretrain;
      else if (value == "source") report.phase.stage = Stage::SourcePretrain;
      else if (value == "joint") report.phase.stage = Stage::Joint;
      else if (value == "oracle") report.phase.stage = Stage::Oracle;
      else throw ConfigError("unknown stage '" + value + "'");
    } else if (key == "epoch") {
      report.epoch = std::stoi(value);
      report.phase.epoch = report.epoch;
    } else if (key == "tau") {
      report.phase.tau = std::stoi(value);
    } else {
      report.values[key] = std::stod(value);
    }
  }
  return report;
}

}  // namespace dcda

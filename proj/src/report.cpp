#include "pufmoe/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "pufmoe/version.hpp"

namespace pufmoe {

using nlohmann::json;

double AttackReport::accuracy() const {
  if (task_accuracy.empty()) return 0.0;
  double sum = 0.0;
  for (const double a : task_accuracy) sum += a;
  return sum / static_cast<double>(task_accuracy.size());
}

namespace {

json report_to_json(const AttackReport& r, bool with_volatile) {
  json j;
  j["attack"] = r.attack;
  j["config"] = r.config;
  if (!r.label.empty()) j["label"] = r.label;
  j["seed"] = r.seed;
  j["train_crps"] = r.train_crps;
  j["test_crps"] = r.test_crps;
  j["task_accuracy"] = r.task_accuracy;
  j["accuracy"] = r.accuracy();
  j["epochs"] = r.epochs;
  if (with_volatile) j["wall_seconds"] = r.wall_seconds;
  if (!r.mean_gate_weight.empty()) j["mean_gate_weight"] = r.mean_gate_weight;
  return j;
}

}  // namespace

std::string AttackReport::to_record() const {
  return report_to_json(*this, true).dump();
}

std::string AttackReport::deterministic_digest() const {
  const std::string canon = report_to_json(*this, false).dump();
  return fnv1a64_hex(canon.data(), canon.size());
}

AttackReport AttackReport::from_record(const std::string& line) {
  const json j = json::parse(line);
  AttackReport r;
  r.attack = j.at("attack").get<std::string>();
  r.config = j.value("config", std::string());
  r.label = j.value("label", std::string());
  r.seed = j.value("seed", std::uint64_t{0});
  r.train_crps = j.at("train_crps").get<Index>();
  r.test_crps = j.value("test_crps", Index{0});
  r.task_accuracy = j.at("task_accuracy").get<std::vector<double>>();
  r.epochs = j.value("epochs", 0);
  r.wall_seconds = j.value("wall_seconds", 0.0);
  if (j.contains("mean_gate_weight")) {
    r.mean_gate_weight = j["mean_gate_weight"].get<std::vector<double>>();
  }
  return r;
}

void append_record(const std::string& path, const AttackReport& report) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for appending");
  os << report.to_record() << "\n";
}

std::vector<AttackReport> read_records(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open '" + path + "' for reading");
  std::vector<AttackReport> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(AttackReport::from_record(line));
  }
  return out;
}

std::string fnv1a64_hex(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string digest_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open '" + path + "' for digest");
  std::ostringstream buffer;
  buffer << is.rdbuf();
  const std::string content = buffer.str();
  return fnv1a64_hex(content.data(), content.size());
}

std::string RunManifest::to_json() const {
  json j;
  j["subcommand"] = subcommand;
  json f = json::object();
  for (const auto& [k, v] : flags) f[k] = v;
  j["flags"] = f;
  j["version"] = version.empty() ? kToolkitVersion : version;
  json in = json::object();
  for (const auto& [k, v] : inputs) in[k] = v;
  j["inputs"] = in;
  json out = json::object();
  for (const auto& [k, v] : outputs) out[k] = v;
  j["outputs"] = out;
  if (!notes.empty()) j["notes"] = notes;
  return j.dump(2);
}

void RunManifest::write(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  os << to_json() << "\n";
}

std::string markdown_table(const std::vector<std::string>& headers,
                           const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::ostringstream os;
  const auto emit = [&](const std::vector<std::string>& cells) {
    os << "|";
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string& cell = c < cells.size() ? cells[c] : std::string();
      os << " " << cell << std::string(width[c] - cell.size(), ' ') << " |";
    }
    os << "\n";
  };
  emit(headers);
  os << "|";
  for (std::size_t c = 0; c < width.size(); ++c) {
    os << std::string(width[c] + 2, '-') << "|";
  }
  os << "\n";
  for (const auto& row : rows) emit(row);
  return os.str();
}

}  // namespace pufmoe

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pufmoe/types.hpp"

namespace pufmoe {

/// Outcome of one attack run. Accuracy is always measured on CRPs disjoint
/// from the training and validation rows.
struct AttackReport {
  std::string attack;                      // mope | lr | mursi | mmope | share-bottom
  std::string config;                      // key=value snapshot of the settings used
  std::string label;                       // optional target label for reporting
  std::uint64_t seed = 0;
  Index train_crps = 0;
  Index test_crps = 0;
  std::vector<double> task_accuracy;       // one entry per task
  int epochs = 0;
  double wall_seconds = 0.0;
  std::vector<double> mean_gate_weight;    // per expert, when the attack has a gate

  double accuracy() const;
  /// Single-line JSON record (UTF-8, no newline).
  std::string to_record() const;
  static AttackReport from_record(const std::string& line);
  /// Digest over the deterministic fields only (wall time excluded), for
  /// manifest equality across reruns.
  std::string deterministic_digest() const;
};

void append_record(const std::string& path, const AttackReport& report);
std::vector<AttackReport> read_records(const std::string& path);

/// 64-bit FNV-1a content fingerprint, hex-encoded. Not cryptographic; used
/// to compare artifacts for bit-identity across reruns.
std::string fnv1a64_hex(const void* data, std::size_t size);
std::string digest_file(const std::string& path);

/// Written alongside every CLI output; re-running the same manifest in
/// deterministic mode reproduces the outputs bit-exactly.
struct RunManifest {
  std::string subcommand;
  std::vector<std::pair<std::string, std::string>> flags;   // canonical order
  std::string version;
  std::vector<std::pair<std::string, std::string>> inputs;  // path -> digest
  std::vector<std::pair<std::string, std::string>> outputs; // path -> digest
  std::vector<std::string> notes;                           // instance details etc.

  std::string to_json() const;
  void write(const std::string& path) const;
};

/// Markdown table with aligned columns; rows[i] lines up under headers.
std::string markdown_table(const std::vector<std::string>& headers,
                           const std::vector<std::vector<std::string>>& rows);

}  // namespace pufmoe

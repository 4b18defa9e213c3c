#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pufmoe/errors.hpp"
#include "pufmoe/puf.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

/// Chance of guessing every bit of a `bits`-long ID at per-bit accuracy p
/// (independent-bit model): p^bits.
double collision_probability(double p, int bits);

/// Minimum viable per-bit accuracy for an ID of the given width. Listed
/// sizes {64: 0.80, 128: 0.90, 256: 0.95, 512: 0.98} come straight from the
/// success-threshold table; other sizes use the smallest p (3 decimals)
/// with p^bits >= 1e-6, clamped between the neighbouring listed values so
/// the threshold stays non-decreasing, and floored at 0.501.
double viability_threshold(int bits);

struct ViabilityPolicy {
  int id_bits = 64;
  double required_accuracy = 0.80;
};

struct SearchTrial {
  Index count = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  bool passed = false;
};

struct SearchResult {
  Index minimal_passing = 0;
  std::vector<SearchTrial> ledger;
};

struct SearchOptions {
  Index start = 1000;
  double target = 0.90;
  int instances = 3;             // fresh PUF instances per level; all must pass
  Index budget_cap = 8'000'000;  // level counts above this abort the search
  std::uint64_t seed = 1;
  double bracket_ratio = 1.5;    // stop once hi/lo <= this
};

/// Thrown when the search exceeds its budget; carries the partial ledger.
class SearchExhaustedWithLedger : public SearchExhausted {
 public:
  SearchExhaustedWithLedger(const std::string& message, SearchResult partial)
      : SearchExhausted(message), partial_(std::move(partial)) {}
  const SearchResult& partial() const { return partial_; }

 private:
  SearchResult partial_;
};

/// Geometric bracketing of the smallest CRP budget that reaches `target` on
/// all `instances` fresh instances per level: double on failure, halve on
/// success, then bisect (geometric mean) until hi/lo <= bracket_ratio.
/// `run_one(count, instance_seed)` trains one attack and returns held-out
/// accuracy.
SearchResult crp_search(
    const std::function<double(Index count, std::uint64_t instance_seed)>& run_one,
    const SearchOptions& options);

struct ModelSpec {
  std::string attack;  // "mope" | "lr" | "mursi"
  int k = 0;           // structure knowledge for lr/mursi; ignored by mope
  std::string label() const;
};

struct CrossMatrix {
  std::vector<std::string> row_labels;  // targets
  std::vector<std::string> col_labels;  // models
  MatrixX accuracy;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Held-out accuracy of every model against every target at the target's
/// budget; `run` does the actual training.
CrossMatrix cross_matrix(
    const std::vector<ModelSpec>& models, const std::vector<PufSpec>& targets,
    const std::vector<Index>& budgets,
    const std::function<double(const ModelSpec&, const PufSpec&, Index budget)>& run);

}  // namespace pufmoe

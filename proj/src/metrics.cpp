#include "pufmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "pufmoe/report.hpp"
#include "pufmoe/rng.hpp"

namespace pufmoe {

double collision_probability(double p, int bits) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0, 1]");
  if (bits < 1) throw std::invalid_argument("bits must be >= 1");
  return std::pow(p, static_cast<double>(bits));
}

double viability_threshold(int bits) {
  if (bits < 1) throw std::invalid_argument("bits must be >= 1");
  static const std::map<int, double> listed = {
      {64, 0.80}, {128, 0.90}, {256, 0.95}, {512, 0.98}};
  if (const auto it = listed.find(bits); it != listed.end()) return it->second;

  // Smallest p (3 decimals) whose full-collision chance still reaches the
  // one-in-a-million rationale behind the 64-bit row.
  double rule = 1.0;
  for (int milli = 1; milli <= 1000; ++milli) {
    const double p = static_cast<double>(milli) / 1000.0;
    if (collision_probability(p, bits) >= 1e-6) {
      rule = p;
      break;
    }
  }
  double lo = 0.501;
  double hi = 1.0;
  for (const auto& [b, v] : listed) {
    if (b < bits) lo = std::max(lo, v);
    if (b > bits) {
      hi = std::min(hi, v);
      break;
    }
  }
  return std::clamp(rule, lo, hi);
}

SearchResult crp_search(
    const std::function<double(Index, std::uint64_t)>& run_one,
    const SearchOptions& options) {
  if (options.start < 1) throw std::invalid_argument("start count must be >= 1");
  if (options.instances < 1) throw std::invalid_argument("need at least one instance per level");

  SearchResult result;
  std::uint64_t seed_state = options.seed;

  const auto run_level = [&](Index count) {
    SearchTrial trial;
    trial.count = count;
    trial.passed = true;
    for (int i = 0; i < options.instances; ++i) {
      const std::uint64_t instance_seed = splitmix64(seed_state);
      trial.seeds.push_back(instance_seed);
      const double acc = run_one(count, instance_seed);
      trial.accuracies.push_back(acc);
      if (!(acc >= options.target)) trial.passed = false;
    }
    result.ledger.push_back(trial);
    return trial.passed;
  };

  Index lo = 0;                // largest failing count seen
  Index hi = 0;                // smallest passing count seen (0 = none yet)
  Index level = options.start;

  for (;;) {
    if (level > options.budget_cap) {
      throw SearchExhaustedWithLedger(
          "crp search exceeded the budget cap of " +
              std::to_string(options.budget_cap) + " CRPs",
          result);
    }
    if (run_level(level)) {
      hi = hi == 0 ? level : std::min(hi, level);
    } else {
      lo = std::max(lo, level);
    }

    if (hi != 0) {
      if (lo == 0) {
        if (level <= 1) break;  // passed at the floor; nothing below to probe
        level = std::max<Index>(1, level / 2);
        continue;
      }
      if (static_cast<double>(hi) / static_cast<double>(lo) <=
              options.bracket_ratio ||
          lo + 1 >= hi) {
        break;
      }
      const double mid = std::sqrt(static_cast<double>(lo) * static_cast<double>(hi));
      Index next = static_cast<Index>(std::llround(mid));
      next = std::clamp<Index>(next, lo + 1, hi - 1);
      level = next;
      continue;
    }
    level *= 2;
  }

  result.minimal_passing = hi;
  return result;
}

std::string ModelSpec::label() const {
  if (attack == "mope") return "mope";
  return attack + ":" + std::to_string(k);
}

std::string CrossMatrix::to_csv() const {
  std::ostringstream os;
  os << "target";
  for (const auto& c : col_labels) os << "," << c;
  os << "\n";
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    os << row_labels[r];
    for (Index c = 0; c < accuracy.cols(); ++c) {
      os << "," << accuracy(static_cast<Index>(r), c);
    }
    os << "\n";
  }
  return os.str();
}

std::string CrossMatrix::to_markdown() const {
  std::vector<std::string> headers = {"target"};
  headers.insert(headers.end(), col_labels.begin(), col_labels.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    std::vector<std::string> row = {row_labels[r]};
    for (Index c = 0; c < accuracy.cols(); ++c) {
      std::ostringstream cell;
      cell.precision(4);
      cell << accuracy(static_cast<Index>(r), c);
      row.push_back(cell.str());
    }
    rows.push_back(std::move(row));
  }
  return markdown_table(headers, rows);
}

CrossMatrix cross_matrix(
    const std::vector<ModelSpec>& models, const std::vector<PufSpec>& targets,
    const std::vector<Index>& budgets,
    const std::function<double(const ModelSpec&, const PufSpec&, Index)>& run) {
  if (targets.size() != budgets.size()) {
    throw std::invalid_argument("one budget per target required");
  }
  CrossMatrix grid;
  for (const auto& m : models) grid.col_labels.push_back(m.label());
  for (const auto& t : targets) grid.row_labels.push_back(to_string(t));
  grid.accuracy.resize(static_cast<Index>(targets.size()),
                       static_cast<Index>(models.size()));
  for (std::size_t r = 0; r < targets.size(); ++r) {
    for (std::size_t c = 0; c < models.size(); ++c) {
      grid.accuracy(static_cast<Index>(r), static_cast<Index>(c)) =
          run(models[c], targets[r], budgets[r]);
    }
  }
  return grid;
}

}  // namespace pufmoe

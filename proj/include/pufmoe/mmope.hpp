#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pufmoe/dataset.hpp"
#include "pufmoe/mope.hpp"
#include "pufmoe/nn.hpp"
#include "pufmoe/report.hpp"
#include "pufmoe/training.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

/// Multi-task configuration: the expert pool grows with the task count,
/// K = base + extra * (T - 1); everything else matches MopeConfig.
struct MmopeConfig {
  Index tasks = 2;
  int base_experts = 4;
  int extra_experts_per_task = 3;
  std::array<Index, 2> expert_hidden{32, 32};
  Index tower_hidden = 16;
  double tau = 1e-4;
  int max_epochs = 3000;
  double learning_rate = 1e-2;
  int plateau_patience = 10;
  double lr_decay = 0.5;
  int early_stop_patience = 25;
  double validation_fraction = 0.05;
  std::uint64_t seed = 1;

  int num_experts() const {
    return base_experts + extra_experts_per_task * (static_cast<int>(tasks) - 1);
  }
  TrainSchedule schedule() const {
    TrainSchedule s;
    s.max_epochs = max_epochs;
    s.learning_rate = learning_rate;
    s.plateau_patience = plateau_patience;
    s.lr_decay = lr_decay;
    s.early_stop_patience = early_stop_patience;
    s.validation_fraction = validation_fraction;
    return s;
  }
  std::string summary() const;
};

/// Shared expert pool with one gate, tower and sigmoid head per task:
/// y_t = head_t(tower_t(sum_i g_t^i(X) h_i(X))). Experts are evaluated once
/// per input and reused by every task.
class MmopeNetwork {
 public:
  MmopeNetwork() = default;
  MmopeNetwork(Index input_dim, const MmopeConfig& cfg);

  double forward_backward(const MatrixX& x, const MatrixX& y);
  double eval_loss(const MatrixX& x, const MatrixX& y);
  MatrixX predict(const MatrixX& x);                 // tasks x batch
  MatrixX gate_weights(const MatrixX& x, Index task);

  std::vector<ParamView> params();
  Index input_dim() const { return input_dim_; }
  Index num_tasks() const { return static_cast<Index>(tasks_.size()); }
  int num_experts() const { return static_cast<int>(experts_.size()); }

  void save(std::ostream& os) const;
  static MmopeNetwork load(std::istream& is);

 private:
  void forward(const MatrixX& x);

  struct Expert {
    DenseLayer l1, l2;
    DenseCache c1, c2;
    MatrixX d1, d2;
  };
  struct Task {
    DenseLayer gate, tower, head;
    DenseCache gate_cache, tower_cache, head_cache;
    MatrixX moe, dmoe, dgate, dtower, dprob;
  };

  Index input_dim_ = 0;
  std::vector<Expert> experts_;
  std::vector<Task> tasks_;
  MatrixX out_;
};

MmopeNetwork build_mmope(Index n, const MmopeConfig& cfg);

/// Trains jointly on all response columns of `set` (mean of per-task BCE);
/// returns one report per task plus the shared training stats.
std::pair<MmopeNetwork, std::vector<AttackReport>> train_mmope(
    const CrpSet& set, const MmopeConfig& cfg);

std::pair<MmopeNetwork, std::vector<AttackReport>> run_mmope_attack(
    const CrpSet& train, const CrpSet& test, const MmopeConfig& cfg);

/// Mursi-style shared hidden stack with one sigmoid head per task; exists to
/// reproduce the negative-transfer behaviour of naive multi-task baselines.
Mlp build_share_bottom(Index n, Index tasks, const std::vector<Index>& hidden,
                       std::uint64_t seed);

}  // namespace pufmoe

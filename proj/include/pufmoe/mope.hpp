#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pufmoe/dataset.hpp"
#include "pufmoe/nn.hpp"
#include "pufmoe/report.hpp"
#include "pufmoe/training.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

/// One fixed configuration covers every PUF type; the acceptance runs never
/// touch these defaults.
struct MopeConfig {
  int num_experts = 4;
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

/// Mixture-of-PUF-experts: K parallel two-layer ReLU experts, a sparse
/// softmax gate over the same features, the gate-weighted sum of expert
/// outputs, then a sigmoid tower and a sigmoid head.
class MopeNetwork {
 public:
  MopeNetwork() = default;
  MopeNetwork(Index input_dim, const MopeConfig& cfg);

  double forward_backward(const MatrixX& x, const MatrixX& y);
  double eval_loss(const MatrixX& x, const MatrixX& y);
  MatrixX predict(const MatrixX& x);       // 1 x batch, probabilities
  MatrixX gate_weights(const MatrixX& x);  // K x batch, sparse gate outputs

  std::vector<ParamView> params();
  Index parameter_count();
  Index input_dim() const { return input_dim_; }
  int num_experts() const { return static_cast<int>(experts_.size()); }
  double tau() const { return gate_.tau; }

  void save(std::ostream& os) const;
  static MopeNetwork load(std::istream& is);

 private:
  friend class MmopeNetwork;
  void forward(const MatrixX& x);

  struct Expert {
    DenseLayer l1, l2;
    DenseCache c1, c2;
    MatrixX d1, d2;
  };

  Index input_dim_ = 0;
  std::vector<Expert> experts_;
  DenseLayer gate_;
  DenseLayer tower_;
  DenseLayer head_;
  DenseCache gate_cache_, tower_cache_, head_cache_;
  MatrixX moe_, dmoe_, dgate_, dtower_, dprob_;
};

MopeNetwork build_mope(Index n, const MopeConfig& cfg);

/// moe(X) = sum_k g_k * h_k with gate weights g and one expert output per
/// row of `expert_outputs`.
VectorX combine_experts(const VectorX& gate, const MatrixX& expert_outputs);

/// Trains on `set` (which must already exclude the held-out test rows).
/// The report's accuracy fields stay empty until evaluate() fills them.
std::pair<MopeNetwork, AttackReport> train_mope(const CrpSet& set,
                                                const MopeConfig& cfg);

struct PredictResult {
  BinaryVector bits;
  VectorX probabilities;
};

/// p == 0.5 predicts 0.
PredictResult predict(MopeNetwork& network, const CrpSet& challenges);

/// Convenience wrapper: train on `train`, measure on `test`, return the
/// completed report.
std::pair<MopeNetwork, AttackReport> run_mope_attack(const CrpSet& train,
                                                     const CrpSet& test,
                                                     const MopeConfig& cfg);

}  // namespace pufmoe

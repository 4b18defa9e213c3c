#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pufmoe/dataset.hpp"
#include "pufmoe/nn.hpp"
#include "pufmoe/report.hpp"
#include "pufmoe/training.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

/// Logistic product model: p = sigmoid(prod_l (<w_l, x> + b_l)). Requires
/// the attacker to know the XOR width k; that requirement is the point of
/// the comparison.
class LrProductModel {
 public:
  LrProductModel() = default;
  LrProductModel(Index n, int k, std::uint64_t seed);

  double forward_backward(const MatrixX& x, const MatrixX& y);
  double eval_loss(const MatrixX& x, const MatrixX& y);
  MatrixX predict(const MatrixX& x);  // 1 x batch

  std::vector<ParamView> params();
  int k() const { return static_cast<int>(W_.rows()); }
  Index input_dim() const { return W_.cols(); }
  /// Factor l as (weights, bias).
  std::pair<VectorX, Scalar> factor(int l) const;

 private:
  void forward(const MatrixX& x);

  MatrixX W_, gW_;  // k x n
  VectorX b_, gb_;  // k
  MatrixX acts_, prod_, probs_, dacts_, dprod_;
};

/// Mursi-style hidden sizes {2^{k-1}, 2^k, 2^{k-1}}; the architecture is a
/// pure function of the assumed XOR width.
std::vector<Index> mursi_hidden_sizes(int k);

/// Mursi-style per-k MLP: the fixed three-layer ReLU stack + sigmoid head.
struct MursiModel {
  int k = 0;
  Mlp net;
};

MursiModel build_mursi(Index n, int k, std::uint64_t seed);

std::pair<LrProductModel, AttackReport> train_lr_product(const CrpSet& set,
                                                         int k,
                                                         const TrainSchedule& sched,
                                                         std::uint64_t seed);

std::pair<MursiModel, AttackReport> train_mursi(const CrpSet& set, int k,
                                                const TrainSchedule& sched,
                                                std::uint64_t seed);

}  // namespace pufmoe

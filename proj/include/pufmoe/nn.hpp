#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pufmoe/errors.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

enum class Activation : std::uint8_t {
  Identity = 0,
  Relu = 1,
  Sigmoid = 2,
  Softmax = 3,
  SparseSoftmax = 4,
  Tanh = 5,
};

const char* to_string(Activation a);

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Glorot-uniform (out x in) matrix: entries ~ U[-L, L], L = sqrt(6/(in+out)).
MatrixX glorot_init(Index in, Index out, std::uint64_t seed);

VectorX softmax(const VectorX& logits);

/// Algorithm: normalize with a plain softmax, then set every entry strictly
/// below tau to exactly zero; no renormalization. Outputs are 0 or >= tau,
/// the sum lies in [1 - K*tau, 1], and the argmax matches plain softmax.
VectorX sparse_softmax(const VectorX& logits, double tau);

/// Column-wise stable softmax into `out`.
void softmax_columns(const MatrixX& logits, MatrixX& out);

/// Mean binary cross-entropy, predictions clamped to
/// [kProbClamp, 1 - kProbClamp]. The mean runs over every entry of the
/// (tasks x batch) block, so the multi-task joint loss is the unweighted
/// mean of the per-task losses.
double bce_loss(const MatrixX& probs, const MatrixX& labels);

/// d(bce_loss)/d(probs), including the clamp (zero slope where it binds).
void bce_grad(const MatrixX& probs, const MatrixX& labels, MatrixX& dprobs);

/// One dense layer with gradient accumulators. Weights are (out x in) and
/// batches are column-major: forward computes act(W * X + b).
struct DenseLayer {
  MatrixX W;
  VectorX b;
  MatrixX gW;
  VectorX gb;
  Activation act = Activation::Identity;
  double tau = 0.0;

  static DenseLayer make(Index in, Index out, Activation act,
                         std::uint64_t seed, double tau = 0.0);

  Index fan_in() const { return W.cols(); }
  Index fan_out() const { return W.rows(); }
  void zero_grad();
};

struct DenseCache {
  MatrixX a;  // post-activation output; masked output for SparseSoftmax
  MatrixX s;  // SparseSoftmax only: dense softmax kept for the backward pass
};

void dense_forward(const DenseLayer& layer, const MatrixX& x, DenseCache& cache);

/// `da` is the gradient w.r.t. cache.a and is consumed in place. Parameter
/// gradients accumulate into layer.gW / layer.gb; the input gradient is
/// written to *dx when requested. For SparseSoftmax the masked entries pass
/// nothing (the mask is a constant within the step) and the survivors flow
/// through the dense softmax Jacobian.
void dense_backward(DenseLayer& layer, const MatrixX& x, const DenseCache& cache,
                    MatrixX& da, MatrixX* dx);

/// Non-owning view of one parameter block and its gradient.
struct ParamView {
  Scalar* value = nullptr;
  Scalar* grad = nullptr;
  Index size = 0;
  std::string name;
};

void append_params(std::vector<ParamView>& out, DenseLayer& layer,
                   const std::string& name);

Index total_size(const std::vector<ParamView>& params);
VectorX snapshot(const std::vector<ParamView>& params);
void restore(const std::vector<ParamView>& params, const VectorX& stored);

/// Bias-corrected Adam over a list of parameter blocks; moments mirror the
/// block shapes and are sized on first use.
class AdamState {
 public:
  explicit AdamState(double lr = 1e-3) : lr_(lr) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long step_count() const { return step_; }

  /// Applies one update; throws TrainingDiverged on non-finite gradients.
  void step(const std::vector<ParamView>& params);

 private:
  double lr_;
  long step_ = 0;
  std::vector<VectorX> m_;
  std::vector<VectorX> v_;
};

/// Plain MLP: a uniform hidden stack plus `heads` sigmoid output rows, every
/// head reading the last hidden layer. One head is the ordinary case;
/// several heads give the share-bottom multi-task shape.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Index input, const std::vector<Index>& hidden, Index heads,
      std::uint64_t seed, Activation hidden_act = Activation::Relu);

  double forward_backward(const MatrixX& x, const MatrixX& y);
  double eval_loss(const MatrixX& x, const MatrixX& y);
  MatrixX predict(const MatrixX& x);  // heads x batch, probabilities

  std::vector<ParamView> params();
  Index input_dim() const { return hidden_.empty() ? 0 : hidden_.front().fan_in(); }
  Index num_heads() const { return static_cast<Index>(heads_.size()); }
  std::vector<Index> hidden_sizes() const;

  void save(std::ostream& os) const;
  static Mlp load(std::istream& is);

 private:
  void forward(const MatrixX& x);

  std::vector<DenseLayer> hidden_;
  std::vector<DenseLayer> heads_;
  std::vector<DenseCache> hcache_;
  std::vector<DenseCache> headcache_;
  MatrixX out_, dout_, dback_, dtmp_, dhead_in_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<std::pair<std::string, double>> block_errors;
};

/// Central finite differences against the analytic gradients. `stride`
/// subsamples entries within each block (1 checks everything). Relative
/// error uses |a - n| / max(|a| + |n|, 1e-6) so exact-zero gradients do not
/// divide by zero.
template <class Model>
GradCheckReport grad_check(Model& model, const MatrixX& x, const MatrixX& y,
                           double h = 1e-5, Index stride = 1) {
  auto params = model.params();
  model.forward_backward(x, y);
  std::vector<VectorX> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.emplace_back(Eigen::Map<const VectorX>(p.grad, p.size));
  }

  GradCheckReport report;
  for (std::size_t bi = 0; bi < params.size(); ++bi) {
    auto& p = params[bi];
    double block_err = 0.0;
    for (Index i = 0; i < p.size; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = model.eval_loss(x, y);
      p.value[i] = saved - h;
      const double down = model.eval_loss(x, y);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[bi][i];
      const double err =
          std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
      block_err = std::max(block_err, err);
    }
    report.block_errors.emplace_back(p.name, block_err);
    report.max_rel_error = std::max(report.max_rel_error, block_err);
  }
  return report;
}

}  // namespace pufmoe

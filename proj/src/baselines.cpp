#include "pufmoe/baselines.hpp"

#include <sstream>
#include <stdexcept>

#include "pufmoe/rng.hpp"

namespace pufmoe {

LrProductModel::LrProductModel(Index n, int k, std::uint64_t seed) {
  if (n < 1 || k < 1) throw std::invalid_argument("lr product model needs n, k >= 1");
  W_.resize(k, n);
  b_.resize(k);
  const double limit = std::sqrt(6.0 / static_cast<double>(n + 1));
  for (int l = 0; l < k; ++l) {
    W_.row(l) = glorot_init(n, 1, derive_seed(seed, static_cast<std::uint64_t>(l)));
    Rng rng(derive_seed(seed, 0x100 + static_cast<std::uint64_t>(l)));
    b_[l] = rng.uniform(-limit, limit);
  }
  gW_ = MatrixX::Zero(k, n);
  gb_ = VectorX::Zero(k);
}

void LrProductModel::forward(const MatrixX& x) {
  acts_.resize(W_.rows(), x.cols());
  acts_.noalias() = W_ * x;
  acts_.colwise() += b_;
  prod_ = acts_.colwise().prod();
  probs_ = ((-prod_.array()).exp() + 1.0).inverse();
}

double LrProductModel::forward_backward(const MatrixX& x, const MatrixX& y) {
  forward(x);
  gW_.setZero();
  gb_.setZero();
  const double loss = bce_loss(probs_, y);
  bce_grad(probs_, y, dprod_);
  dprod_.array() *= probs_.array() * (1.0 - probs_.array());

  // d(prod)/d(act_l) = product of the other factors, via prefix/suffix
  // sweeps so near-zero factors stay well defined.
  const Index k = W_.rows();
  const Index batch = x.cols();
  dacts_.resize(k, batch);
  for (Index j = 0; j < batch; ++j) {
    double prefix = 1.0;
    for (Index l = 0; l < k; ++l) {
      dacts_(l, j) = prefix;
      prefix *= acts_(l, j);
    }
    double suffix = 1.0;
    for (Index l = k - 1; l >= 0; --l) {
      dacts_(l, j) *= suffix * dprod_(0, j);
      suffix *= acts_(l, j);
    }
  }
  gW_.noalias() += dacts_ * x.transpose();
  gb_.noalias() += dacts_.rowwise().sum();
  return loss;
}

double LrProductModel::eval_loss(const MatrixX& x, const MatrixX& y) {
  forward(x);
  return bce_loss(probs_, y);
}

MatrixX LrProductModel::predict(const MatrixX& x) {
  forward(x);
  return probs_;
}

std::vector<ParamView> LrProductModel::params() {
  return {{W_.data(), gW_.data(), W_.size(), "factors.W"},
          {b_.data(), gb_.data(), b_.size(), "factors.b"}};
}

std::pair<VectorX, Scalar> LrProductModel::factor(int l) const {
  return {W_.row(l).transpose(), b_[l]};
}

std::vector<Index> mursi_hidden_sizes(int k) {
  if (k < 1) throw std::invalid_argument("mursi sizes need k >= 1");
  const Index mid = Index{1} << k;
  return {mid / 2, mid, mid / 2};
}

MursiModel build_mursi(Index n, int k, std::uint64_t seed) {
  // tanh hidden layers, following the attack this baseline replicates.
  return {k, Mlp(n, mursi_hidden_sizes(k), 1, seed, Activation::Tanh)};
}

namespace {

std::string schedule_summary(const TrainSchedule& s) {
  std::ostringstream os;
  os << "lr=" << s.learning_rate << " epochs<=" << s.max_epochs;
  return os.str();
}

}  // namespace

std::pair<LrProductModel, AttackReport> train_lr_product(const CrpSet& set,
                                                         int k,
                                                         const TrainSchedule& sched,
                                                         std::uint64_t seed) {
  if (set.tasks != 1) {
    throw std::invalid_argument("train_lr_product expects a single-task set");
  }
  LrProductModel model(set.n, k, seed);
  const FitResult fitted = fit(model, set, sched, seed);
  AttackReport report;
  report.attack = "lr";
  report.config = "k=" + std::to_string(k) + " " + schedule_summary(sched);
  report.seed = seed;
  report.train_crps = set.count();
  report.epochs = fitted.epochs;
  report.wall_seconds = fitted.wall_seconds;
  return {std::move(model), std::move(report)};
}

std::pair<MursiModel, AttackReport> train_mursi(const CrpSet& set, int k,
                                                const TrainSchedule& sched,
                                                std::uint64_t seed) {
  if (set.tasks != 1) {
    throw std::invalid_argument("train_mursi expects a single-task set");
  }
  MursiModel model = build_mursi(set.n, k, seed);
  const FitResult fitted = fit(model.net, set, sched, seed);
  AttackReport report;
  report.attack = "mursi";
  report.config = "k=" + std::to_string(k) + " " + schedule_summary(sched);
  report.seed = seed;
  report.train_crps = set.count();
  report.epochs = fitted.epochs;
  report.wall_seconds = fitted.wall_seconds;
  return {std::move(model), std::move(report)};
}

}  // namespace pufmoe

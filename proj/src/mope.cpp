#include "pufmoe/mope.hpp"

#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "layer_tags.hpp"
#include "pufmoe/rng.hpp"

namespace pufmoe {

std::string MopeConfig::summary() const {
  std::ostringstream os;
  os << "experts=" << num_experts << " hidden=" << expert_hidden[0] << "x"
     << expert_hidden[1] << " tower=" << tower_hidden << " tau=" << tau
     << " lr=" << learning_rate << " epochs<=" << max_epochs;
  return os.str();
}

MopeNetwork::MopeNetwork(Index input_dim, const MopeConfig& cfg)
    : input_dim_(input_dim) {
  if (input_dim < 1) throw std::invalid_argument("mope needs input dim >= 1");
  if (cfg.num_experts < 1) throw std::invalid_argument("mope needs K >= 1");
  experts_.resize(static_cast<std::size_t>(cfg.num_experts));
  for (int k = 0; k < cfg.num_experts; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    e.l1 = DenseLayer::make(input_dim, cfg.expert_hidden[0], Activation::Relu,
                            derive_seed(cfg.seed, tags::expert(k, 0)));
    e.l2 = DenseLayer::make(cfg.expert_hidden[0], cfg.expert_hidden[1],
                            Activation::Relu,
                            derive_seed(cfg.seed, tags::expert(k, 1)));
  }
  gate_ = DenseLayer::make(input_dim, cfg.num_experts, Activation::SparseSoftmax,
                           derive_seed(cfg.seed, tags::gate(0)), cfg.tau);
  // Sigmoid tower: the saturating tower nonlinearity is what lets the
  // gate-weighted expert mixture express the XOR product structure.
  tower_ = DenseLayer::make(cfg.expert_hidden[1], cfg.tower_hidden,
                            Activation::Sigmoid,
                            derive_seed(cfg.seed, tags::tower(0)));
  head_ = DenseLayer::make(cfg.tower_hidden, 1, Activation::Sigmoid,
                           derive_seed(cfg.seed, tags::head(0)));
}

void MopeNetwork::forward(const MatrixX& x) {
  const int K = num_experts();
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    dense_forward(e.l1, x, e.c1);
    dense_forward(e.l2, e.c1.a, e.c2);
  }
  dense_forward(gate_, x, gate_cache_);

  moe_.setZero(experts_.front().l2.fan_out(), x.cols());
  for (int k = 0; k < K; ++k) {
    moe_.array() += experts_[static_cast<std::size_t>(k)].c2.a.array().rowwise() *
                    gate_cache_.a.row(k).array();
  }
  dense_forward(tower_, moe_, tower_cache_);
  dense_forward(head_, tower_cache_.a, head_cache_);
}

double MopeNetwork::forward_backward(const MatrixX& x, const MatrixX& y) {
  forward(x);
  for (auto& e : experts_) {
    e.l1.zero_grad();
    e.l2.zero_grad();
  }
  gate_.zero_grad();
  tower_.zero_grad();
  head_.zero_grad();

  const double loss = bce_loss(head_cache_.a, y);
  bce_grad(head_cache_.a, y, dprob_);
  dense_backward(head_, tower_cache_.a, head_cache_, dprob_, &dtower_);
  dense_backward(tower_, moe_, tower_cache_, dtower_, &dmoe_);

  const int K = num_experts();
  dgate_.resize(K, x.cols());
  for (int k = 0; k < K; ++k) {
    dgate_.row(k) = (experts_[static_cast<std::size_t>(k)].c2.a.array() *
                     dmoe_.array())
                        .colwise()
                        .sum();
  }
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    e.d2 = dmoe_.array().rowwise() * gate_cache_.a.row(k).array();
    dense_backward(e.l2, e.c1.a, e.c2, e.d2, &e.d1);
    dense_backward(e.l1, x, e.c1, e.d1, nullptr);
  }
  dense_backward(gate_, x, gate_cache_, dgate_, nullptr);
  return loss;
}

double MopeNetwork::eval_loss(const MatrixX& x, const MatrixX& y) {
  forward(x);
  return bce_loss(head_cache_.a, y);
}

MatrixX MopeNetwork::predict(const MatrixX& x) {
  forward(x);
  return head_cache_.a;
}

MatrixX MopeNetwork::gate_weights(const MatrixX& x) {
  dense_forward(gate_, x, gate_cache_);
  return gate_cache_.a;
}

std::vector<ParamView> MopeNetwork::params() {
  std::vector<ParamView> out;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    append_params(out, experts_[k].l1, "expert" + std::to_string(k) + ".l1");
    append_params(out, experts_[k].l2, "expert" + std::to_string(k) + ".l2");
  }
  append_params(out, gate_, "gate");
  append_params(out, tower_, "tower");
  append_params(out, head_, "head");
  return out;
}

Index MopeNetwork::parameter_count() {
  return total_size(params());
}

void MopeNetwork::save(std::ostream& os) const {
  os.write("MOPC", 4);
  io::put_u8(os, 1);  // checkpoint version
  io::put_u8(os, 2);  // network kind: mope
  io::put_u64(os, static_cast<std::uint64_t>(input_dim_));
  io::put_u64(os, experts_.size());
  io::put_u64(os, static_cast<std::uint64_t>(experts_.front().l1.fan_out()));
  io::put_u64(os, static_cast<std::uint64_t>(experts_.front().l2.fan_out()));
  io::put_u64(os, static_cast<std::uint64_t>(tower_.fan_out()));
  io::put_f64(os, gate_.tau);
  for (const auto& e : experts_) {
    io::put_block(os, e.l1.W.data(), e.l1.W.size());
    io::put_block(os, e.l1.b.data(), e.l1.b.size());
    io::put_block(os, e.l2.W.data(), e.l2.W.size());
    io::put_block(os, e.l2.b.data(), e.l2.b.size());
  }
  io::put_block(os, gate_.W.data(), gate_.W.size());
  io::put_block(os, gate_.b.data(), gate_.b.size());
  io::put_block(os, tower_.W.data(), tower_.W.size());
  io::put_block(os, tower_.b.data(), tower_.b.size());
  io::put_block(os, head_.W.data(), head_.W.size());
  io::put_block(os, head_.b.data(), head_.b.size());
}

MopeNetwork MopeNetwork::load(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "MOPC", 4) != 0) {
    throw FormatError("bad checkpoint magic", 0);
  }
  if (io::get_u8(is) != 1) throw FormatError("unsupported checkpoint version", 4);
  if (io::get_u8(is) != 2) throw FormatError("checkpoint is not a mope network", 5);
  MopeConfig cfg;
  const auto input = static_cast<Index>(io::get_u64(is));
  cfg.num_experts = static_cast<int>(io::get_u64(is));
  cfg.expert_hidden[0] = static_cast<Index>(io::get_u64(is));
  cfg.expert_hidden[1] = static_cast<Index>(io::get_u64(is));
  cfg.tower_hidden = static_cast<Index>(io::get_u64(is));
  cfg.tau = io::get_f64(is);
  MopeNetwork net(input, cfg);
  net.gate_.tau = cfg.tau;
  for (auto& e : net.experts_) {
    io::get_block(is, e.l1.W.data(), e.l1.W.size());
    io::get_block(is, e.l1.b.data(), e.l1.b.size());
    io::get_block(is, e.l2.W.data(), e.l2.W.size());
    io::get_block(is, e.l2.b.data(), e.l2.b.size());
  }
  io::get_block(is, net.gate_.W.data(), net.gate_.W.size());
  io::get_block(is, net.gate_.b.data(), net.gate_.b.size());
  io::get_block(is, net.tower_.W.data(), net.tower_.W.size());
  io::get_block(is, net.tower_.b.data(), net.tower_.b.size());
  io::get_block(is, net.head_.W.data(), net.head_.W.size());
  io::get_block(is, net.head_.b.data(), net.head_.b.size());
  return net;
}

MopeNetwork build_mope(Index n, const MopeConfig& cfg) {
  return MopeNetwork(n, cfg);
}

VectorX combine_experts(const VectorX& gate, const MatrixX& expert_outputs) {
  if (gate.size() != expert_outputs.rows()) {
    throw std::invalid_argument("gate length must match the expert count");
  }
  return expert_outputs.transpose() * gate;
}

std::pair<MopeNetwork, AttackReport> train_mope(const CrpSet& set,
                                                const MopeConfig& cfg) {
  if (set.count() < 1) throw std::invalid_argument("cannot train on an empty set");
  if (set.tasks != 1) {
    throw std::invalid_argument("train_mope expects exactly one response column");
  }
  MopeNetwork net(set.n, cfg);
  const FitResult fitted = fit(net, set, cfg.schedule(), cfg.seed);

  AttackReport report;
  report.attack = "mope";
  report.config = cfg.summary();
  report.seed = cfg.seed;
  report.train_crps = set.count();
  report.epochs = fitted.epochs;
  report.wall_seconds = fitted.wall_seconds;

  // Mean gate weight per expert over (up to) 10k training rows.
  const Index sample = std::min<Index>(set.count(), 10000);
  std::vector<Index> rows(static_cast<std::size_t>(sample));
  std::iota(rows.begin(), rows.end(), Index{0});
  const MatrixX g = net.gate_weights(features_for(set, rows));
  for (Index k = 0; k < g.rows(); ++k) {
    report.mean_gate_weight.push_back(g.row(k).mean());
  }
  return {std::move(net), std::move(report)};
}

PredictResult predict(MopeNetwork& network, const CrpSet& challenges) {
  PredictResult out;
  out.bits.resize(challenges.count());
  out.probabilities.resize(challenges.count());
  std::vector<Index> rows;
  MatrixX x;
  constexpr Index kChunk = 20000;
  for (Index at = 0; at < challenges.count(); at += kChunk) {
    const Index hi = std::min(challenges.count(), at + kChunk);
    rows.resize(static_cast<std::size_t>(hi - at));
    std::iota(rows.begin(), rows.end(), at);
    features_for(challenges, rows, x);
    const MatrixX p = network.predict(x);
    for (Index j = 0; j < p.cols(); ++j) {
      out.probabilities[at + j] = p(0, j);
      out.bits[at + j] = p(0, j) > 0.5 ? 1 : 0;
    }
  }
  return out;
}

std::pair<MopeNetwork, AttackReport> run_mope_attack(const CrpSet& train,
                                                     const CrpSet& test,
                                                     const MopeConfig& cfg) {
  auto [net, report] = train_mope(train, cfg);
  report.task_accuracy = evaluate_tasks(net, test);
  report.test_crps = test.count();
  return {std::move(net), std::move(report)};
}

}  // namespace pufmoe

#include "pufmoe/mmope.hpp"

#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "layer_tags.hpp"
#include "pufmoe/rng.hpp"

namespace pufmoe {

std::string MmopeConfig::summary() const {
  std::ostringstream os;
  os << "tasks=" << tasks << " experts=" << num_experts() << " (base "
     << base_experts << " +" << extra_experts_per_task << "/task) hidden="
     << expert_hidden[0] << "x" << expert_hidden[1] << " tower=" << tower_hidden
     << " tau=" << tau << " lr=" << learning_rate << " epochs<=" << max_epochs;
  return os.str();
}

MmopeNetwork::MmopeNetwork(Index input_dim, const MmopeConfig& cfg)
    : input_dim_(input_dim) {
  if (input_dim < 1) throw std::invalid_argument("mmope needs input dim >= 1");
  if (cfg.tasks < 1) throw std::invalid_argument("mmope needs tasks >= 1");
  const int K = cfg.num_experts();
  if (K < cfg.tasks) throw std::invalid_argument("mmope needs K >= tasks");

  experts_.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    e.l1 = DenseLayer::make(input_dim, cfg.expert_hidden[0], Activation::Relu,
                            derive_seed(cfg.seed, tags::expert(k, 0)));
    e.l2 = DenseLayer::make(cfg.expert_hidden[0], cfg.expert_hidden[1],
                            Activation::Relu,
                            derive_seed(cfg.seed, tags::expert(k, 1)));
  }
  tasks_.resize(static_cast<std::size_t>(cfg.tasks));
  for (Index t = 0; t < cfg.tasks; ++t) {
    auto& task = tasks_[static_cast<std::size_t>(t)];
    task.gate = DenseLayer::make(input_dim, K, Activation::SparseSoftmax,
                                 derive_seed(cfg.seed, tags::gate(static_cast<int>(t))),
                                 cfg.tau);
    task.tower = DenseLayer::make(cfg.expert_hidden[1], cfg.tower_hidden,
                                  Activation::Sigmoid,
                                  derive_seed(cfg.seed, tags::tower(static_cast<int>(t))));
    task.head = DenseLayer::make(cfg.tower_hidden, 1, Activation::Sigmoid,
                                 derive_seed(cfg.seed, tags::head(static_cast<int>(t))));
  }
}

void MmopeNetwork::forward(const MatrixX& x) {
  const int K = num_experts();
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    dense_forward(e.l1, x, e.c1);
    dense_forward(e.l2, e.c1.a, e.c2);
  }
  out_.resize(num_tasks(), x.cols());
  const Index width = experts_.front().l2.fan_out();
  for (auto& task : tasks_) {
    dense_forward(task.gate, x, task.gate_cache);
    task.moe.setZero(width, x.cols());
    for (int k = 0; k < K; ++k) {
      task.moe.array() += experts_[static_cast<std::size_t>(k)].c2.a.array().rowwise() *
                          task.gate_cache.a.row(k).array();
    }
    dense_forward(task.tower, task.moe, task.tower_cache);
    dense_forward(task.head, task.tower_cache.a, task.head_cache);
  }
  for (Index t = 0; t < num_tasks(); ++t) {
    out_.row(t) = tasks_[static_cast<std::size_t>(t)].head_cache.a.row(0);
  }
}

double MmopeNetwork::forward_backward(const MatrixX& x, const MatrixX& y) {
  forward(x);
  for (auto& e : experts_) {
    e.l1.zero_grad();
    e.l2.zero_grad();
    e.d2.setZero(e.l2.fan_out(), x.cols());
  }
  for (auto& task : tasks_) {
    task.gate.zero_grad();
    task.tower.zero_grad();
    task.head.zero_grad();
  }

  // Joint loss: unweighted mean of the per-task BCEs (bce_loss averages
  // over the whole tasks x batch block).
  const double loss = bce_loss(out_, y);
  const int K = num_experts();
  for (Index t = 0; t < num_tasks(); ++t) {
    auto& task = tasks_[static_cast<std::size_t>(t)];
    MatrixX yt = y.row(t);
    bce_grad(task.head_cache.a, yt, task.dprob);
    // bce_grad normalizes by its own block size (1 x B); rescale so each
    // task contributes 1/T of the joint gradient.
    task.dprob /= static_cast<double>(num_tasks());
    dense_backward(task.head, task.tower_cache.a, task.head_cache, task.dprob,
                   &task.dtower);
    dense_backward(task.tower, task.moe, task.tower_cache, task.dtower,
                   &task.dmoe);
    task.dgate.resize(K, x.cols());
    for (int k = 0; k < K; ++k) {
      task.dgate.row(k) = (experts_[static_cast<std::size_t>(k)].c2.a.array() *
                           task.dmoe.array())
                              .colwise()
                              .sum();
    }
    dense_backward(task.gate, x, task.gate_cache, task.dgate, nullptr);
    for (int k = 0; k < K; ++k) {
      experts_[static_cast<std::size_t>(k)].d2.array() +=
          task.dmoe.array().rowwise() * task.gate_cache.a.row(k).array();
    }
  }
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    auto& e = experts_[static_cast<std::size_t>(k)];
    dense_backward(e.l2, e.c1.a, e.c2, e.d2, &e.d1);
    dense_backward(e.l1, x, e.c1, e.d1, nullptr);
  }
  return loss;
}

double MmopeNetwork::eval_loss(const MatrixX& x, const MatrixX& y) {
  forward(x);
  return bce_loss(out_, y);
}

MatrixX MmopeNetwork::predict(const MatrixX& x) {
  forward(x);
  return out_;
}

MatrixX MmopeNetwork::gate_weights(const MatrixX& x, Index task) {
  auto& t = tasks_.at(static_cast<std::size_t>(task));
  dense_forward(t.gate, x, t.gate_cache);
  return t.gate_cache.a;
}

std::vector<ParamView> MmopeNetwork::params() {
  std::vector<ParamView> out;
  for (std::size_t k = 0; k < experts_.size(); ++k) {
    append_params(out, experts_[k].l1, "expert" + std::to_string(k) + ".l1");
    append_params(out, experts_[k].l2, "expert" + std::to_string(k) + ".l2");
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    append_params(out, tasks_[t].gate, "task" + std::to_string(t) + ".gate");
    append_params(out, tasks_[t].tower, "task" + std::to_string(t) + ".tower");
    append_params(out, tasks_[t].head, "task" + std::to_string(t) + ".head");
  }
  return out;
}

void MmopeNetwork::save(std::ostream& os) const {
  os.write("MOPC", 4);
  io::put_u8(os, 1);
  io::put_u8(os, 3);  // network kind: mmope
  io::put_u64(os, static_cast<std::uint64_t>(input_dim_));
  io::put_u64(os, tasks_.size());
  io::put_u64(os, experts_.size());
  io::put_u64(os, static_cast<std::uint64_t>(experts_.front().l1.fan_out()));
  io::put_u64(os, static_cast<std::uint64_t>(experts_.front().l2.fan_out()));
  io::put_u64(os, static_cast<std::uint64_t>(tasks_.front().tower.fan_out()));
  io::put_f64(os, tasks_.front().gate.tau);
  for (const auto& e : experts_) {
    io::put_block(os, e.l1.W.data(), e.l1.W.size());
    io::put_block(os, e.l1.b.data(), e.l1.b.size());
    io::put_block(os, e.l2.W.data(), e.l2.W.size());
    io::put_block(os, e.l2.b.data(), e.l2.b.size());
  }
  for (const auto& t : tasks_) {
    io::put_block(os, t.gate.W.data(), t.gate.W.size());
    io::put_block(os, t.gate.b.data(), t.gate.b.size());
    io::put_block(os, t.tower.W.data(), t.tower.W.size());
    io::put_block(os, t.tower.b.data(), t.tower.b.size());
    io::put_block(os, t.head.W.data(), t.head.W.size());
    io::put_block(os, t.head.b.data(), t.head.b.size());
  }
}

MmopeNetwork MmopeNetwork::load(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "MOPC", 4) != 0) {
    throw FormatError("bad checkpoint magic", 0);
  }
  if (io::get_u8(is) != 1) throw FormatError("unsupported checkpoint version", 4);
  if (io::get_u8(is) != 3) throw FormatError("checkpoint is not an mmope network", 5);
  MmopeConfig cfg;
  const auto input = static_cast<Index>(io::get_u64(is));
  cfg.tasks = static_cast<Index>(io::get_u64(is));
  const auto experts = static_cast<int>(io::get_u64(is));
  cfg.base_experts = experts;
  cfg.extra_experts_per_task = 0;
  cfg.expert_hidden[0] = static_cast<Index>(io::get_u64(is));
  cfg.expert_hidden[1] = static_cast<Index>(io::get_u64(is));
  cfg.tower_hidden = static_cast<Index>(io::get_u64(is));
  cfg.tau = io::get_f64(is);
  MmopeNetwork net(input, cfg);
  for (auto& e : net.experts_) {
    io::get_block(is, e.l1.W.data(), e.l1.W.size());
    io::get_block(is, e.l1.b.data(), e.l1.b.size());
    io::get_block(is, e.l2.W.data(), e.l2.W.size());
    io::get_block(is, e.l2.b.data(), e.l2.b.size());
  }
  for (auto& t : net.tasks_) {
    io::get_block(is, t.gate.W.data(), t.gate.W.size());
    io::get_block(is, t.gate.b.data(), t.gate.b.size());
    io::get_block(is, t.tower.W.data(), t.tower.W.size());
    io::get_block(is, t.tower.b.data(), t.tower.b.size());
    io::get_block(is, t.head.W.data(), t.head.W.size());
    io::get_block(is, t.head.b.data(), t.head.b.size());
  }
  return net;
}

MmopeNetwork build_mmope(Index n, const MmopeConfig& cfg) {
  return MmopeNetwork(n, cfg);
}

std::pair<MmopeNetwork, std::vector<AttackReport>> train_mmope(
    const CrpSet& set, const MmopeConfig& cfg) {
  if (set.count() < 1) throw std::invalid_argument("cannot train on an empty set");
  if (set.tasks < 2) {
    throw std::invalid_argument("train_mmope expects at least two response columns");
  }
  MmopeConfig used = cfg;
  used.tasks = set.tasks;
  MmopeNetwork net(set.n, used);
  const FitResult fitted = fit(net, set, used.schedule(), used.seed);

  std::vector<AttackReport> reports;
  const Index sample = std::min<Index>(set.count(), 10000);
  std::vector<Index> rows(static_cast<std::size_t>(sample));
  std::iota(rows.begin(), rows.end(), Index{0});
  const MatrixX x = features_for(set, rows);
  for (Index t = 0; t < set.tasks; ++t) {
    AttackReport r;
    r.attack = "mmope";
    r.config = used.summary() + " task=" + std::to_string(t);
    r.seed = used.seed;
    r.train_crps = set.count();
    r.epochs = fitted.epochs;
    r.wall_seconds = fitted.wall_seconds;
    const MatrixX g = net.gate_weights(x, t);
    for (Index k = 0; k < g.rows(); ++k) {
      r.mean_gate_weight.push_back(g.row(k).mean());
    }
    reports.push_back(std::move(r));
  }
  return {std::move(net), std::move(reports)};
}

std::pair<MmopeNetwork, std::vector<AttackReport>> run_mmope_attack(
    const CrpSet& train, const CrpSet& test, const MmopeConfig& cfg) {
  auto [net, reports] = train_mmope(train, cfg);
  const auto acc = evaluate_tasks(net, test);
  for (std::size_t t = 0; t < reports.size(); ++t) {
    reports[t].task_accuracy = {acc[t]};
    reports[t].test_crps = test.count();
  }
  return {std::move(net), std::move(reports)};
}

Mlp build_share_bottom(Index n, Index tasks, const std::vector<Index>& hidden,
                       std::uint64_t seed) {
  if (tasks < 1) throw std::invalid_argument("share-bottom needs tasks >= 1");
  // Same hidden activation as the Mursi baseline it extends.
  return Mlp(n, hidden, tasks, seed, Activation::Tanh);
}

}  // namespace pufmoe

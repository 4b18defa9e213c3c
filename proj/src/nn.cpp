#include "pufmoe/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "binio.hpp"
#include "pufmoe/rng.hpp"

namespace pufmoe {
namespace {

constexpr char kCheckpointMagic[4] = {'M', 'O', 'P', 'C'};
constexpr std::uint8_t kCheckpointVersion = 1;

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softmax: return "softmax";
    case Activation::SparseSoftmax: return "sparse-softmax";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

MatrixX glorot_init(Index in, Index out, std::uint64_t seed) {
  if (in < 1 || out < 1) throw std::invalid_argument("glorot_init needs in, out >= 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Rng rng(seed);
  MatrixX w(out, in);
  // Column-major fill order, fixed for reproducibility.
  for (Index j = 0; j < in; ++j) {
    for (Index i = 0; i < out; ++i) {
      w(i, j) = rng.uniform(-limit, limit);
    }
  }
  return w;
}

VectorX softmax(const VectorX& logits) {
  const double top = logits.maxCoeff();
  VectorX e = (logits.array() - top).exp();
  return e / e.sum();
}

VectorX sparse_softmax(const VectorX& logits, double tau) {
  VectorX s = softmax(logits);
  for (Index i = 0; i < s.size(); ++i) {
    if (s[i] < tau) s[i] = 0.0;
  }
  return s;
}

void softmax_columns(const MatrixX& logits, MatrixX& out) {
  out.resize(logits.rows(), logits.cols());
  for (Index j = 0; j < logits.cols(); ++j) {
    const double top = logits.col(j).maxCoeff();
    out.col(j) = (logits.col(j).array() - top).exp();
    out.col(j) /= out.col(j).sum();
  }
}

double bce_loss(const MatrixX& probs, const MatrixX& labels) {
  const auto p = probs.array().min(1.0 - kProbClamp).max(kProbClamp);
  const auto y = labels.array();
  const double total =
      -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum();
  return total / static_cast<double>(probs.size());
}

void bce_grad(const MatrixX& probs, const MatrixX& labels, MatrixX& dprobs) {
  const double inv = 1.0 / static_cast<double>(probs.size());
  dprobs.resize(probs.rows(), probs.cols());
  for (Index j = 0; j < probs.cols(); ++j) {
    for (Index i = 0; i < probs.rows(); ++i) {
      const double p = probs(i, j);
      if (p <= kProbClamp || p >= 1.0 - kProbClamp) {
        dprobs(i, j) = 0.0;  // clamp saturated; constant loss locally
        continue;
      }
      const double y = labels(i, j);
      dprobs(i, j) = inv * (p - y) / (p * (1.0 - p));
    }
  }
}

DenseLayer DenseLayer::make(Index in, Index out, Activation act,
                            std::uint64_t seed, double tau) {
  DenseLayer layer;
  layer.W = glorot_init(in, out, derive_seed(seed, 0));
  // Biases share the layer's Glorot bounds, drawn from a sibling stream.
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Rng rng(derive_seed(seed, 1));
  layer.b.resize(out);
  for (Index i = 0; i < out; ++i) layer.b[i] = rng.uniform(-limit, limit);
  layer.gW = MatrixX::Zero(out, in);
  layer.gb = VectorX::Zero(out);
  layer.act = act;
  layer.tau = tau;
  return layer;
}

void DenseLayer::zero_grad() {
  gW.setZero();
  gb.setZero();
}

void dense_forward(const DenseLayer& layer, const MatrixX& x, DenseCache& cache) {
  cache.a.resize(layer.fan_out(), x.cols());
  cache.a.noalias() = layer.W * x;
  cache.a.colwise() += layer.b;
  switch (layer.act) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      cache.a = cache.a.cwiseMax(0.0);
      break;
    case Activation::Sigmoid:
      cache.a = ((-cache.a.array()).exp() + 1.0).inverse();
      break;
    case Activation::Tanh:
      cache.a = cache.a.array().tanh();
      break;
    case Activation::Softmax: {
      MatrixX z = cache.a;
      softmax_columns(z, cache.a);
      break;
    }
    case Activation::SparseSoftmax: {
      MatrixX z = cache.a;
      softmax_columns(z, cache.s);
      cache.a.array() =
          cache.s.array() * (cache.s.array() >= layer.tau).cast<double>();
      break;
    }
  }
}

void dense_backward(DenseLayer& layer, const MatrixX& x, const DenseCache& cache,
                    MatrixX& da, MatrixX* dx) {
  // Turn da into dZ in place.
  switch (layer.act) {
    case Activation::Identity:
      break;
    case Activation::Relu:
      da.array() *= (cache.a.array() > 0.0).cast<double>();
      break;
    case Activation::Sigmoid:
      da.array() *= cache.a.array() * (1.0 - cache.a.array());
      break;
    case Activation::Tanh:
      da.array() *= 1.0 - cache.a.array().square();
      break;
    case Activation::Softmax: {
      for (Index j = 0; j < da.cols(); ++j) {
        const double inner = cache.a.col(j).dot(da.col(j));
        da.col(j) = cache.a.col(j).array() * (da.col(j).array() - inner);
      }
      break;
    }
    case Activation::SparseSoftmax: {
      // Masked entries are constants: their upstream gradient is dropped;
      // survivors flow through the dense softmax Jacobian.
      da.array() *= (cache.s.array() >= layer.tau).cast<double>();
      for (Index j = 0; j < da.cols(); ++j) {
        const double inner = cache.s.col(j).dot(da.col(j));
        da.col(j) = cache.s.col(j).array() * (da.col(j).array() - inner);
      }
      break;
    }
  }
  layer.gW.noalias() += da * x.transpose();
  layer.gb.noalias() += da.rowwise().sum();
  if (dx != nullptr) {
    dx->resize(layer.fan_in(), da.cols());
    dx->noalias() = layer.W.transpose() * da;
  }
}

void append_params(std::vector<ParamView>& out, DenseLayer& layer,
                   const std::string& name) {
  out.push_back({layer.W.data(), layer.gW.data(), layer.W.size(), name + ".W"});
  out.push_back({layer.b.data(), layer.gb.data(), layer.b.size(), name + ".b"});
}

Index total_size(const std::vector<ParamView>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.size;
  return n;
}

VectorX snapshot(const std::vector<ParamView>& params) {
  VectorX out(total_size(params));
  Index at = 0;
  for (const auto& p : params) {
    out.segment(at, p.size) = Eigen::Map<const VectorX>(p.value, p.size);
    at += p.size;
  }
  return out;
}

void restore(const std::vector<ParamView>& params, const VectorX& stored) {
  if (stored.size() != total_size(params)) {
    throw std::invalid_argument("snapshot size does not match parameter set");
  }
  Index at = 0;
  for (const auto& p : params) {
    Eigen::Map<VectorX>(p.value, p.size) = stored.segment(at, p.size);
    at += p.size;
  }
}

void AdamState::step(const std::vector<ParamView>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = VectorX::Zero(params[i].size);
      v_[i] = VectorX::Zero(params[i].size);
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adam state attached to a different parameter set");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    Eigen::Map<const VectorX> g(p.grad, p.size);
    if (!g.allFinite()) {
      throw TrainingDiverged("non-finite gradient in block " + p.name);
    }
    m_[i] = kAdamBeta1 * m_[i] + (1.0 - kAdamBeta1) * g;
    v_[i].array() = kAdamBeta2 * v_[i].array() + (1.0 - kAdamBeta2) * g.array().square();
    Eigen::Map<VectorX> value(p.value, p.size);
    value.array() -=
        lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + kAdamEps);
  }
}

Mlp::Mlp(Index input, const std::vector<Index>& hidden, Index heads,
         std::uint64_t seed, Activation hidden_act) {
  if (input < 1 || heads < 1 || hidden.empty()) {
    throw std::invalid_argument("mlp needs input >= 1, heads >= 1 and a hidden stack");
  }
  Index in = input;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    hidden_.push_back(DenseLayer::make(in, hidden[i], hidden_act,
                                       derive_seed(seed, i)));
    in = hidden[i];
  }
  for (Index t = 0; t < heads; ++t) {
    heads_.push_back(DenseLayer::make(in, 1, Activation::Sigmoid,
                                      derive_seed(seed, 0x100 + static_cast<std::uint64_t>(t))));
  }
  hcache_.resize(hidden_.size());
  headcache_.resize(static_cast<std::size_t>(heads));
}

void Mlp::forward(const MatrixX& x) {
  const MatrixX* in = &x;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    dense_forward(hidden_[i], *in, hcache_[i]);
    in = &hcache_[i].a;
  }
  out_.resize(static_cast<Index>(heads_.size()), x.cols());
  for (std::size_t t = 0; t < heads_.size(); ++t) {
    dense_forward(heads_[t], *in, headcache_[t]);
    out_.row(static_cast<Index>(t)) = headcache_[t].a.row(0);
  }
}

double Mlp::forward_backward(const MatrixX& x, const MatrixX& y) {
  forward(x);
  for (auto& l : hidden_) l.zero_grad();
  for (auto& l : heads_) l.zero_grad();
  const double loss = bce_loss(out_, y);
  bce_grad(out_, y, dout_);

  const MatrixX& last = hidden_.empty() ? x : hcache_.back().a;
  dback_.setZero(last.rows(), x.cols());
  for (std::size_t t = 0; t < heads_.size(); ++t) {
    MatrixX da = dout_.row(static_cast<Index>(t));
    dense_backward(heads_[t], last, headcache_[t], da, &dhead_in_);
    dback_ += dhead_in_;
  }
  for (std::size_t i = hidden_.size(); i-- > 0;) {
    const MatrixX& in = i == 0 ? x : hcache_[i - 1].a;
    if (i == 0) {
      dense_backward(hidden_[i], in, hcache_[i], dback_, nullptr);
    } else {
      dense_backward(hidden_[i], in, hcache_[i], dback_, &dtmp_);
      dback_.swap(dtmp_);
    }
  }
  return loss;
}

double Mlp::eval_loss(const MatrixX& x, const MatrixX& y) {
  forward(x);
  return bce_loss(out_, y);
}

MatrixX Mlp::predict(const MatrixX& x) {
  forward(x);
  return out_;
}

std::vector<ParamView> Mlp::params() {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    append_params(out, hidden_[i], "hidden" + std::to_string(i));
  }
  for (std::size_t t = 0; t < heads_.size(); ++t) {
    append_params(out, heads_[t], "head" + std::to_string(t));
  }
  return out;
}

std::vector<Index> Mlp::hidden_sizes() const {
  std::vector<Index> sizes;
  for (const auto& l : hidden_) sizes.push_back(l.fan_out());
  return sizes;
}

void Mlp::save(std::ostream& os) const {
  os.write(kCheckpointMagic, 4);
  io::put_u8(os, kCheckpointVersion);
  io::put_u8(os, 1);  // network kind: mlp
  io::put_u64(os, static_cast<std::uint64_t>(input_dim()));
  io::put_u8(os, static_cast<std::uint8_t>(hidden_.front().act));
  io::put_u64(os, hidden_.size());
  for (const auto& l : hidden_) io::put_u64(os, static_cast<std::uint64_t>(l.fan_out()));
  io::put_u64(os, heads_.size());
  for (const auto& l : hidden_) {
    io::put_block(os, l.W.data(), l.W.size());
    io::put_block(os, l.b.data(), l.b.size());
  }
  for (const auto& l : heads_) {
    io::put_block(os, l.W.data(), l.W.size());
    io::put_block(os, l.b.data(), l.b.size());
  }
}

Mlp Mlp::load(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic", 0);
  }
  if (io::get_u8(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version", 4);
  if (io::get_u8(is) != 1) throw FormatError("checkpoint is not an mlp", 5);
  const auto input = static_cast<Index>(io::get_u64(is));
  const auto act = static_cast<Activation>(io::get_u8(is));
  const auto depth = io::get_u64(is);
  std::vector<Index> sizes;
  for (std::uint64_t i = 0; i < depth; ++i) sizes.push_back(static_cast<Index>(io::get_u64(is)));
  const auto heads = static_cast<Index>(io::get_u64(is));
  Mlp mlp(input, sizes, heads, 0, act);
  for (auto& l : mlp.hidden_) {
    io::get_block(is, l.W.data(), l.W.size());
    io::get_block(is, l.b.data(), l.b.size());
  }
  for (auto& l : mlp.heads_) {
    io::get_block(is, l.W.data(), l.W.size());
    io::get_block(is, l.b.data(), l.b.size());
  }
  return mlp;
}

}  // namespace pufmoe

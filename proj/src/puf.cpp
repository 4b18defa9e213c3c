#include "pufmoe/puf.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pufmoe {
namespace {

// Sub-stream tags under one instance seed. Chains use their index directly;
// loop placement draws from a far-away tag range so adding/removing loops
// never perturbs the delay parameters.
constexpr std::uint64_t kLoopTag = 0x10000;

std::vector<FfLoop> draw_loops(Index n, int count, Rng& rng) {
  // Uniform over (tap < insert) pairs, insert stages pairwise distinct.
  std::vector<FfLoop> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    const Index a = 1 + static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(n)));
    const Index b = 1 + static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(n)));
    if (a == b) continue;
    const FfLoop loop{std::min(a, b), std::max(a, b)};
    const bool taken = std::any_of(out.begin(), out.end(), [&](const FfLoop& l) {
      return l.insert == loop.insert;
    });
    if (taken) continue;
    out.push_back(loop);
  }
  std::sort(out.begin(), out.end(),
            [](const FfLoop& x, const FfLoop& y) { return x.insert < y.insert; });
  return out;
}

// Evaluates one delay line. `loops` overrides challenge bits at insert
// stages with the sign of the delta recorded at the matching tap stage.
// Returns the final delta; `trace` (when non-null) receives all n deltas.
double run_chain(const ArbiterChain& chain, const std::uint8_t* bits,
                 const std::vector<FfLoop>& loops, VectorX* trace) {
  const Index n = chain.stages();
  const VectorX& sigma = chain.sigma();
  const VectorX& kappa = chain.kappa();
  double delta = 0.0;
  if (loops.empty() && trace == nullptr) {
    for (Index i = 0; i < n; ++i) {
      delta = bits[i] ? -delta + kappa[i] : delta + sigma[i];
    }
    return delta;
  }
  // Taps always precede their insert stage, so tap deltas are available in
  // the trace by the time the insert stage is reached.
  VectorX local;
  VectorX& tr = trace ? *trace : local;
  tr.resize(n);
  std::size_t next_loop = 0;
  for (Index i = 0; i < n; ++i) {
    std::uint8_t bit = bits[i];
    if (next_loop < loops.size() && loops[next_loop].insert == i + 1) {
      bit = tr[loops[next_loop].tap - 1] > 0.0 ? 1 : 0;
      ++next_loop;
    }
    delta = bit ? -delta + kappa[i] : delta + sigma[i];
    tr[i] = delta;
  }
  return delta;
}

int threshold(double delta) { return delta > 0.0 ? 1 : 0; }

int parse_int_token(std::string_view token, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw std::invalid_argument("bad puf spec token '" + std::string(token) +
                                "' in '" + std::string(whole) + "'");
  }
  return value;
}

}  // namespace

ArbiterChain::ArbiterChain(Index n, std::uint64_t seed) : seed_(seed) {
  if (n < 1) throw std::invalid_argument("arbiter chain needs n >= 1 stages");
  Rng rng(seed);
  sigma_.resize(n);
  kappa_.resize(n);
  // Interleaved draws: one (sigma, kappa) pair per stage.
  for (Index i = 0; i < n; ++i) {
    sigma_[i] = rng.normal();
    kappa_[i] = rng.normal();
  }
}

ArbiterChain::ArbiterChain(VectorX sigma, VectorX kappa)
    : sigma_(std::move(sigma)), kappa_(std::move(kappa)), seed_(0) {
  if (sigma_.size() != kappa_.size() || sigma_.size() < 1) {
    throw std::invalid_argument("sigma and kappa must share a positive length");
  }
}

ChainEval eval_chain(const ArbiterChain& chain, const BinaryVector& challenge) {
  if (challenge.size() != chain.stages()) {
    throw std::invalid_argument("challenge length does not match stage count");
  }
  ChainEval result;
  static const std::vector<FfLoop> no_loops;
  const double delta =
      run_chain(chain, challenge.data(), no_loops, &result.trace);
  result.bit = threshold(delta);
  return result;
}

std::pair<VectorX, Scalar> to_linear_weights(const ArbiterChain& chain) {
  // With alpha_i = (sigma_i - kappa_i)/2 and beta_i = (sigma_i + kappa_i)/2,
  // unrolling the stage recursion over suffix products x_i = prod_{j>=i} phi_j
  // gives delta_n = sum_i (alpha_i + beta_{i-1}) x_i + beta_n.
  const Index n = chain.stages();
  const VectorX alpha = 0.5 * (chain.sigma() - chain.kappa());
  const VectorX beta = 0.5 * (chain.sigma() + chain.kappa());
  VectorX w(n);
  w[0] = alpha[0];
  for (Index i = 1; i < n; ++i) w[i] = alpha[i] + beta[i - 1];
  return {w, beta[n - 1]};
}

PufSpec parse_puf_spec(std::string_view text, Index n, std::uint64_t seed) {
  PufSpec spec;
  spec.n = n;
  spec.seed = seed;
  if (text == "apuf") {
    spec.kind = PufKind::Apuf;
    spec.k = 1;
    return spec;
  }
  if (text.rfind("xor:", 0) == 0) {
    spec.kind = PufKind::XorApuf;
    spec.k = parse_int_token(text.substr(4), text);
    if (spec.k < 1) throw std::invalid_argument("xor width must be >= 1");
    return spec;
  }
  if (text.rfind("ff:", 0) == 0) {
    spec.kind = PufKind::FfXorApuf;
    const std::string_view body = text.substr(3);
    const auto dash = body.find('-');
    const auto colon = body.find(':');
    if (dash == std::string_view::npos || colon == std::string_view::npos ||
        colon < dash) {
      throw std::invalid_argument("bad ff spec '" + std::string(text) +
                                  "', expected ff:K-L:homo|hetero");
    }
    spec.k = parse_int_token(body.substr(0, dash), text);
    spec.loops = parse_int_token(body.substr(dash + 1, colon - dash - 1), text);
    const std::string_view mode = body.substr(colon + 1);
    if (mode == "homo") {
      spec.homogeneous = true;
    } else if (mode == "hetero") {
      spec.homogeneous = false;
    } else {
      throw std::invalid_argument("bad ff mode '" + std::string(mode) +
                                  "', expected homo or hetero");
    }
    if (spec.k < 1 || spec.loops < 0) {
      throw std::invalid_argument("bad ff parameters in '" + std::string(text) + "'");
    }
    return spec;
  }
  if (text.rfind("ipuf:", 0) == 0) {
    spec.kind = PufKind::InterposePuf;
    const std::string_view body = text.substr(5);
    const auto comma = body.find(',');
    if (comma == std::string_view::npos) {
      throw std::invalid_argument("bad ipuf spec '" + std::string(text) +
                                  "', expected ipuf:X,Y");
    }
    spec.upper = parse_int_token(body.substr(0, comma), text);
    spec.lower = parse_int_token(body.substr(comma + 1), text);
    if (spec.upper < 1 || spec.lower < 1) {
      throw std::invalid_argument("ipuf chain counts must be >= 1");
    }
    return spec;
  }
  throw std::invalid_argument("unknown puf spec '" + std::string(text) + "'");
}

std::string to_string(const PufSpec& spec) {
  switch (spec.kind) {
    case PufKind::Apuf:
      return "apuf";
    case PufKind::XorApuf:
      return "xor:" + std::to_string(spec.k);
    case PufKind::FfXorApuf:
      return "ff:" + std::to_string(spec.k) + "-" + std::to_string(spec.loops) +
             (spec.homogeneous ? ":homo" : ":hetero");
    case PufKind::InterposePuf:
      return "ipuf:" + std::to_string(spec.upper) + "," +
             std::to_string(spec.lower);
  }
  return "?";
}

PufInstance::PufInstance(const PufSpec& spec) : spec_(spec) {
  if (spec.n < 1) throw std::invalid_argument("puf spec needs n >= 1");
  if (spec.k < 1) throw std::invalid_argument("puf spec needs k >= 1");

  const auto add_chains = [&](int count, Index stages, int first_index) {
    for (int i = 0; i < count; ++i) {
      chains_.emplace_back(stages, derive_seed(spec.seed, static_cast<std::uint64_t>(
                                                    first_index + i)));
    }
  };

  switch (spec.kind) {
    case PufKind::Apuf:
      add_chains(1, spec.n, 0);
      break;
    case PufKind::XorApuf:
      add_chains(spec.k, spec.n, 0);
      break;
    case PufKind::FfXorApuf: {
      if (spec.loops > 0 && spec.n < 2) {
        throw std::invalid_argument("ff loops need n >= 2");
      }
      if (spec.loops >= spec.n) {
        throw std::invalid_argument("ff loop count must be < n");
      }
      add_chains(spec.k, spec.n, 0);
      loops_.resize(chains_.size());
      if (spec.homogeneous) {
        Rng rng(derive_seed(spec.seed, kLoopTag));
        const auto shared = draw_loops(spec.n, spec.loops, rng);
        for (auto& per_chain : loops_) per_chain = shared;
      } else {
        for (std::size_t c = 0; c < chains_.size(); ++c) {
          Rng rng(derive_seed(spec.seed, kLoopTag + 1 + c));
          loops_[c] = draw_loops(spec.n, spec.loops, rng);
        }
      }
      break;
    }
    case PufKind::InterposePuf:
      add_chains(spec.upper, spec.n, 0);
      add_chains(spec.lower, spec.n + 1, spec.upper);
      break;
  }
  if (loops_.empty()) loops_.resize(chains_.size());
}

PufInstance::PufInstance(const PufSpec& spec, std::vector<ArbiterChain> chains,
                         std::vector<std::vector<FfLoop>> loops)
    : spec_(spec), chains_(std::move(chains)), loops_(std::move(loops)) {
  const std::size_t expected =
      spec.kind == PufKind::InterposePuf
          ? static_cast<std::size_t>(spec.upper + spec.lower)
          : static_cast<std::size_t>(spec.kind == PufKind::Apuf ? 1 : spec.k);
  if (chains_.size() != expected) {
    throw std::invalid_argument("chain count does not match spec");
  }
  for (std::size_t c = 0; c < chains_.size(); ++c) {
    const Index want = spec.kind == PufKind::InterposePuf &&
                               c >= static_cast<std::size_t>(spec.upper)
                           ? spec.n + 1
                           : spec.n;
    if (chains_[c].stages() != want) {
      throw std::invalid_argument("chain length does not match spec");
    }
  }
  if (loops_.empty()) loops_.resize(chains_.size());
  if (loops_.size() != chains_.size()) {
    throw std::invalid_argument("per-chain loop list count does not match");
  }
  for (auto& per_chain : loops_) {
    for (const auto& loop : per_chain) {
      if (!(loop.tap >= 1 && loop.tap < loop.insert && loop.insert <= spec.n)) {
        throw std::invalid_argument("loop pair violates 1 <= tap < insert <= n");
      }
    }
    // run_chain consumes loops in insert order.
    std::sort(per_chain.begin(), per_chain.end(),
              [](const FfLoop& x, const FfLoop& y) { return x.insert < y.insert; });
  }
}

int PufInstance::eval_with_noise(const BinaryVector& challenge,
                                 double noise_sigma, Rng* noise) const {
  if (challenge.size() != spec_.n) {
    throw std::invalid_argument("challenge length does not match stage count");
  }
  const auto noisy = [&](double delta) {
    return noise ? delta + noise_sigma * noise->normal() : delta;
  };

  if (spec_.kind == PufKind::InterposePuf) {
    int upper_parity = 0;
    for (int c = 0; c < spec_.upper; ++c) {
      upper_parity ^= threshold(
          noisy(run_chain(chains_[c], challenge.data(), loops_[c], nullptr)));
    }
    // Lower challenge: upper response interposed after stage floor(n/2).
    const Index half = spec_.n / 2;
    BinaryVector lower(spec_.n + 1);
    lower.head(half) = challenge.head(half);
    lower[half] = static_cast<std::uint8_t>(upper_parity);
    lower.tail(spec_.n - half) = challenge.tail(spec_.n - half);
    int parity = 0;
    for (int c = 0; c < spec_.lower; ++c) {
      const auto& chain = chains_[static_cast<std::size_t>(spec_.upper + c)];
      parity ^= threshold(noisy(run_chain(chain, lower.data(),
                                          loops_[static_cast<std::size_t>(spec_.upper + c)],
                                          nullptr)));
    }
    return parity;
  }

  int parity = 0;
  for (std::size_t c = 0; c < chains_.size(); ++c) {
    parity ^= threshold(
        noisy(run_chain(chains_[c], challenge.data(), loops_[c], nullptr)));
  }
  return parity;
}

int PufInstance::eval(const BinaryVector& challenge) const {
  return eval_with_noise(challenge, 0.0, nullptr);
}

int PufInstance::eval_noisy(const BinaryVector& challenge, double noise_sigma,
                            Rng& noise) const {
  return eval_with_noise(challenge, noise_sigma, &noise);
}

BinaryVector PufInstance::eval_batch(const BinaryMatrix& challenges) const {
  if (challenges.rows() != spec_.n) {
    throw std::invalid_argument("challenge length does not match stage count");
  }
  BinaryVector out(challenges.cols());
  const Index count = challenges.cols();
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < count; ++j) {
    out[j] = static_cast<std::uint8_t>(eval(challenges.col(j)));
  }
  return out;
}

}  // namespace pufmoe

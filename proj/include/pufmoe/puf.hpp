#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pufmoe/rng.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

/// One arbiter delay line under the additive delay model. Per stage i the
/// accumulated top/bottom delay difference evolves as
///   c_i = 0 (straight):  delta_i =  delta_{i-1} + sigma_i
///   c_i = 1 (crossed):   delta_i = -delta_{i-1} + kappa_i
/// and the response is [delta_n > 0] (delta_n == 0 resolves to 0).
/// Parameters are i.i.d. standard normal, fixed by (n, seed), immutable.
class ArbiterChain {
 public:
  ArbiterChain(Index n, std::uint64_t seed);
  /// Explicit delay parameters (analysis and tests).
  ArbiterChain(VectorX sigma, VectorX kappa);

  Index stages() const { return sigma_.size(); }
  std::uint64_t seed() const { return seed_; }
  const VectorX& sigma() const { return sigma_; }
  const VectorX& kappa() const { return kappa_; }

 private:
  VectorX sigma_;
  VectorX kappa_;
  std::uint64_t seed_;
};

inline ArbiterChain new_chain(Index n, std::uint64_t seed) {
  return ArbiterChain(n, seed);
}

struct ChainEval {
  int bit = 0;
  VectorX trace;  // delta after every stage, length n
};

ChainEval eval_chain(const ArbiterChain& chain, const BinaryVector& challenge);

/// Linear-threshold form of a plain chain: response == [<w, phi(c)> + b > 0]
/// where phi is the parity feature transform (dataset module).
std::pair<VectorX, Scalar> to_linear_weights(const ArbiterChain& chain);

enum class PufKind { Apuf, XorApuf, FfXorApuf, InterposePuf };

/// Declarative PUF description. Text syntax (CLI):
///   "apuf" | "xor:K" | "ff:K-L:homo" | "ff:K-L:hetero" | "ipuf:X,Y"
/// with the stage count and seed supplied separately.
struct PufSpec {
  PufKind kind = PufKind::Apuf;
  Index n = 0;
  std::uint64_t seed = 0;
  int k = 1;                 // XOR width (upper width for kind-specific use)
  int loops = 0;             // FF only
  bool homogeneous = true;   // FF only
  int upper = 1;             // Interpose only
  int lower = 1;             // Interpose only
};

PufSpec parse_puf_spec(std::string_view text, Index n, std::uint64_t seed);
std::string to_string(const PufSpec& spec);

/// A feed-forward loop: the arbiter tapped after stage `tap` overrides the
/// challenge bit consumed by stage `insert` (1-based, tap < insert).
struct FfLoop {
  Index tap = 0;
  Index insert = 0;
};

/// Instantiated composition of chains. Immutable after construction and
/// safe to share across threads; evaluation is a pure function.
class PufInstance {
 public:
  explicit PufInstance(const PufSpec& spec);
  /// Assembles an instance from explicit parts. Chain counts and lengths
  /// must match the spec; `loops` may be empty for loop-free kinds.
  PufInstance(const PufSpec& spec, std::vector<ArbiterChain> chains,
              std::vector<std::vector<FfLoop>> loops);

  const PufSpec& spec() const { return spec_; }
  const std::vector<ArbiterChain>& chains() const { return chains_; }
  /// Per-chain loop lists (empty for non-FF kinds).
  const std::vector<std::vector<FfLoop>>& loops() const { return loops_; }

  int eval(const BinaryVector& challenge) const;
  /// Optional measurement noise: a N(0, sigma) term is added to every
  /// chain's final delta before thresholding. Off (sigma = 0) by default
  /// everywhere else in the toolkit.
  int eval_noisy(const BinaryVector& challenge, double noise_sigma,
                 Rng& noise) const;

  /// Responses for a batch of challenges (one per column).
  BinaryVector eval_batch(const BinaryMatrix& challenges) const;

 private:
  int eval_with_noise(const BinaryVector& challenge, double noise_sigma,
                      Rng* noise) const;

  PufSpec spec_;
  std::vector<ArbiterChain> chains_;
  std::vector<std::vector<FfLoop>> loops_;
};

inline PufInstance instantiate(const PufSpec& spec) { return PufInstance(spec); }

inline int eval_puf(const PufInstance& instance, const BinaryVector& challenge) {
  return instance.eval(challenge);
}

}  // namespace pufmoe

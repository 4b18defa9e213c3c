#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>

#include "pufmoe/dataset.hpp"
#include "pufmoe/puf.hpp"
#include "pufmoe/rng.hpp"

using namespace pufmoe;

namespace {

BinaryVector challenge_from_value(Index n, std::uint64_t value) {
  BinaryVector c(n);
  for (Index i = 0; i < n; ++i) c[i] = (value >> i) & 1u;
  return c;
}

BinaryVector random_challenge(Index n, Rng& rng) {
  BinaryVector c(n);
  for (Index i = 0; i < n; ++i) c[i] = static_cast<std::uint8_t>(rng.next_u64() & 1u);
  return c;
}

// Parity of chain bits expressed as a product over {+1,-1} responses with
// r = 1 - 2*bit, the same mapping the feature transform uses. For odd k this
// is literally "XOR bit = [product of final deltas > 0]".
int product_sign_oracle(const std::vector<double>& deltas) {
  double prod = 1.0;
  for (const double d : deltas) prod *= d > 0.0 ? -1.0 : 1.0;
  return prod < 0.0 ? 1 : 0;
}

}  // namespace

TEST_CASE("new_chain is deterministic per (n, seed)") {
  const ArbiterChain a = new_chain(64, 1234);
  const ArbiterChain b = new_chain(64, 1234);
  CHECK(a.sigma() == b.sigma());
  CHECK(a.kappa() == b.kappa());

  const ArbiterChain c = new_chain(64, 1235);
  CHECK(a.sigma() != c.sigma());
  CHECK(a.kappa() != c.kappa());
}

TEST_CASE("new_chain rejects n == 0") {
  CHECK_THROWS_AS(new_chain(0, 7), std::invalid_argument);
}

TEST_CASE("new_chain draws look standard normal at n = 1000") {
  const ArbiterChain chain = new_chain(1000, 99);
  for (const VectorX& v : {chain.sigma(), chain.kappa()}) {
    const double mean = v.mean();
    const double var = (v.array() - mean).square().sum() / double(v.size() - 1);
    CHECK(std::abs(mean) <= 0.15);
    CHECK(std::abs(var - 1.0) <= 0.2);
  }
}

TEST_CASE("eval_chain follows the stage recursion") {
  SUBCASE("all-straight path sums sigma") {
    const Index n = 16;
    const ArbiterChain chain(VectorX::Ones(n), VectorX::Random(n));
    const auto [bit, trace] = eval_chain(chain, BinaryVector::Zero(n));
    CHECK(bit == 1);
    CHECK(trace[n - 1] == doctest::Approx(double(n)));
  }

  SUBCASE("two-step hand case") {
    VectorX sigma(2), kappa(2);
    sigma << 1.0, -0.5;
    kappa << 0.3, 0.2;
    const ArbiterChain chain(sigma, kappa);
    BinaryVector c(2);
    c << 0, 1;
    const auto [bit, trace] = eval_chain(chain, c);
    CHECK(trace[0] == doctest::Approx(1.0));
    CHECK(trace[1] == doctest::Approx(-0.8));
    CHECK(bit == 0);
  }

  SUBCASE("delta exactly zero resolves to bit 0") {
    VectorX sigma(2), kappa(2);
    sigma << 1.0, -1.0;
    kappa << 0.4, 0.4;
    const ArbiterChain chain(sigma, kappa);
    const auto [bit, trace] = eval_chain(chain, BinaryVector::Zero(2));
    CHECK(trace[1] == 0.0);
    CHECK(bit == 0);
  }

  SUBCASE("length mismatch is rejected") {
    const ArbiterChain chain = new_chain(8, 1);
    CHECK_THROWS_AS(eval_chain(chain, BinaryVector::Zero(7)), std::invalid_argument);
  }
}

TEST_CASE("to_linear_weights closed form at n = 1") {
  VectorX sigma(1), kappa(1);
  sigma << 0.7;
  kappa << -0.3;
  const ArbiterChain chain(sigma, kappa);
  const auto [w, b] = to_linear_weights(chain);
  CHECK(w[0] == doctest::Approx((0.7 + 0.3) / 2.0));
  CHECK(b == doctest::Approx((0.7 - 0.3) / 2.0));
  for (const std::uint64_t v : {0ull, 1ull}) {
    const BinaryVector c = challenge_from_value(1, v);
    const FeatureVector x = transform_challenge(c);
    const int linear_bit = w.dot(x) + b > 0.0 ? 1 : 0;
    CHECK(linear_bit == eval_chain(chain, c).bit);
  }
}

TEST_CASE("to_linear_weights matches eval_chain exhaustively") {
  SUBCASE("n = 8, one random chain") {
    const ArbiterChain chain = new_chain(8, 42);
    const auto [w, b] = to_linear_weights(chain);
    for (std::uint64_t v = 0; v < 256; ++v) {
      const BinaryVector c = challenge_from_value(8, v);
      const int linear_bit = w.dot(transform_challenge(c)) + b > 0.0 ? 1 : 0;
      CHECK(linear_bit == eval_chain(chain, c).bit);
    }
  }

  SUBCASE("n = 10, twenty random chains") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const ArbiterChain chain = new_chain(10, 7000 + seed);
      const auto [w, b] = to_linear_weights(chain);
      int mismatches = 0;
      for (std::uint64_t v = 0; v < 1024; ++v) {
        const BinaryVector c = challenge_from_value(10, v);
        const int linear_bit = w.dot(transform_challenge(c)) + b > 0.0 ? 1 : 0;
        mismatches += linear_bit != eval_chain(chain, c).bit;
      }
      CHECK(mismatches == 0);
    }
  }
}

TEST_CASE("eval_puf XOR composition") {
  SUBCASE("two chains from the same seed cancel") {
    const PufSpec spec = parse_puf_spec("xor:2", 64, 5);
    const ArbiterChain chain = new_chain(64, 77);
    const PufInstance instance(spec, {chain, chain}, {});
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      CHECK(instance.eval(random_challenge(64, rng)) == 0);
    }
  }

  SUBCASE("k = 1 equals the bare chain on all n = 8 inputs") {
    const PufSpec spec = parse_puf_spec("xor:1", 8, 11);
    const PufInstance instance(spec);
    for (std::uint64_t v = 0; v < 256; ++v) {
      const BinaryVector c = challenge_from_value(8, v);
      CHECK(instance.eval(c) == eval_chain(instance.chains()[0], c).bit);
    }
  }

  SUBCASE("k in {1,2,3}: parity equals the product-sign oracle, n = 8") {
    for (int k = 1; k <= 3; ++k) {
      const PufSpec spec = parse_puf_spec("xor:" + std::to_string(k), 8, 123);
      const PufInstance instance(spec);
      for (std::uint64_t v = 0; v < 256; ++v) {
        const BinaryVector c = challenge_from_value(8, v);
        std::vector<double> deltas;
        for (const auto& chain : instance.chains()) {
          deltas.push_back(eval_chain(chain, c).trace[7]);
        }
        CHECK(instance.eval(c) == product_sign_oracle(deltas));
      }
    }
  }
}

TEST_CASE("feed-forward with zero loops is exactly the XOR puf") {
  const PufSpec ff = parse_puf_spec("ff:2-0:homo", 10, 31);
  const PufSpec plain = parse_puf_spec("xor:2", 10, 31);
  const PufInstance a(ff);
  const PufInstance b(plain);
  for (std::uint64_t v = 0; v < 1024; ++v) {
    const BinaryVector c = challenge_from_value(10, v);
    CHECK(a.eval(c) == b.eval(c));
  }
}

TEST_CASE("feed-forward loop placement") {
  SUBCASE("pairs are valid and inserts are distinct") {
    for (const char* text : {"ff:2-3:homo", "ff:3-2:hetero"}) {
      const PufInstance instance(parse_puf_spec(text, 64, 555));
      for (const auto& per_chain : instance.loops()) {
        std::set<Index> inserts;
        for (const auto& loop : per_chain) {
          CHECK(loop.tap >= 1);
          CHECK(loop.tap < loop.insert);
          CHECK(loop.insert <= 64);
          CHECK(inserts.insert(loop.insert).second);
        }
      }
    }
  }

  SUBCASE("homogeneous shares positions, heterogeneous draws per chain") {
    const PufInstance homo(parse_puf_spec("ff:4-2:homo", 64, 9));
    for (std::size_t c = 1; c < homo.loops().size(); ++c) {
      CHECK(homo.loops()[c].size() == homo.loops()[0].size());
      for (std::size_t l = 0; l < homo.loops()[0].size(); ++l) {
        CHECK(homo.loops()[c][l].tap == homo.loops()[0][l].tap);
        CHECK(homo.loops()[c][l].insert == homo.loops()[0][l].insert);
      }
    }
    const PufInstance hetero(parse_puf_spec("ff:4-2:hetero", 64, 9));
    bool any_difference = false;
    for (std::size_t c = 1; c < hetero.loops().size(); ++c) {
      for (std::size_t l = 0; l < 2; ++l) {
        any_difference |= hetero.loops()[c][l].tap != hetero.loops()[0][l].tap ||
                          hetero.loops()[c][l].insert != hetero.loops()[0][l].insert;
      }
    }
    CHECK(any_difference);
  }

  SUBCASE("a loop actually rewires the insert stage") {
    // With one loop the response must differ from the loop-free chain for
    // some challenge (the inserted bit overrides the external one).
    const PufInstance ff(parse_puf_spec("ff:1-1:homo", 16, 2024));
    const PufInstance plain(parse_puf_spec("xor:1", 16, 2024));
    bool any_difference = false;
    for (std::uint64_t v = 0; v < 65536 && !any_difference; ++v) {
      const BinaryVector c = challenge_from_value(16, v);
      any_difference = ff.eval(c) != plain.eval(c);
    }
    CHECK(any_difference);
  }
}

TEST_CASE("interpose puf wiring") {
  const PufSpec spec = parse_puf_spec("ipuf:1,2", 12, 77);
  const PufInstance instance(spec);
  REQUIRE(instance.chains().size() == 3);
  CHECK(instance.chains()[0].stages() == 12);
  CHECK(instance.chains()[1].stages() == 13);
  CHECK(instance.chains()[2].stages() == 13);

  // Lower layer behaves as a 13-stage XOR puf fed the interposed challenge.
  const PufSpec lower_spec = parse_puf_spec("xor:2", 13, 0);
  const PufInstance lower(lower_spec,
                          {instance.chains()[1], instance.chains()[2]}, {});
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const BinaryVector c = random_challenge(12, rng);
    const int upper = eval_chain(instance.chains()[0], c).bit;
    BinaryVector interposed(13);
    interposed.head(6) = c.head(6);
    interposed[6] = static_cast<std::uint8_t>(upper);
    interposed.tail(6) = c.tail(6);
    CHECK(instance.eval(c) == lower.eval(interposed));
  }
}

TEST_CASE("responses are deterministic and roughly balanced") {
  const PufSpec spec = parse_puf_spec("apuf", 64, 4242);
  const PufInstance a(spec);
  const PufInstance b(spec);
  Rng rng(8);
  long ones = 0;
  const int total = 100000;
  for (int i = 0; i < total; ++i) {
    const BinaryVector c = random_challenge(64, rng);
    const int bit = a.eval(c);
    CHECK(bit == b.eval(c));
    ones += bit;
  }
  const double bias = double(ones) / double(total);
  CHECK(bias >= 0.40);
  CHECK(bias <= 0.60);
}

TEST_CASE("puf spec text syntax") {
  CHECK(parse_puf_spec("apuf", 64, 1).kind == PufKind::Apuf);
  const PufSpec x = parse_puf_spec("xor:5", 64, 1);
  CHECK(x.kind == PufKind::XorApuf);
  CHECK(x.k == 5);
  const PufSpec f = parse_puf_spec("ff:2-1:hetero", 64, 1);
  CHECK(f.kind == PufKind::FfXorApuf);
  CHECK(f.k == 2);
  CHECK(f.loops == 1);
  CHECK_FALSE(f.homogeneous);
  const PufSpec ip = parse_puf_spec("ipuf:3,4", 64, 1);
  CHECK(ip.upper == 3);
  CHECK(ip.lower == 4);

  for (const char* text : {"apuf", "xor:5", "ff:2-1:hetero", "ff:1-3:homo", "ipuf:3,4"}) {
    CHECK(to_string(parse_puf_spec(text, 64, 1)) == text);
  }

  CHECK_THROWS_AS(parse_puf_spec("xor:", 64, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_puf_spec("ff:2:homo", 64, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_puf_spec("ff:2-1:diagonal", 64, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_puf_spec("rainbow", 64, 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_puf_spec("xor:0", 64, 1), std::invalid_argument);
}

TEST_CASE("challenge length is validated for instances") {
  const PufInstance instance(parse_puf_spec("xor:2", 64, 3));
  CHECK_THROWS_AS(instance.eval(BinaryVector::Zero(63)), std::invalid_argument);
}

TEST_CASE("optional evaluation noise flips borderline responses only") {
  const PufInstance instance(parse_puf_spec("apuf", 64, 606));
  Rng crng(1);
  Rng noise(2);
  int flips = 0;
  const int total = 2000;
  for (int i = 0; i < total; ++i) {
    const BinaryVector c = random_challenge(64, crng);
    const int clean = instance.eval(c);
    const int noisy = instance.eval_noisy(c, 1e-6, noise);
    flips += clean != noisy;
  }
  CHECK(flips == 0);  // sigma far below the typical |delta| scale

  Rng noise2(3);
  Rng crng2(1);
  int big_flips = 0;
  for (int i = 0; i < total; ++i) {
    const BinaryVector c = random_challenge(64, crng2);
    big_flips += instance.eval(c) != instance.eval_noisy(c, 100.0, noise2);
  }
  CHECK(big_flips > total / 4);  // overwhelming noise decorrelates responses
}

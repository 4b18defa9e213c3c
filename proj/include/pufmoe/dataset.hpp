#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pufmoe/puf.hpp"
#include "pufmoe/types.hpp"

namespace pufmoe {

using Challenge = BinaryVector;    // entries in {0,1}
using FeatureVector = VectorX;     // entries in {-1,+1}

/// Parity feature transform: phi = 1 - 2b sends bit 0 -> +1, 1 -> -1, and
/// x_i = prod_{j>=i} phi_j (computed right to left in O(n)). Distinct
/// challenges map to distinct feature vectors.
FeatureVector transform_challenge(const Challenge& challenge);

/// Batch form; one challenge per column in, one feature column out.
void transform_challenges(const BinaryMatrix& challenges, MatrixX& features);

struct CrpMeta {
  std::vector<std::string> spec_strings;
  std::vector<std::uint64_t> puf_seeds;
  std::uint64_t challenge_seed = 0;
  std::string generator;
  std::string origin;  // "simulated" | "csv:<path>" | "crpb:<path>"
};

/// Challenges plus one response column per task, aligned row-wise. Loaded
/// and generated sets are immutable by convention and safe to share.
struct CrpSet {
  Index n = 0;
  Index tasks = 0;
  BinaryMatrix challenges;  // n x count
  BinaryMatrix responses;   // tasks x count
  CrpMeta meta;

  Index count() const { return challenges.cols(); }
};

/// Data equality (n, tasks, challenges, responses); meta is provenance and
/// deliberately excluded.
bool same_data(const CrpSet& a, const CrpSet& b);

/// Draws `count` uniform challenges from `challenge_seed` and queries every
/// spec's instance with all of them (one response column per spec). The
/// challenge stream depends only on (challenge_seed, n, count).
CrpSet generate_crps(const std::vector<PufSpec>& specs,
                     std::uint64_t challenge_seed, Index count);

/// Disjoint shuffled partition; the union equals the original multiset.
std::pair<CrpSet, CrpSet> split(const CrpSet& set, double train_fraction,
                                std::uint64_t seed);

/// Rows [begin, begin+count) as a new set.
CrpSet slice(const CrpSet& set, Index begin, Index count);

/// CRPB v1, little-endian. Header: magic "CRPB", version u8 = 1, flags
/// u8 = 0, reserved u16 = 0, n_stages u32, n_tasks u32, count u64 (24
/// bytes). Then per record ceil(n/8) challenge bytes and ceil(T/8)
/// response bytes, bit i stored LSB-first as bit (i mod 8) of byte
/// floor(i/8). Round-trips are bit-exact.
void save_crps(const CrpSet& set, const std::string& path);
CrpSet load_crps(const std::string& path);

inline std::uint64_t crpb_file_size(Index n, Index tasks, Index count) {
  return 24 + static_cast<std::uint64_t>(count) *
                  static_cast<std::uint64_t>((n + 7) / 8 + (tasks + 7) / 8);
}

/// CSV rows: n challenge bits then T response bits, comma-separated, with
/// an optional header line. Errors carry the 1-based line number.
CrpSet import_csv(const std::string& path, Index n, Index tasks);
void export_csv(const CrpSet& set, const std::string& path);

/// Feature / label blocks for the given rows (columns of the outputs).
void features_for(const CrpSet& set, std::span<const Index> rows, MatrixX& out);
void labels_for(const CrpSet& set, std::span<const Index> rows, MatrixX& out);
MatrixX features_for(const CrpSet& set, std::span<const Index> rows);
MatrixX labels_for(const CrpSet& set, std::span<const Index> rows);

}  // namespace pufmoe

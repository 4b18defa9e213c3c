#include "pufmoe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pufmoe/errors.hpp"
#include "pufmoe/rng.hpp"
#include "pufmoe/version.hpp"

namespace pufmoe {
namespace {

constexpr char kMagic[4] = {'C', 'R', 'P', 'B'};
constexpr std::uint8_t kFormatVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff),
                         static_cast<char>((v >> 8) & 0xff)};
  os.write(bytes, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

std::uint64_t get_unsigned(std::istream& is, int width, std::uint64_t offset,
                           const char* what) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    const int byte = is.get();
    if (byte == std::char_traits<char>::eof()) {
      throw FormatError(std::string("truncated file while reading ") + what,
                        offset + static_cast<std::uint64_t>(i));
    }
    v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(byte)) << (8 * i);
  }
  return v;
}

void pack_bits(const std::uint8_t* bits, Index n, std::uint8_t* bytes) {
  const Index n_bytes = (n + 7) / 8;
  std::memset(bytes, 0, static_cast<std::size_t>(n_bytes));
  for (Index i = 0; i < n; ++i) {
    bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] |
                                             ((bits[i] & 1u) << (i % 8)));
  }
}

void unpack_bits(const std::uint8_t* bytes, Index n, std::uint8_t* bits) {
  for (Index i = 0; i < n; ++i) {
    bits[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  }
}

CrpSet gather(const CrpSet& set, const std::vector<Index>& rows) {
  CrpSet out;
  out.n = set.n;
  out.tasks = set.tasks;
  out.meta = set.meta;
  out.challenges.resize(set.n, static_cast<Index>(rows.size()));
  out.responses.resize(set.tasks, static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.challenges.col(static_cast<Index>(j)) = set.challenges.col(rows[j]);
    out.responses.col(static_cast<Index>(j)) = set.responses.col(rows[j]);
  }
  return out;
}

}  // namespace

FeatureVector transform_challenge(const Challenge& challenge) {
  FeatureVector x(challenge.size());
  double prod = 1.0;
  for (Index i = challenge.size() - 1; i >= 0; --i) {
    prod = challenge[i] ? -prod : prod;
    x[i] = prod;
  }
  return x;
}

void transform_challenges(const BinaryMatrix& challenges, MatrixX& features) {
  features.resize(challenges.rows(), challenges.cols());
  for (Index j = 0; j < challenges.cols(); ++j) {
    double prod = 1.0;
    for (Index i = challenges.rows() - 1; i >= 0; --i) {
      prod = challenges(i, j) ? -prod : prod;
      features(i, j) = prod;
    }
  }
}

bool same_data(const CrpSet& a, const CrpSet& b) {
  return a.n == b.n && a.tasks == b.tasks && a.count() == b.count() &&
         a.challenges == b.challenges && a.responses == b.responses;
}

CrpSet generate_crps(const std::vector<PufSpec>& specs,
                     std::uint64_t challenge_seed, Index count) {
  if (specs.empty()) throw std::invalid_argument("generate_crps needs at least one spec");
  if (count < 1) throw std::invalid_argument("generate_crps needs count >= 1");
  const Index n = specs.front().n;
  for (const auto& spec : specs) {
    if (spec.n != n) {
      throw std::invalid_argument("all specs must share the same stage count");
    }
  }

  CrpSet set;
  set.n = n;
  set.tasks = static_cast<Index>(specs.size());
  set.challenges.resize(n, count);
  set.responses.resize(set.tasks, count);

  Rng rng(challenge_seed);
  const Index words = (n + 63) / 64;
  for (Index j = 0; j < count; ++j) {
    for (Index w = 0; w < words; ++w) {
      std::uint64_t bits = rng.next_u64();
      const Index hi = std::min<Index>(n, (w + 1) * 64);
      for (Index i = w * 64; i < hi; ++i) {
        set.challenges(i, j) = static_cast<std::uint8_t>(bits & 1u);
        bits >>= 1;
      }
    }
  }

  for (Index t = 0; t < set.tasks; ++t) {
    const PufInstance instance(specs[static_cast<std::size_t>(t)]);
    set.responses.row(t) = instance.eval_batch(set.challenges).transpose();
  }

  set.meta.challenge_seed = challenge_seed;
  set.meta.generator = kToolkitVersion;
  set.meta.origin = "simulated";
  for (const auto& spec : specs) {
    set.meta.spec_strings.push_back(to_string(spec));
    set.meta.puf_seeds.push_back(spec.seed);
  }
  return set;
}

std::pair<CrpSet, CrpSet> split(const CrpSet& set, double train_fraction,
                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  std::vector<Index> perm(static_cast<std::size_t>(set.count()));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  shuffle(perm, rng);
  const auto cut = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(set.count())));
  const std::vector<Index> head(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cut));
  const std::vector<Index> tail(perm.begin() + static_cast<std::ptrdiff_t>(cut), perm.end());
  return {gather(set, head), gather(set, tail)};
}

CrpSet slice(const CrpSet& set, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > set.count()) {
    throw std::invalid_argument("slice range out of bounds");
  }
  CrpSet out;
  out.n = set.n;
  out.tasks = set.tasks;
  out.meta = set.meta;
  out.challenges = set.challenges.middleCols(begin, count);
  out.responses = set.responses.middleCols(begin, count);
  return out;
}

void save_crps(const CrpSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  os.put(static_cast<char>(kFormatVersion));
  os.put(0);        // flags
  put_u16(os, 0);   // reserved
  put_u32(os, static_cast<std::uint32_t>(set.n));
  put_u32(os, static_cast<std::uint32_t>(set.tasks));
  put_u64(os, static_cast<std::uint64_t>(set.count()));

  const Index cb = (set.n + 7) / 8;
  const Index rb = (set.tasks + 7) / 8;
  std::vector<std::uint8_t> record(static_cast<std::size_t>(cb + rb));
  for (Index j = 0; j < set.count(); ++j) {
    pack_bits(set.challenges.col(j).data(), set.n, record.data());
    pack_bits(set.responses.col(j).data(), set.tasks, record.data() + cb);
    os.write(reinterpret_cast<const char*>(record.data()),
             static_cast<std::streamsize>(record.size()));
  }
  if (!os) throw std::invalid_argument("write to '" + path + "' failed");
}

CrpSet load_crps(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open '" + path + "' for reading");

  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic, not a CRPB file", 0);
  }
  const auto version = get_unsigned(is, 1, 4, "version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported CRPB version " + std::to_string(version), 4);
  }
  get_unsigned(is, 1, 5, "flags");
  get_unsigned(is, 2, 6, "reserved");
  const auto n = static_cast<Index>(get_unsigned(is, 4, 8, "n_stages"));
  const auto tasks = static_cast<Index>(get_unsigned(is, 4, 12, "n_tasks"));
  const auto count64 = get_unsigned(is, 8, 16, "count");
  if (n < 1 || tasks < 1) {
    throw FormatError("CRPB header with zero stages or tasks", 8);
  }
  const auto count = static_cast<Index>(count64);

  CrpSet set;
  set.n = n;
  set.tasks = tasks;
  set.challenges.resize(n, count);
  set.responses.resize(tasks, count);

  const Index cb = (n + 7) / 8;
  const Index rb = (tasks + 7) / 8;
  std::vector<std::uint8_t> record(static_cast<std::size_t>(cb + rb));
  std::uint64_t offset = 24;
  for (Index j = 0; j < count; ++j) {
    is.read(reinterpret_cast<char*>(record.data()),
            static_cast<std::streamsize>(record.size()));
    if (is.gcount() != static_cast<std::streamsize>(record.size())) {
      throw FormatError("truncated record", offset + static_cast<std::uint64_t>(is.gcount()));
    }
    unpack_bits(record.data(), n, set.challenges.col(j).data());
    unpack_bits(record.data() + cb, tasks, set.responses.col(j).data());
    offset += record.size();
  }
  set.meta.generator = kToolkitVersion;
  set.meta.origin = "crpb:" + path;
  return set;
}

CrpSet import_csv(const std::string& path, Index n, Index tasks) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open '" + path + "' for reading");
  if (n < 1 || tasks < 1) throw std::invalid_argument("import_csv needs n >= 1 and tasks >= 1");

  std::vector<std::uint8_t> cells;
  std::vector<std::vector<std::uint8_t>> rows;
  std::string line;
  std::uint64_t line_no = 0;
  bool may_skip_header = true;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    cells.clear();
    std::stringstream ss(line);
    std::string token;
    bool binary = true;
    while (std::getline(ss, token, ',')) {
      const auto b = token.find_first_not_of(" \t\r");
      const auto e = token.find_last_not_of(" \t\r");
      const std::string t =
          b == std::string::npos ? std::string() : token.substr(b, e - b + 1);
      if (t == "0") {
        cells.push_back(0);
      } else if (t == "1") {
        cells.push_back(1);
      } else {
        binary = false;
        break;
      }
    }
    if (!binary) {
      if (may_skip_header && line_no == 1) continue;  // header line
      throw FormatError("non-binary token in CSV row", line_no);
    }
    may_skip_header = false;
    if (static_cast<Index>(cells.size()) != n + tasks) {
      throw FormatError("CSV row has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(n + tasks),
                        line_no);
    }
    rows.push_back(cells);
  }

  CrpSet set;
  set.n = n;
  set.tasks = tasks;
  set.challenges.resize(n, static_cast<Index>(rows.size()));
  set.responses.resize(tasks, static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (Index i = 0; i < n; ++i) {
      set.challenges(i, static_cast<Index>(j)) = rows[j][static_cast<std::size_t>(i)];
    }
    for (Index t = 0; t < tasks; ++t) {
      set.responses(t, static_cast<Index>(j)) =
          rows[j][static_cast<std::size_t>(n + t)];
    }
  }
  set.meta.generator = kToolkitVersion;
  set.meta.origin = "csv:" + path;
  return set;
}

void export_csv(const CrpSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::invalid_argument("cannot open '" + path + "' for writing");
  for (Index i = 0; i < set.n; ++i) os << "c" << (i + 1) << ",";
  for (Index t = 0; t < set.tasks; ++t) {
    os << "r" << (t + 1) << (t + 1 == set.tasks ? "" : ",");
  }
  os << "\n";
  for (Index j = 0; j < set.count(); ++j) {
    for (Index i = 0; i < set.n; ++i) os << int(set.challenges(i, j)) << ",";
    for (Index t = 0; t < set.tasks; ++t) {
      os << int(set.responses(t, j)) << (t + 1 == set.tasks ? "" : ",");
    }
    os << "\n";
  }
}

void features_for(const CrpSet& set, std::span<const Index> rows, MatrixX& out) {
  out.resize(set.n, static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto col = set.challenges.col(rows[j]);
    double prod = 1.0;
    for (Index i = set.n - 1; i >= 0; --i) {
      prod = col[i] ? -prod : prod;
      out(i, static_cast<Index>(j)) = prod;
    }
  }
}

void labels_for(const CrpSet& set, std::span<const Index> rows, MatrixX& out) {
  out.resize(set.tasks, static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.col(static_cast<Index>(j)) = set.responses.col(rows[j]).cast<Scalar>();
  }
}

MatrixX features_for(const CrpSet& set, std::span<const Index> rows) {
  MatrixX out;
  features_for(set, rows, out);
  return out;
}

MatrixX labels_for(const CrpSet& set, std::span<const Index> rows) {
  MatrixX out;
  labels_for(set, rows, out);
  return out;
}

}  // namespace pufmoe

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "pufmoe/dataset.hpp"
#include "pufmoe/errors.hpp"
#include "pufmoe/report.hpp"

using namespace pufmoe;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string challenge_key(const CrpSet& set, Index j) {
  std::string key;
  for (Index i = 0; i < set.n; ++i) key.push_back(set.challenges(i, j) ? '1' : '0');
  return key;
}

}  // namespace

TEST_CASE("transform_challenge on small cases") {
  Challenge c(3);
  c << 0, 0, 0;
  CHECK(transform_challenge(c) == VectorX::Ones(3));

  c << 0, 1, 0;
  FeatureVector x = transform_challenge(c);
  CHECK(x[0] == -1.0);
  CHECK(x[1] == -1.0);
  CHECK(x[2] == 1.0);
}

TEST_CASE("flipping the last challenge bit toggles every feature") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Challenge c(24);
    for (Index i = 0; i < 24; ++i) c[i] = static_cast<std::uint8_t>(rng.next_u64() & 1u);
    Challenge flipped = c;
    flipped[23] ^= 1u;
    const FeatureVector a = transform_challenge(c);
    const FeatureVector b = transform_challenge(flipped);
    CHECK(a == -b);
  }
}

TEST_CASE("transform_challenge is injective (exhaustive n = 10)") {
  std::set<std::string> images;
  for (std::uint64_t v = 0; v < 1024; ++v) {
    Challenge c(10);
    for (Index i = 0; i < 10; ++i) c[i] = (v >> i) & 1u;
    const FeatureVector x = transform_challenge(c);
    std::string key;
    for (Index i = 0; i < 10; ++i) key.push_back(x[i] > 0 ? '+' : '-');
    images.insert(key);
  }
  CHECK(images.size() == 1024);
}

TEST_CASE("generate_crps determinism and spec independence") {
  const PufSpec one = parse_puf_spec("xor:2", 64, 900);
  const CrpSet a = generate_crps({one}, 31337, 500);
  const CrpSet b = generate_crps({one}, 31337, 500);
  CHECK(same_data(a, b));

  // The challenge stream ignores which specs are attached.
  const PufSpec other = parse_puf_spec("ff:3-1:hetero", 64, 1);
  const CrpSet c = generate_crps({other}, 31337, 500);
  CHECK(a.challenges == c.challenges);

  // Same spec (and seed) twice gives identical response columns.
  const CrpSet dup = generate_crps({one, one}, 31337, 500);
  CHECK(dup.tasks == 2);
  CHECK(dup.responses.row(0) == dup.responses.row(1));

  CHECK_THROWS_AS(
      generate_crps({parse_puf_spec("apuf", 64, 1), parse_puf_spec("apuf", 32, 1)},
                    1, 10),
      std::invalid_argument);
  CHECK_THROWS_AS(generate_crps({one}, 1, 0), std::invalid_argument);
}

TEST_CASE("generated challenge bits are unbiased per position") {
  const CrpSet set = generate_crps({parse_puf_spec("apuf", 64, 5)}, 777, 100000);
  for (Index i = 0; i < 64; ++i) {
    const double freq =
        set.challenges.row(i).cast<double>().sum() / double(set.count());
    CHECK(freq >= 0.49);
    CHECK(freq <= 0.51);
  }
}

TEST_CASE("split partitions the set") {
  const CrpSet set = generate_crps({parse_puf_spec("xor:2", 64, 3)}, 21, 10000);
  const auto [train, test] = split(set, 0.8, 99);
  CHECK(train.count() == 8000);
  CHECK(test.count() == 2000);

  std::set<std::string> train_keys, test_keys;
  for (Index j = 0; j < train.count(); ++j) train_keys.insert(challenge_key(train, j));
  for (Index j = 0; j < test.count(); ++j) test_keys.insert(challenge_key(test, j));
  for (const auto& key : test_keys) CHECK(train_keys.count(key) == 0);

  // Union reproduces the original multiset of challenges.
  std::multiset<std::string> all, parts;
  for (Index j = 0; j < set.count(); ++j) all.insert(challenge_key(set, j));
  for (Index j = 0; j < train.count(); ++j) parts.insert(challenge_key(train, j));
  for (Index j = 0; j < test.count(); ++j) parts.insert(challenge_key(test, j));
  CHECK(all == parts);

  const auto [train2, test2] = split(set, 0.8, 99);
  CHECK(same_data(train, train2));
  const auto [train3, test3] = split(set, 0.8, 100);
  CHECK_FALSE(same_data(train, train3));

  CHECK_THROWS_AS(split(set, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split(set, 1.0, 1), std::invalid_argument);
}

TEST_CASE("crpb round trip is bit-exact") {
  const CrpSet set =
      generate_crps({parse_puf_spec("xor:3", 64, 10), parse_puf_spec("apuf", 64, 11)},
                    5, 1000);
  const std::string path = temp_path("pufmoe_roundtrip.crpb");
  save_crps(set, path);
  const CrpSet loaded = load_crps(path);
  CHECK(same_data(set, loaded));

  save_crps(loaded, path + ".again");
  CHECK(digest_file(path) == digest_file(path + ".again"));
  std::remove((path + ".again").c_str());
  std::remove(path.c_str());
}

TEST_CASE("crpb file size matches the header + records formula") {
  const CrpSet set = generate_crps({parse_puf_spec("apuf", 64, 2)}, 9, 8000);
  const std::string path = temp_path("pufmoe_size.crpb");
  save_crps(set, path);
  CHECK(std::filesystem::file_size(path) == crpb_file_size(64, 1, 8000));
  CHECK(crpb_file_size(64, 1, 8000) == 24 + 8000 * (8 + 1));
  std::remove(path.c_str());

  const CrpSet odd = generate_crps({parse_puf_spec("apuf", 13, 2)}, 9, 17);
  const std::string path2 = temp_path("pufmoe_size13.crpb");
  save_crps(odd, path2);
  CHECK(std::filesystem::file_size(path2) == crpb_file_size(13, 1, 17));
  std::remove(path2.c_str());
}

TEST_CASE("crpb load rejects malformed files") {
  const CrpSet set = generate_crps({parse_puf_spec("apuf", 16, 2)}, 9, 10);
  const std::string path = temp_path("pufmoe_bad.crpb");
  save_crps(set, path);

  SUBCASE("corrupted magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(load_crps(path), FormatError);
  }

  SUBCASE("bad version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put(9);
    f.close();
    try {
      load_crps(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.position() == 4);
    }
  }

  SUBCASE("truncated payload") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
    CHECK_THROWS_AS(load_crps(path), FormatError);
  }

  std::remove(path.c_str());
}

TEST_CASE("csv import and export") {
  const std::string path = temp_path("pufmoe_rows.csv");
  {
    std::ofstream os(path);
    os << "1,0,1,1\n";
    os << "0,0,0,0\n";
    os << "1,1,1,1\n";
  }
  const CrpSet set = import_csv(path, 3, 1);
  CHECK(set.count() == 3);
  CHECK(set.n == 3);
  CHECK(set.tasks == 1);
  CHECK(set.challenges(0, 0) == 1);
  CHECK(set.responses(0, 0) == 1);
  CHECK(set.meta.origin == "csv:" + path);

  SUBCASE("arity mismatch names the line") {
    std::ofstream os(path, std::ios::app);
    os << "1,0\n";
    os.close();
    try {
      import_csv(path, 3, 1);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.position() == 4);
    }
  }

  SUBCASE("non-binary token names the line") {
    std::ofstream os(path, std::ios::app);
    os << "1,0,2,1\n";
    os.close();
    CHECK_THROWS_AS(import_csv(path, 3, 1), FormatError);
  }

  SUBCASE("optional header is skipped") {
    const std::string hpath = temp_path("pufmoe_hdr.csv");
    std::ofstream os(hpath);
    os << "c1,c2,c3,r1\n";
    os << "1,0,1,1\n";
    os.close();
    const CrpSet h = import_csv(hpath, 3, 1);
    CHECK(h.count() == 1);
    std::remove(hpath.c_str());
  }

  SUBCASE("export then import is the identity") {
    const CrpSet gen = generate_crps({parse_puf_spec("xor:2", 32, 4)}, 6, 200);
    const std::string epath = temp_path("pufmoe_export.csv");
    export_csv(gen, epath);
    const CrpSet back = import_csv(epath, 32, 1);
    CHECK(same_data(gen, back));
    std::remove(epath.c_str());
  }

  std::remove(path.c_str());
}

TEST_CASE("slice takes row ranges") {
  const CrpSet set = generate_crps({parse_puf_spec("apuf", 16, 1)}, 2, 100);
  const CrpSet head = slice(set, 0, 30);
  const CrpSet tail = slice(set, 30, 70);
  CHECK(head.count() == 30);
  CHECK(tail.count() == 70);
  CHECK(head.challenges.col(0) == set.challenges.col(0));
  CHECK(tail.challenges.col(0) == set.challenges.col(30));
  CHECK_THROWS_AS(slice(set, 50, 60), std::invalid_argument);
}

TEST_CASE("features_for and labels_for gather columns") {
  const CrpSet set = generate_crps({parse_puf_spec("apuf", 8, 1)}, 2, 20);
  const std::vector<Index> rows = {3, 7, 11};
  const MatrixX x = features_for(set, rows);
  const MatrixX y = labels_for(set, rows);
  CHECK(x.cols() == 3);
  CHECK(y.cols() == 3);
  CHECK(x.col(1) == transform_challenge(set.challenges.col(7)));
  CHECK(y(0, 2) == double(set.responses(0, 11)));
}

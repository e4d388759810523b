#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "lrb/data.hpp"
#include "lrb/errors.hpp"
#include "lrb/matrix.hpp"

using namespace lrb;

namespace {

void check_disjoint(const std::vector<IndexList>& shards, std::size_t n) {
  std::set<std::size_t> seen;
  for (const auto& shard : shards) {
    for (auto idx : shard) {
      CHECK(idx < n);
      CHECK(seen.insert(idx).second);  // no duplicates across shards
    }
  }
}

std::set<int> shard_labels(const Dataset& ds, const IndexList& shard) {
  std::set<int> labels;
  for (auto idx : shard) labels.insert(ds.labels[idx]);
  return labels;
}

// Multinomial logistic regression trained on the full batch; test-local.
double linear_train_accuracy(const Dataset& ds, int steps, double lr) {
  Matrix w(ds.num_classes, ds.features.cols);
  for (int s = 0; s < steps; ++s) {
    const Matrix logits = matmul_bt(ds.features, w);
    const auto res = softmax_cross_entropy(logits, ds.labels);
    const Matrix grad = matmul_at(res.grad_logits, ds.features);
    add_scaled(w, grad, -lr);
  }
  const Matrix logits = matmul_bt(ds.features, w);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    hits += (static_cast<int>(best) == ds.labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("synthetic clusters") {
  SUBCASE("one sample per class gives N = num_classes") {
    RngStream rng(1);
    const Dataset ds = synth_clusters(7, 4, 1, 0.5, rng);
    CHECK(ds.size() == 7);
    CHECK(ds.num_classes == 7);
  }
  SUBCASE("class means are pairwise distinct") {
    RngStream rng(2);
    const Dataset ds = synth_clusters(6, 5, 50, 0.3, rng);
    std::vector<std::vector<double>> means(6, std::vector<double>(5, 0.0));
    std::vector<int> counts(6, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      counts[ds.labels[i]]++;
      for (std::size_t j = 0; j < 5; ++j) means[ds.labels[i]][j] += ds.features(i, j);
    }
    for (int c = 0; c < 6; ++c) {
      for (auto& v : means[c]) v /= counts[c];
    }
    for (int a = 0; a < 6; ++a) {
      for (int b = a + 1; b < 6; ++b) {
        double dist = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          dist += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
        }
        CHECK(dist > 0.0);
      }
    }
  }
  SUBCASE("vanishing spread is linearly separable") {
    RngStream rng(3);
    const Dataset ds = synth_clusters(5, 6, 40, 1e-3, rng);
    CHECK(linear_train_accuracy(ds, 300, 0.5) == 1.0);
  }
  SUBCASE("invalid parameters are rejected") {
    RngStream rng(4);
    CHECK_THROWS_AS(synth_clusters(0, 4, 10, 0.5, rng), ConfigError);
    CHECK_THROWS_AS(synth_clusters(3, 4, 10, 0.0, rng), ConfigError);
  }
}

TEST_CASE("label shard partition") {
  RngStream data_rng(5);
  const Dataset ds = synth_clusters(10, 3, 200, 0.5, data_rng);
  SUBCASE("2/10 gives every shard exactly two distinct labels") {
    RngStream rng(6);
    const auto shards = label_shard_partition(ds, 50, 2, rng);
    CHECK(shards.size() == 50);
    for (const auto& shard : shards) CHECK(shard_labels(ds, shard).size() == 2);
    check_disjoint(shards, ds.size());
  }
  SUBCASE("holding every label approaches the i.i.d. limit") {
    RngStream rng(7);
    const auto shards = label_shard_partition(ds, 10, 10, rng);
    for (const auto& shard : shards) CHECK(shard_labels(ds, shard).size() == 10);
    check_disjoint(shards, ds.size());
  }
  SUBCASE("deterministic given the stream") {
    RngStream a(8), b(8);
    CHECK(label_shard_partition(ds, 20, 2, a) == label_shard_partition(ds, 20, 2, b));
  }
  SUBCASE("an empty client is an error advising a fix") {
    RngStream tiny_rng(9);
    const Dataset tiny = synth_clusters(2, 3, 1, 0.5, tiny_rng);
    RngStream rng(10);
    CHECK_THROWS_WITH_AS(label_shard_partition(tiny, 10, 1, rng),
                         doctest::Contains("more data or fewer clients"), DataError);
  }
  SUBCASE("labels_per_client out of range is a config error") {
    RngStream rng(11);
    CHECK_THROWS_AS(label_shard_partition(ds, 5, 11, rng), ConfigError);
    CHECK_THROWS_AS(label_shard_partition(ds, 5, 0, rng), ConfigError);
  }
}

TEST_CASE("dirichlet partition") {
  RngStream data_rng(12);
  const Dataset ds = synth_clusters(10, 3, 400, 0.5, data_rng);
  SUBCASE("large alpha approaches uniform class histograms") {
    RngStream rng(13);
    const auto shards = dirichlet_partition(ds, 8, 100.0, rng);
    check_disjoint(shards, ds.size());
    // chi-squared against uniform, df = 9, 0.999 critical value
    for (const auto& shard : shards) {
      std::vector<double> counts(10, 0.0);
      for (auto idx : shard) counts[ds.labels[idx]] += 1.0;
      const double expected = static_cast<double>(shard.size()) / 10.0;
      double chi2 = 0.0;
      for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
      CHECK(chi2 < 27.88);
    }
  }
  SUBCASE("small alpha concentrates shards on few classes") {
    std::vector<double> dominant_shares;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RngStream rng(100 + seed);
      const auto shards = dirichlet_partition(ds, 10, 0.1, rng);
      for (const auto& shard : shards) {
        std::vector<std::size_t> counts(10, 0);
        for (auto idx : shard) counts[ds.labels[idx]]++;
        const auto top = *std::max_element(counts.begin(), counts.end());
        dominant_shares.push_back(static_cast<double>(top) /
                                  static_cast<double>(shard.size()));
      }
    }
    std::sort(dominant_shares.begin(), dominant_shares.end());
    CHECK(dominant_shares[dominant_shares.size() / 2] > 0.5);
  }
  SUBCASE("deterministic given the stream") {
    RngStream a(14), b(14);
    CHECK(dirichlet_partition(ds, 6, 0.5, a) == dirichlet_partition(ds, 6, 0.5, b));
  }
  SUBCASE("more clients than samples exhausts the retries") {
    RngStream tiny_rng(15);
    const Dataset tiny = synth_clusters(2, 2, 2, 0.5, tiny_rng);  // 4 samples
    RngStream rng(16);
    CHECK_THROWS_AS(dirichlet_partition(tiny, 10, 1.0, rng), DataError);
  }
  SUBCASE("alpha must be positive") {
    RngStream rng(17);
    CHECK_THROWS_AS(dirichlet_partition(ds, 4, 0.0, rng), ConfigError);
  }
}

TEST_CASE("gamma draws have the right mean") {
  RngStream rng(18);
  for (double shape : {0.1, 0.5, 1.0, 3.0}) {
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) sum += gamma_draw(shape, rng);
    CHECK(sum / n == doctest::Approx(shape).epsilon(0.05));
  }
}

TEST_CASE("split and subsample") {
  RngStream data_rng(19);
  const Dataset ds = synth_clusters(4, 3, 100, 0.5, data_rng);  // 400 samples
  IndexList all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  SUBCASE("subsample fraction one is a plain split") {
    RngStream rng(20);
    const auto split = split_and_subsample(ds, all, 0.75, 1.0, rng);
    CHECK(split.train.size() == 300);
    CHECK(split.test.size() == 100);
  }
  SUBCASE("half split of a 100-sample shard") {
    IndexList shard(all.begin(), all.begin() + 100);  // label 0 only
    RngStream rng(21);
    const auto split = split_and_subsample(ds, shard, 0.5, 1.0, rng);
    CHECK(split.train.size() == 50);
    CHECK(split.test.size() == 50);
  }
  SUBCASE("ten percent of 200 train samples is 20") {
    RngStream rng(22);
    const auto split = split_and_subsample(ds, all, 0.5, 0.1, rng);
    CHECK(split.train.size() == 20);
    CHECK(split.test.size() == 200);
  }
  SUBCASE("split is stratified by label") {
    RngStream rng(23);
    const auto split = split_and_subsample(ds, all, 0.75, 1.0, rng);
    std::vector<int> counts(4, 0);
    for (auto idx : split.train) counts[ds.labels[idx]]++;
    for (int c : counts) CHECK(c == 75);
  }
  SUBCASE("empty train side after subsample is an error") {
    IndexList shard(all.begin(), all.begin() + 2);
    RngStream rng(24);
    CHECK_THROWS_AS(split_and_subsample(ds, shard, 0.5, 0.1, rng), DataError);
  }
  SUBCASE("train and test never overlap") {
    RngStream rng(25);
    const auto split = split_and_subsample(ds, all, 0.6, 0.5, rng);
    std::set<std::size_t> train(split.train.begin(), split.train.end());
    for (auto idx : split.test) CHECK(train.count(idx) == 0);
  }
}

TEST_CASE("csv loading") {
  const auto dir = std::filesystem::temp_directory_path() / "lrb_csv_test";
  std::filesystem::create_directories(dir);

  SUBCASE("three hand-written rows") {
    const auto path = (dir / "small.csv").string();
    std::ofstream(path) << "1.0,2.0,0\n-0.5,0.25,1\n3.5,-1.0,0\n";
    const auto loaded = load_csv(path);
    CHECK(loaded.dataset.size() == 3);
    CHECK(loaded.dataset.num_classes == 2);
    CHECK(loaded.dataset.features(1, 1) == 0.25);
    CHECK(loaded.dataset.labels[1] == 1);
    CHECK(loaded.warnings.empty());
  }
  SUBCASE("save then load round-trips") {
    RngStream rng(26);
    const Dataset ds = synth_clusters(3, 4, 20, 0.5, rng);
    const auto path = (dir / "roundtrip.csv").string();
    save_csv(ds, path);
    const auto loaded = load_csv(path);
    CHECK(loaded.dataset.labels == ds.labels);
    REQUIRE(loaded.dataset.features.data.size() == ds.features.data.size());
    for (std::size_t i = 0; i < ds.features.data.size(); ++i) {
      CHECK(loaded.dataset.features.data[i] == ds.features.data[i]);
    }
  }
  SUBCASE("a fractional label names the offending row") {
    const auto path = (dir / "badlabel.csv").string();
    std::ofstream(path) << "1.0,0\n2.0,2.5\n";
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("row 2"), DataError);
  }
  SUBCASE("non-contiguous labels are remapped with a warning") {
    const auto path = (dir / "remap.csv").string();
    std::ofstream(path) << "1.0,5\n2.0,9\n3.0,5\n";
    const auto loaded = load_csv(path);
    CHECK(loaded.dataset.num_classes == 2);
    CHECK(loaded.dataset.labels == std::vector<int>{0, 1, 0});
    REQUIRE(loaded.warnings.size() == 1);
    CHECK(loaded.warnings[0].find("remapped") != std::string::npos);
  }
  SUBCASE("missing file is an error") {
    CHECK_THROWS_AS(load_csv((dir / "nope.csv").string()), DataError);
  }
  SUBCASE("ragged rows are rejected with the row number") {
    const auto path = (dir / "ragged.csv").string();
    std::ofstream(path) << "1.0,2.0,0\n1.0,1\n";
    CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("row 2"), DataError);
  }
}

}  // TEST_SUITE

#include <gtest/gtest.h>

#include <algorithm>

#include "embedloc/error.hpp"
#include "embedloc/locality.hpp"
#include "metric_oracles.hpp"
#include "test_support.hpp"

using namespace embedloc;

namespace {

// Seed 0 with hand-placed neighbours 1..n at increasing distance.
struct Star {
  std::vector<TrackRecord> records;
  EmbeddingSet set{2};

  explicit Star(const std::vector<double>& bpms) {
    for (std::size_t i = 0; i < bpms.size(); ++i) {
      TrackRecord r;
      r.track_id = "s" + std::to_string(i);
      r.bpm = bpms[i];
      records.push_back(r);
      const double angle = 0.1 * static_cast<double>(i);
      set.add(r.track_id, Eigen::Vector2d(std::cos(angle), std::sin(angle)));
    }
  }

  double seed_rmms(std::size_t k, RmmsDirection d = RmmsDirection::seed) const {
    const auto table = knn_table(set, k);
    const auto rec = align_records(set, records);
    return tempo_rmms(table, rec, k, d).per_seed[0];
  }
};

}  // namespace

TEST(TempoRmms, ExactOctavesGiveZero) {
  EXPECT_NEAR(Star({120, 240, 60, 40}).seed_rmms(3), 0.0, 1e-12);
}

TEST(TempoRmms, ClosestCandidate) {
  EXPECT_NEAR(Star({120, 130}).seed_rmms(1), 10.0, 1e-12);
  const double expected = std::sqrt((25.0 + std::pow(100.0 / 3.0 - 32.0, 2)) / 2.0);
  EXPECT_NEAR(Star({100, 205, 32}).seed_rmms(2), expected, 1e-12);
  EXPECT_NEAR(expected, 3.659, 5e-4);
}

TEST(TempoRmms, NeighborDirectionDiffers) {
  // Seed 100, neighbour 205: seed side min(|100/3-205|, ..., |200-205|) = 5;
  // neighbour side min(|100-205/3|, |100-102.5|, ...) = 2.5.
  EXPECT_NEAR(Star({100, 205}).seed_rmms(1, RmmsDirection::seed), 5.0, 1e-12);
  EXPECT_NEAR(Star({100, 205}).seed_rmms(1, RmmsDirection::neighbor), 2.5, 1e-12);
}

TEST(TempoRmms, MissingBpmSkipsSeed) {
  Star star({120, 120, 130});
  star.records[2].bpm.reset();
  const auto rec = align_records(star.set, star.records);
  const auto v = tempo_rmms(knn_table(star.set, 1), rec, 1);
  EXPECT_EQ(v.seeds + v.skipped, 3u);
  EXPECT_GE(v.skipped, 1u);
}

TEST(KeyPrecision, DefinitionCases) {
  Rng rng(1);
  auto items = oracle::random_instance(rng, 30);
  for (auto& it : items) it.key = KeyLabel{4, true};
  const auto set = oracle::to_set(items);
  const auto records = oracle::to_records(items);
  for (std::size_t k : {1u, 5u, 29u}) {
    EXPECT_DOUBLE_EQ(key_precision(knn_table(set, k), align_records(set, records), k).value, 1.0);
  }
  // m matches among k neighbours -> m / k.
  Star star({1, 1, 1, 1, 1});
  for (std::size_t i = 0; i < 5; ++i) star.records[i].key_label = KeyLabel{i == 2 || i == 4 ? 0 : 7, false};
  const auto table = knn_table(star.set, 4);
  const auto rec = align_records(star.set, star.records);
  EXPECT_DOUBLE_EQ(key_precision(table, rec, 4).per_seed[0], 0.5);
  EXPECT_DOUBLE_EQ(key_precision(knn_table(star.set, 3), rec, 3).per_seed[0], 2.0 / 3.0);
}

TEST(TagMetrics, DefinitionCases) {
  Star star({1, 1, 1, 1});
  for (auto& r : star.records) r.tags = {"x", "y"};
  auto table = knn_table(star.set, 3);
  auto rec = align_records(star.set, star.records);
  EXPECT_DOUBLE_EQ(tag_precision(table, rec, 3).value, 1.0);
  EXPECT_DOUBLE_EQ(tag_retrieval(table, rec, 3).value, 1.0);

  star.records[0].tags = {"x"};
  star.records[1].tags = {"y", "z"};
  star.records[2].tags = {"y"};
  star.records[3].tags = {"z", "w"};
  rec = align_records(star.set, star.records);
  EXPECT_DOUBLE_EQ(tag_precision(table, rec, 3).per_seed[0], 0.0);
  // Multiset: seed {y,z} (s1) sees s0{x}, s2{y}, s3{z,w}: 2 of 4.
  EXPECT_DOUBLE_EQ(tag_precision(table, rec, 3).per_seed[1], 0.5);
  // Per neighbour: (0 + 1 + 0.5) / 3.
  EXPECT_DOUBLE_EQ(
      tag_precision(table, rec, 3, TagPrecisionVariant::per_neighbor).per_seed[1], 0.5);
  // x and w have one carrier each and never score.
  const auto r = tag_retrieval(table, rec, 3);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_DOUBLE_EQ(r.value, (0.0 + 1.0 + 1.0 + 0.0) / 4.0);
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
  Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const auto items = oracle::random_instance(rng, 20 + rng.index(200));
    const auto set = oracle::to_set(items);
    const auto rec_store = oracle::to_records(items);
    const auto rec = align_records(set, rec_store);
    for (std::size_t k : {1u, 4u, 8u}) {
      const auto table = knn_table(set, k);
      EXPECT_NEAR(tempo_rmms(table, rec, k).value, oracle::rmms(items, k), 1e-9);
      EXPECT_NEAR(key_precision(table, rec, k).value, oracle::key_precision(items, k), 1e-12);
      EXPECT_NEAR(tag_precision(table, rec, k).value, oracle::tag_precision(items, k), 1e-12);
      EXPECT_NEAR(tag_retrieval(table, rec, k).value, oracle::tag_retrieval(items, k), 1e-12);
    }
  }
}

TEST(Metrics, InvariantToInsertionOrder) {
  Rng rng(3);
  auto items = oracle::random_instance(rng, 150);
  auto run = [&] {
    const auto set = oracle::to_set(items);
    return neighborhood_report(set, oracle::to_records(items), {1, 5, 10},
                               {"tempo_rmms", "key_precision", "tag_precision", "tag_retrieval"});
  };
  const auto a = run();
  std::reverse(items.begin(), items.end());
  const auto b = run();
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_NEAR(a.rows[i].value.value, b.rows[i].value.value, 1e-12) << a.rows[i].metric;
  }
}

TEST(Metrics, TagRetrievalMonotoneInK) {
  Rng rng(4);
  const auto items = oracle::random_instance(rng, 80);
  const auto set = oracle::to_set(items);
  const auto records = oracle::to_records(items);
  const auto rec = align_records(set, records);
  const auto table = knn_table(set, 79);
  double previous = 0.0;
  for (std::size_t k = 1; k <= 79; ++k) {
    const double v = tag_retrieval(table, rec, k).value;
    EXPECT_GE(v, previous);
    previous = v;
  }
}

TEST(Report, RowsPerMetricAndCsv) {
  Rng rng(5);
  const auto items = oracle::random_instance(rng, 60);
  const auto report = neighborhood_report(oracle::to_set(items), oracle::to_records(items),
                                          {1, 2, 4, 8}, {"tempo_rmms", "key_precision"});
  EXPECT_EQ(report.rows.size(), 8u);
  const auto csv = to_csv(report);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "metric,k,value,seeds,skipped");
  const auto j = to_json(report);
  EXPECT_EQ(j["rmms_direction"], "seed");
  EXPECT_EQ(j["rows"].size(), 8u);
  EXPECT_THROW(neighborhood_report(oracle::to_set(items), oracle::to_records(items), {2},
                                   {"bogus"}),
               ConfigError);
}

TEST(Quantile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.75), 3.25);
  EXPECT_DOUBLE_EQ(quantile({5}, 0.25), 5.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3}, 0.5), 2.0);
}

TEST(Sweep, IdentityIsZeroAndGridChecked) {
  auto corpus = embedloc::testing::synthetic_corpus(4, 3, 8.0);
  const auto p = init_encoder(EncoderConfig{}, MelConfig{}, 9);
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const auto ts = manipulation_sweep(corpus, all, p, SweepKind::time_stretch, default_stretch_grid());
  ASSERT_EQ(ts.grid.size(), 17u);
  EXPECT_DOUBLE_EQ(ts.grid[8], 1.0);
  for (const auto& row : ts.distances) EXPECT_NEAR(row[8], 0.0, 1e-6);
  for (std::size_t g = 0; g < 17; ++g) {
    EXPECT_LE(ts.q25[g], ts.mean[g] + 1e-12 + (ts.q75[g] - ts.q25[g]));
    EXPECT_LE(ts.q25[g], ts.q75[g]);
  }
  const auto ps = manipulation_sweep(corpus, all, p, SweepKind::pitch_shift, default_semitone_grid());
  for (const auto& row : ps.distances) EXPECT_NEAR(row[12], 0.0, 1e-6);
  EXPECT_THROW(manipulation_sweep(corpus, all, p, SweepKind::time_stretch, {0.5, 2.0}),
               ConfigError);
  const auto csv = to_csv(ps);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 26);
}

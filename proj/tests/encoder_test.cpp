#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "embedloc/encoder.hpp"
#include "embedloc/error.hpp"
#include "test_support.hpp"

using namespace embedloc;

namespace {

Eigen::MatrixXd random_unit_rows(Eigen::Index rows, Eigen::Index dim, Rng& rng) {
  Eigen::MatrixXd e(rows, dim);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) e(i, j) = rng.normal();
    e.row(i).normalize();
  }
  return e;
}

// Direct evaluation of the loss: per anchor, cosine similarities, softmax
// over every other row, negative log probability of the partner.
double brute_ntxent(const Eigen::MatrixXd& e, double t) {
  const Eigen::Index n = e.rows();
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    double denom = 0.0, numer = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b == a) continue;
      const double cos = e.row(a).dot(e.row(b)) / (e.row(a).norm() * e.row(b).norm());
      denom += std::exp(cos / t);
      if (b == (a % 2 == 0 ? a + 1 : a - 1)) numer = std::exp(cos / t);
    }
    total += -std::log(numer / denom);
  }
  return total / static_cast<double>(n);
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.hidden = 12;
  c.embed_dim = 5;
  return c;
}

}  // namespace

TEST(NtXent, OrthogonalPairsClosedForm) {
  Eigen::MatrixXd e(4, 2);
  e << 1, 0, 1, 0, 0, 1, 0, 1;
  const double expected = std::log((std::exp(1.0) + 2.0) / std::exp(1.0));
  EXPECT_NEAR(ntxent_loss(e, 1.0).loss, expected, 1e-9);
  EXPECT_NEAR(brute_ntxent(e, 1.0), expected, 1e-12);
  EXPECT_NEAR(expected, 0.5514, 5e-5);
}

TEST(NtXent, IdenticalRowsGiveUniformSoftmax) {
  for (Eigen::Index b : {2, 3, 7}) {
    const Eigen::MatrixXd e = Eigen::MatrixXd::Ones(2 * b, 3) / std::sqrt(3.0);
    EXPECT_NEAR(ntxent_loss(e, 0.1).loss, std::log(2.0 * b - 1.0), 1e-12);
  }
}

TEST(NtXent, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto e = random_unit_rows(2 * (2 + trial % 5), 6, rng);
    for (double t : {0.1, 0.5, 1.0}) {
      EXPECT_NEAR(ntxent_loss(e, t).loss, brute_ntxent(e, t), 1e-10);
    }
  }
}

TEST(NtXent, GradientMatchesCentralDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index rows = 2 * (2 + trial % 4);
    Eigen::MatrixXd e = random_unit_rows(rows, 5, rng);
    const double t = 0.1 + 0.1 * (trial % 5);
    const auto analytic = ntxent_loss(e, t).grad;
    Eigen::MatrixXd numeric(rows, 5);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < 5; ++j) {
        const double keep = e(i, j);
        e(i, j) = keep + h;
        const double up = brute_ntxent(e, t);
        e(i, j) = keep - h;
        const double down = brute_ntxent(e, t);
        e(i, j) = keep;
        numeric(i, j) = (up - down) / (2.0 * h);
      }
    }
    EXPECT_LE((analytic - numeric).norm() / numeric.norm(), 1e-5) << "trial " << trial;
  }
}

TEST(NtXent, PairPermutationPermutesTerms) {
  Rng rng(3);
  const auto e = random_unit_rows(10, 4, rng);
  const std::vector<Eigen::Index> order{3, 0, 4, 1, 2};
  Eigen::MatrixXd shuffled(10, 4);
  for (Eigen::Index i = 0; i < 5; ++i) {
    shuffled.row(2 * i) = e.row(2 * order[i]);
    shuffled.row(2 * i + 1) = e.row(2 * order[i] + 1);
  }
  const auto a = ntxent_loss(e, 0.2), b = ntxent_loss(shuffled, 0.2);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(b.per_anchor[2 * i], a.per_anchor[2 * order[i]], 1e-12);
    EXPECT_NEAR(b.per_anchor[2 * i + 1], a.per_anchor[2 * order[i] + 1], 1e-12);
  }
}

TEST(NtXent, RejectsDegenerateBatches) {
  EXPECT_THROW(ntxent_loss(Eigen::MatrixXd::Ones(2, 3), 0.1), ConfigError);
  EXPECT_THROW(ntxent_loss(Eigen::MatrixXd::Ones(5, 3), 0.1), ConfigError);
  EXPECT_THROW(ntxent_loss(Eigen::MatrixXd::Ones(4, 3), 0.0), ConfigError);
  EXPECT_THROW(ntxent_loss(Eigen::MatrixXd::Zero(4, 3), 0.1), DataError);
}

TEST(Schedule, WarmupThenCosine) {
  TrainConfig c;
  c.total_steps = 100000;
  c.warmup_steps = 5000;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(2500, c), 0.0005);
  EXPECT_DOUBLE_EQ(lr_at(5000, c), 0.001);
  EXPECT_NEAR(lr_at(52500, c), 0.0005, 1e-15);
  EXPECT_NEAR(lr_at(100000, c), 0.0, 1e-12);
  EXPECT_THROW(lr_at(100001, c), ConfigError);
  double previous = lr_at(5000, c);
  for (std::size_t s = 5001; s <= 100000; s += 997) {
    EXPECT_LE(lr_at(s, c), previous);
    previous = lr_at(s, c);
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.warmup_steps = c.total_steps;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, FeatureLayout) {
  const MelConfig mel;
  const EncoderConfig c;
  const auto lags = feature_lags(c, mel);
  EXPECT_EQ(lags.front(), 12u);
  EXPECT_EQ(lags.back(), 160u);
  EXPECT_EQ(lags.size(), 75u);
  EXPECT_EQ(feature_count(c, mel), 96u + 75u);
  EXPECT_EQ(min_window_frames(c, mel), 173u);
  EXPECT_THROW(encoder_features(MelSpectrogram(mel, 172), c), DataError);
}

TEST(Encoder, RhythmFeaturesPeakAtThePeriod) {
  const MelConfig mel;
  const EncoderConfig c;
  const auto lags = feature_lags(c, mel);
  auto at_lag = [&](const Eigen::VectorXd& f, double lag) {
    std::size_t k = 0;
    for (std::size_t i = 1; i < lags.size(); ++i) {
      if (std::abs(lags[i] - lag) < std::abs(lags[k] - lag)) k = i;
    }
    return f[96 + static_cast<Eigen::Index>(k)];
  };
  for (double period : {30.0, 41.0, 50.0, 64.0, 77.0}) {
    const auto f = encoder_features(embedloc::testing::click_mel(mel, 300, period, 3.0), c);
    EXPECT_GT(at_lag(f, period), 0.8) << period;
    EXPECT_LT(at_lag(f, 0.5 * period), 0.2) << period;
  }
}

TEST(Encoder, BandMeansAreTimeAverages) {
  const MelConfig mel;
  MelSpectrogram x(mel, 200);
  for (std::size_t u = 0; u < 96; ++u) {
    for (std::size_t m = 0; m < 200; ++m) x.at(u, m) = 0.01 * u + (m % 2 ? 1.0 : -1.0);
  }
  const auto f = encoder_features(x, EncoderConfig{});
  for (std::size_t u = 0; u < 96; ++u) EXPECT_NEAR(f[static_cast<Eigen::Index>(u)], 0.01 * u, 1e-12);
}

TEST(Encoder, OutputsAreUnitNorm) {
  const MelConfig mel;
  const auto p = init_encoder(EncoderConfig{}, mel, 4);
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    MelSpectrogram x(mel, 300);
    for (std::size_t u = 0; u < 96; ++u) {
      for (std::size_t m = 0; m < 300; ++m) x.at(u, m) = rng.uniform(-6.0, 1.0);
    }
    EXPECT_NEAR(encode(p, x).norm(), 1.0, 1e-12);
  }
}

TEST(Encoder, ParameterGradientsMatchCentralDifferences) {
  const MelConfig mel;
  const EncoderConfig c = small_config();
  Rng rng(5);
  EncoderParams p = init_encoder(c, mel, 5);
  const auto F = static_cast<Eigen::Index>(feature_count(c, mel));
  for (Eigen::Index j = 0; j < F; ++j) {
    p.feature_mean[j] = rng.uniform(-0.5, 0.5);
    p.feature_scale[j] = rng.uniform(0.5, 2.0);
  }
  p.b1 = Eigen::VectorXd::Random(c.hidden) * 0.1;
  p.b2 = Eigen::VectorXd::Random(c.embed_dim) * 0.1;
  Eigen::MatrixXd x(8, F);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();

  auto loss_of = [&](const EncoderParams& q) {
    return ntxent_loss(encode_features(q, x), 0.2).loss;
  };
  const auto tape = encoder_forward(p, x);
  const auto g = encoder_backward(p, tape, ntxent_loss(tape.output, 0.2).grad);

  const double h = 1e-6;
  auto check = [&](Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& analytic) {
    Eigen::MatrixXd numeric(param.rows(), param.cols());
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        const double keep = param(i, j);
        param(i, j) = keep + h;
        const double up = loss_of(p);
        param(i, j) = keep - h;
        const double down = loss_of(p);
        param(i, j) = keep;
        numeric(i, j) = (up - down) / (2.0 * h);
      }
    }
    EXPECT_LE((analytic - numeric).norm() / numeric.norm(), 1e-5);
  };
  check(p.w1, g.w1);
  check(p.b1, g.b1);
  check(p.w2, g.w2);
  check(p.b2, g.b2);
}

TEST(Encoder, CheckpointRoundTrip) {
  const MelConfig mel;
  auto p = init_encoder(EncoderConfig{}, mel, 6);
  p.feature_mean.setConstant(0.25);
  p.chain_id = "TSPS";
  p.step = 17;
  const auto dir = std::filesystem::temp_directory_path() / "embedloc_encoder_ckpt";
  std::filesystem::remove_all(dir);
  save_encoder(p, dir);
  const auto q = load_encoder(dir);
  EXPECT_EQ(q.chain_id, "TSPS");
  EXPECT_EQ(q.step, 17u);
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.mel, p.mel);
  EXPECT_EQ(checkpoint_id(q), checkpoint_id(p));
  const auto x = embedloc::testing::click_mel(mel, 300, 50.0, 0.0);
  EXPECT_LE((encode(p, x) - encode(q, x)).norm(), 1e-5);

  auto other = p;
  other.w2(0, 0) += 0.5;
  EXPECT_NE(checkpoint_id(other), checkpoint_id(p));
  std::filesystem::remove(dir / "w2.emlt");
  EXPECT_THROW(load_encoder(dir), DataError);
}

class Training : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { corpus_ = new Corpus(embedloc::testing::synthetic_corpus(24, 11)); }
  static void TearDownTestSuite() { delete corpus_; }

  static TrainConfig quick(std::size_t steps) {
    TrainConfig t;
    t.batch_pairs = 8;
    t.total_steps = steps;
    t.warmup_steps = steps / 10;
    t.peak_lr = 0.05;
    t.momentum = 0.9;
    t.stat_pairs = 32;
    t.rng_seed = 7;
    return t;
  }

  static Corpus* corpus_;
};

Corpus* Training::corpus_ = nullptr;

TEST_F(Training, LossDescends) {
  const auto r = train_encoder(*corpus_, AugmentationSpec{}, quick(500), small_config());
  ASSERT_EQ(r.losses.size(), 500u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 100; ++i) {
    first += r.losses[static_cast<std::size_t>(i)];
    last += r.losses[static_cast<std::size_t>(400 + i)];
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(r.params.step, 500u);
  EXPECT_EQ(r.params.chain_id, "none");
}

TEST_F(Training, SeededRunsRepeatAcrossWorkerCounts) {
  AugmentationSpec aug;
  aug.chain = parse_chain("TSPSEQ");
  auto cfg = quick(20);
  const auto a = train_encoder(*corpus_, aug, cfg, small_config());
  const auto b = train_encoder(*corpus_, aug, cfg, small_config());
  cfg.workers = 3;
  const auto c = train_encoder(*corpus_, aug, cfg, small_config());
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.losses, c.losses);
  EXPECT_EQ(checkpoint_id(a.params), checkpoint_id(c.params));
  cfg.rng_seed = 8;
  EXPECT_NE(train_encoder(*corpus_, aug, cfg, small_config()).losses, a.losses);
}

TEST_F(Training, TimeStretchWidensPairs) {
  // Mean feature-space distance between the two views of sampled pairs.
  auto spread = [&](const AugmentationSpec& aug) {
    const EncoderConfig c;
    const TrainConfig t;
    Rng rng(9);
    double total = 0.0;
    const int pairs = 200;
    for (int i = 0; i < pairs; ++i) {
      const std::size_t track = rng.index(corpus_->records.size());
      const auto pair =
          sample_pair(corpus_->records[track], corpus_->features[track], t.timing, rng);
      const auto a = encoder_features(apply_chain(pair->anchor, aug, rng), c);
      const auto b = encoder_features(apply_chain(pair->positive, aug, rng), c);
      total += (a - b).tail(75).norm();
    }
    return total / pairs;
  };
  AugmentationSpec ts;
  ts.chain = parse_chain("TS");
  EXPECT_GT(spread(ts), spread(AugmentationSpec{}));
}

TEST_F(Training, RequiresUsableTracks) {
  Corpus tiny;
  tiny.records.push_back(corpus_->records[0]);
  tiny.features.push_back(corpus_->features[0]);
  tiny.records[0].split = Split::train;
  EXPECT_THROW(train_encoder(tiny, AugmentationSpec{}, quick(5), small_config()), DataError);
}

TEST_F(Training, DivergenceNamesTheStep) {
  auto cfg = quick(50);
  cfg.peak_lr = 1e300;
  cfg.warmup_steps = 1;
  try {
    train_encoder(*corpus_, AugmentationSpec{}, cfg, small_config());
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

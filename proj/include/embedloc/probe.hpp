#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "embedloc/corpus.hpp"
#include "embedloc/embedspace.hpp"

namespace embedloc {

// Tempo classification probe: embedding -> 512 ReLU (dropout in training)
// -> one class per integer BPM in [kProbeMinBpm, kProbeMaxBpm].

inline constexpr int kProbeMinBpm = 30;
inline constexpr int kProbeMaxBpm = 300;
inline constexpr int kProbeClasses = kProbeMaxBpm - kProbeMinBpm + 1;  // 271

struct ProbeConfig {
  std::size_t hidden = 512;
  double dropout = 0.75;
  std::size_t batch = 64;
  std::size_t steps = 2000;
  std::size_t warmup_steps = 100;
  double peak_lr = 0.05;
  double momentum = 0.9;
  std::uint64_t rng_seed = 0;
  std::size_t smoothing_taps = 15;  // Hamming window over the BPM axis
  double tolerance = 0.04;          // Acc1/Acc2 relative tolerance

  void validate() const;
  bool operator==(const ProbeConfig&) const = default;
};

nlohmann::json to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j, const std::string& where = "probe");

struct ProbeModel {
  ProbeConfig config;
  Eigen::MatrixXd w1;  // hidden x D
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // classes x hidden
  Eigen::VectorXd b2;
  std::string embedding_checkpoint_id;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
};

struct ProbeTrainResult {
  ProbeModel model;
  std::vector<double> losses;
};

/// Cross-entropy training on every track of `set` (all must carry a bpm;
/// otherwise DataError listing them). Needs at least two distinct classes.
ProbeTrainResult train_probe(const EmbeddingSet& set, const std::vector<TrackRecord>& records,
                             const ProbeConfig& config);

/// Softmax class probabilities (dropout off).
Eigen::VectorXd probe_scores(const ProbeModel& model, const Eigen::VectorXd& embedding);

/// Symmetric Hamming window 0.54 - 0.46 cos(2 pi n / (taps - 1)).
std::vector<double> hamming_window(std::size_t taps);

/// Relative slack under which smoothed scores count as tied.
inline constexpr double kTieTolerance = 1e-12;

/// Same-length, zero-padded convolution of the scores with the window,
/// then BPM = kProbeMinBpm + argmax. Ties (within kTieTolerance of the
/// maximum) go to the lowest BPM.
int smoothed_argmax_bpm(const Eigen::VectorXd& scores, std::size_t taps = 15);

int estimate_tempo(const ProbeModel& model, const Eigen::VectorXd& embedding);

/// Fraction of estimates within tolerance * truth of the truth (acc1), or
/// of truth * o for some o in {1/3, 1/2, 1, 2, 3} (acc2). DataError when
/// the lists are empty or differ in length.
bool acc1_hit(double estimate, double truth, double tolerance = 0.04);
bool acc2_hit(double estimate, double truth, double tolerance = 0.04);
double acc1(const std::vector<double>& estimates, const std::vector<double>& truths,
            double tolerance = 0.04);
double acc2(const std::vector<double>& estimates, const std::vector<double>& truths,
            double tolerance = 0.04);

struct ProbeEvaluation {
  std::vector<std::string> track_ids;
  std::vector<double> truths;
  std::vector<int> estimates;
  double acc1 = 0.0, acc2 = 0.0;
};

/// Scores every track of `set` that has a bpm.
ProbeEvaluation evaluate_probe(const ProbeModel& model, const EmbeddingSet& set,
                               const std::vector<TrackRecord>& records);

/// track_id,truth,estimate,acc1_hit,acc2_hit
std::string to_csv(const ProbeEvaluation& evaluation, double tolerance = 0.04);

void save_probe(const ProbeModel& model, const std::filesystem::path& dir);
ProbeModel load_probe(const std::filesystem::path& dir);

}  // namespace embedloc

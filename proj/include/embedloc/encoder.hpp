#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "embedloc/augment.hpp"
#include "embedloc/corpus.hpp"
#include "embedloc/melfront.hpp"

namespace embedloc {

// The encoder is a fixed feature stage followed by a small trainable map:
//
//   features = [time mean of each mel band,
//               normalized autocorrelation of the onset envelope at lags
//               lag_min..lag_max seconds]
//   z = normalize(W2 tanh(W1 ((features - mean) / scale) + b1) + b2)
//
// The band means carry timbre/register/pitch, the autocorrelation carries
// rhythm. Mean/scale are fixed at init from a sample of training views.

struct EncoderConfig {
  int embed_dim = 64;
  int hidden = 256;
  double lag_min_seconds = 0.12;
  double lag_max_seconds = 1.6;
  int lag_step_frames = 2;
  double window_seconds = 3.0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Lags (in frames) sampled by the rhythm features.
std::vector<std::size_t> feature_lags(const EncoderConfig& config,
                                      const MelConfig& mel);
std::size_t feature_count(const EncoderConfig& config, const MelConfig& mel);
/// Smallest window the feature stage accepts.
std::size_t min_window_frames(const EncoderConfig& config, const MelConfig& mel);

/// Fixed features of one window. Throws DataError if the window is shorter
/// than min_window_frames.
Eigen::VectorXd encoder_features(const MelSpectrogram& window,
                                 const EncoderConfig& config);

struct EncoderParams {
  EncoderConfig config;
  MelConfig mel;
  Eigen::VectorXd feature_mean;   // F
  Eigen::VectorXd feature_scale;  // F, strictly positive
  Eigen::MatrixXd w1;             // H x F
  Eigen::VectorXd b1;             // H
  Eigen::MatrixXd w2;             // D x H
  Eigen::VectorXd b2;             // D
  std::string chain_id = "none";
  std::uint64_t seed = 0;
  std::size_t step = 0;

  /// Throws ConfigError on inconsistent shapes.
  void validate() const;
};

/// Glorot-uniform weights, zero biases, identity standardization.
EncoderParams init_encoder(const EncoderConfig& config, const MelConfig& mel,
                           std::uint64_t seed);

/// Unit-norm rows for a batch of feature rows (N x F).
Eigen::MatrixXd encode_features(const EncoderParams& params,
                                const Eigen::MatrixXd& features);
Eigen::VectorXd encode(const EncoderParams& params, const MelSpectrogram& window);

struct EncoderGradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

/// Forward pass returning unit rows, and a closure-free backward pass:
/// given dL/dZ for the same batch, returns parameter gradients.
struct EncoderTape {
  Eigen::MatrixXd standardized;  // N x F
  Eigen::MatrixXd hidden;        // N x H, after tanh
  Eigen::VectorXd norms;         // N
  Eigen::MatrixXd output;        // N x D, unit rows
};
EncoderTape encoder_forward(const EncoderParams& params,
                            const Eigen::MatrixXd& features);
EncoderGradients encoder_backward(const EncoderParams& params,
                                  const EncoderTape& tape,
                                  const Eigen::MatrixXd& d_output);

struct NtXent {
  double loss = 0.0;
  Eigen::MatrixXd grad;        // dL/dE, same shape as the input
  Eigen::VectorXd per_anchor;  // 2B terms; loss is their mean
};

/// NT-Xent over rows paired (2i, 2i+1) with cosine similarity and
/// temperature t. Every other row is a negative. Throws ConfigError when
/// fewer than two pairs are given or t <= 0, DataError on a zero row.
NtXent ntxent_loss(const Eigen::MatrixXd& embeddings, double temperature);

struct TrainConfig {
  std::size_t batch_pairs = 64;
  std::size_t total_steps = 5000;
  std::size_t warmup_steps = 250;
  double peak_lr = 0.001;
  double momentum = 0.0;
  double temperature = 0.1;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;
  std::size_t stat_pairs = 256;  // views sampled for input standardization
  PairTiming timing;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup from 0 to peak_lr, then cosine decay to 0 at total_steps.
double lr_at(std::size_t step, const TrainConfig& config);

struct TrainResult {
  EncoderParams params;
  std::vector<double> losses;  // one per step
};

using TrainProgress = std::function<void(std::size_t step, double loss)>;

/// Contrastive training on the train split. Each pair and view draws from
/// its own derived random stream, so results do not depend on the worker
/// count. Throws DataError with fewer than two usable tracks and
/// NumericalError (naming the step) on a non-finite loss.
TrainResult train_encoder(const Corpus& corpus, const AugmentationSpec& augmentation,
                          const TrainConfig& train, const EncoderConfig& config,
                          const TrainProgress& progress = {});

/// Directory with header.json plus one EMLT file per tensor.
void save_encoder(const EncoderParams& params, const std::filesystem::path& dir);
EncoderParams load_encoder(const std::filesystem::path& dir);

/// Content hash (hex) over configuration and weights.
std::string checkpoint_id(const EncoderParams& params);

}  // namespace embedloc

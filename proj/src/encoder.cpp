#include "embedloc/encoder.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "embedloc/config_json.hpp"
#include "embedloc/error.hpp"
#include "embedloc/hash.hpp"
#include "embedloc/parallel.hpp"
#include "embedloc/rng.hpp"
#include "embedloc/tensor_io.hpp"

namespace embedloc {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("encoder.embed_dim must be >= 1");
  if (hidden < 1) throw ConfigError("encoder.hidden must be >= 1");
  if (!(lag_min_seconds > 0.0)) throw ConfigError("encoder.lag_min_seconds must be > 0");
  if (!(lag_max_seconds >= lag_min_seconds)) {
    throw ConfigError("encoder.lag_max_seconds must be >= encoder.lag_min_seconds");
  }
  if (lag_step_frames < 1) throw ConfigError("encoder.lag_step_frames must be >= 1");
  if (!(window_seconds > 0.0)) throw ConfigError("encoder.window_seconds must be > 0");
}

std::vector<std::size_t> feature_lags(const EncoderConfig& config, const MelConfig& mel) {
  config.validate();
  const double fps = mel.frames_per_second();
  const auto lo = std::max<long>(1, std::lround(config.lag_min_seconds * fps));
  const auto hi = std::max(lo, std::lround(config.lag_max_seconds * fps));
  std::vector<std::size_t> lags;
  for (long l = lo; l <= hi; l += config.lag_step_frames) {
    lags.push_back(static_cast<std::size_t>(l));
  }
  return lags;
}

std::size_t feature_count(const EncoderConfig& config, const MelConfig& mel) {
  return static_cast<std::size_t>(mel.num_bands) + feature_lags(config, mel).size();
}

std::size_t min_window_frames(const EncoderConfig& config, const MelConfig& mel) {
  // At the largest lag, keep at least as many envelope products as the
  // smallest lag spans.
  const auto lags = feature_lags(config, mel);
  return lags.back() + lags.front() + 1;
}

Eigen::VectorXd encoder_features(const MelSpectrogram& window,
                                 const EncoderConfig& config) {
  const MelConfig& mel = window.config();
  const auto lags = feature_lags(config, mel);
  const std::size_t frames = window.num_frames();
  const std::size_t need = min_window_frames(config, mel);
  if (frames < need) {
    throw DataError("encoder window of " + std::to_string(frames) +
                    " frames is too short; need " + std::to_string(need));
  }
  const std::size_t bands = window.num_bands();
  Eigen::VectorXd f(static_cast<Eigen::Index>(bands + lags.size()));

  // Band means, and the onset envelope as positive spectral flux.
  std::vector<double> flux(frames - 1, 0.0);
  for (std::size_t u = 0; u < bands; ++u) {
    const auto b = window.band(u);
    double sum = b[0];
    for (std::size_t m = 1; m < frames; ++m) {
      sum += b[m];
      flux[m - 1] += std::max(0.0, b[m] - b[m - 1]);
    }
    f[static_cast<Eigen::Index>(u)] = sum / static_cast<double>(frames);
  }

  // Gaussian smoothing (sigma 2 frames) so onsets between frames still line
  // up at non-integer periods.
  const std::size_t n = flux.size();
  std::vector<double> env(n, 0.0);
  for (std::size_t m = 0; m < n; ++m) {
    for (int j = -6; j <= 6; ++j) {
      const long i = static_cast<long>(m) + j;
      if (i >= 0 && i < static_cast<long>(n)) {
        env[m] += std::exp(-0.125 * j * j) * flux[static_cast<std::size_t>(i)];
      }
    }
  }
  double mean = 0.0;
  for (double v : env) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double& v : env) {
    v -= mean;
    var += v * v;
  }
  var /= static_cast<double>(n);

  for (std::size_t k = 0; k < lags.size(); ++k) {
    double r = 0.0;
    if (var > 1e-12) {
      const std::size_t lag = lags[k];
      for (std::size_t m = 0; m + lag < n; ++m) r += env[m] * env[m + lag];
      r /= static_cast<double>(n - lag) * var;
    }
    f[static_cast<Eigen::Index>(bands + k)] = r;
  }
  return f;
}

// --- parameters -------------------------------------------------------------

void EncoderParams::validate() const {
  config.validate();
  const auto F = static_cast<Eigen::Index>(feature_count(config, mel));
  const Eigen::Index H = config.hidden, D = config.embed_dim;
  if (feature_mean.size() != F || feature_scale.size() != F || w1.rows() != H ||
      w1.cols() != F || b1.size() != H || w2.rows() != D || w2.cols() != H ||
      b2.size() != D) {
    throw ConfigError("encoder parameters do not match the encoder configuration");
  }
  if ((feature_scale.array() <= 0.0).any()) {
    throw ConfigError("encoder feature scale must be positive");
  }
}

EncoderParams init_encoder(const EncoderConfig& config, const MelConfig& mel,
                           std::uint64_t seed) {
  config.validate();
  mel.validate();
  EncoderParams p;
  p.config = config;
  p.mel = mel;
  p.seed = seed;
  const auto F = static_cast<Eigen::Index>(feature_count(config, mel));
  const Eigen::Index H = config.hidden, D = config.embed_dim;
  Rng rng(derive_seed(seed, {0x1417}));
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-a, a);
    }
    return w;
  };
  p.w1 = glorot(H, F);
  p.b1 = Eigen::VectorXd::Zero(H);
  p.w2 = glorot(D, H);
  p.b2 = Eigen::VectorXd::Zero(D);
  p.feature_mean = Eigen::VectorXd::Zero(F);
  p.feature_scale = Eigen::VectorXd::Ones(F);
  return p;
}

EncoderTape encoder_forward(const EncoderParams& p, const Eigen::MatrixXd& features) {
  if (features.cols() != p.w1.cols()) {
    throw DataError("encoder expects " + std::to_string(p.w1.cols()) +
                    " features per row, got " + std::to_string(features.cols()));
  }
  EncoderTape t;
  t.standardized = (features.rowwise() - p.feature_mean.transpose()).array().rowwise() /
                   p.feature_scale.transpose().array();
  t.hidden = ((t.standardized * p.w1.transpose()).rowwise() + p.b1.transpose())
                 .array()
                 .tanh()
                 .matrix();
  Eigen::MatrixXd out = (t.hidden * p.w2.transpose()).rowwise() + p.b2.transpose();
  t.norms = out.rowwise().norm();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (!(t.norms[i] > 0.0) || !std::isfinite(t.norms[i])) {
      throw NumericalError("encoder output row " + std::to_string(i) +
                           " has zero or non-finite norm");
    }
    out.row(i) /= t.norms[i];
  }
  t.output = std::move(out);
  return t;
}

EncoderGradients encoder_backward(const EncoderParams& p, const EncoderTape& t,
                                  const Eigen::MatrixXd& d_output) {
  const Eigen::MatrixXd& z = t.output;
  // Through the normalization: (I - z z^T) g / |h|.
  const Eigen::VectorXd dots = (z.array() * d_output.array()).rowwise().sum();
  Eigen::MatrixXd d_pre2 =
      (d_output.array() - z.array().colwise() * dots.array()).matrix();
  d_pre2.array().colwise() /= t.norms.array();

  EncoderGradients g;
  g.w2 = d_pre2.transpose() * t.hidden;
  g.b2 = d_pre2.colwise().sum().transpose();
  const Eigen::MatrixXd d_hidden = d_pre2 * p.w2;
  const Eigen::MatrixXd d_pre1 =
      (d_hidden.array() * (1.0 - t.hidden.array().square())).matrix();
  g.w1 = d_pre1.transpose() * t.standardized;
  g.b1 = d_pre1.colwise().sum().transpose();
  return g;
}

Eigen::MatrixXd encode_features(const EncoderParams& params,
                                const Eigen::MatrixXd& features) {
  return encoder_forward(params, features).output;
}

Eigen::VectorXd encode(const EncoderParams& params, const MelSpectrogram& window) {
  if (!(window.config() == params.mel)) {
    throw ConfigError("spectrogram configuration differs from the encoder's mel config");
  }
  const Eigen::VectorXd f = encoder_features(window, params.config);
  return encode_features(params, f.transpose()).row(0).transpose();
}

// --- loss -------------------------------------------------------------------

NtXent ntxent_loss(const Eigen::MatrixXd& e, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (e.rows() % 2 != 0) {
    throw ConfigError("NT-Xent needs an even number of rows (pairs 2i, 2i+1)");
  }
  const Eigen::Index n = e.rows();
  if (n < 4) {
    throw ConfigError("NT-Xent needs a batch of at least 2 pairs; no negatives exist");
  }
  const Eigen::VectorXd norms = e.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw DataError("NT-Xent input has a zero row");
  const Eigen::MatrixXd z = e.array().colwise() / norms.array();
  const Eigen::MatrixXd s = (z * z.transpose()) / temperature;

  NtXent out;
  out.per_anchor.resize(n);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);  // dL/dS
  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index pos = a ^ 1;
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b != a) peak = std::max(peak, s(a, b));
    }
    double denom = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b != a) denom += std::exp(s(a, b) - peak);
    }
    out.per_anchor[a] = peak + std::log(denom) - s(a, pos);
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b == a) continue;
      const double prob = std::exp(s(a, b) - peak) / denom;
      g(a, b) = (prob - (b == pos ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  out.loss = out.per_anchor.mean();

  // dL/dZ = (G + G^T) Z / t, then back through the row normalization.
  const Eigen::MatrixXd dz = ((g + g.transpose()) * z) / temperature;
  const Eigen::VectorXd dots = (z.array() * dz.array()).rowwise().sum();
  out.grad = (dz.array() - z.array().colwise() * dots.array()).matrix();
  out.grad.array().colwise() /= norms.array();
  return out;
}

// --- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_pairs < 2) throw ConfigError("train.batch_pairs must be >= 2");
  if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
  if (!(warmup_steps < total_steps)) {
    throw ConfigError("train.warmup_steps must be < train.total_steps");
  }
  if (!(peak_lr > 0.0)) throw ConfigError("train.peak_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train.momentum must be in [0, 1)");
  }
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (workers < 1) throw ConfigError("train.workers must be >= 1");
  if (stat_pairs < 1) throw ConfigError("train.stat_pairs must be >= 1");
  if (!(timing.context_seconds > 0.0) || !(timing.max_offset_seconds >= 0.0)) {
    throw ConfigError("train.pair timing must be positive");
  }
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step > c.total_steps) {
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(c.total_steps) + "]");
  }
  if (step < c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  }
  const double progress = static_cast<double>(step - c.warmup_steps) /
                          static_cast<double>(c.total_steps - c.warmup_steps);
  return c.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

// Stream keys for derive_seed.
constexpr std::uint64_t kStatsStream = 0x5747;
constexpr std::uint64_t kTrainStream = 0x7247;

struct PairSource {
  const Corpus& corpus;
  const AugmentationSpec& augmentation;
  const TrainConfig& train;
  const EncoderConfig& config;
  std::vector<std::size_t> usable;

  // Two augmented views of one pair, as feature rows 2i and 2i+1.
  void fill(std::uint64_t stream, std::uint64_t step, std::size_t i,
            Eigen::MatrixXd& rows) const {
    Rng pick(derive_seed(train.rng_seed, {stream, step, i}));
    std::optional<PairSample> pair;
    while (!pair) {
      const std::size_t t = usable[pick.index(usable.size())];
      pair = sample_pair(corpus.records[t], corpus.features[t], train.timing, pick);
    }
    const MelSpectrogram* views[2] = {&pair->anchor, &pair->positive};
    for (std::uint64_t v = 0; v < 2; ++v) {
      Rng rng(derive_seed(train.rng_seed, {stream, step, i, v + 1}));
      const auto out = apply_chain(*views[v], augmentation, rng);
      rows.row(static_cast<Eigen::Index>(2 * i + v)) =
          encoder_features(out, config).transpose();
    }
  }
};

}  // namespace

TrainResult train_encoder(const Corpus& corpus, const AugmentationSpec& augmentation,
                          const TrainConfig& train, const EncoderConfig& config,
                          const TrainProgress& progress) {
  train.validate();
  config.validate();
  augmentation.validate();
  if (corpus.records.empty()) throw DataError("training corpus is empty");
  if (std::abs(augmentation.context_seconds - train.timing.context_seconds) > 1e-9) {
    throw ConfigError("augment.context_seconds must equal train.pair_context_seconds");
  }
  const MelConfig& mel = corpus.features.front().config();
  const std::size_t out_frames = mel.frames_for_seconds(augmentation.output_seconds);
  if (out_frames < min_window_frames(config, mel)) {
    throw ConfigError("augment.output_seconds is too short for the encoder lags");
  }

  PairSource source{corpus, augmentation, train, config, {}};
  const double min_duration =
      2.0 * train.timing.context_seconds + train.timing.max_offset_seconds;
  const std::size_t context = mel.frames_for_seconds(train.timing.context_seconds);
  for (std::size_t i : corpus.indices(Split::train)) {
    if (corpus.records[i].duration_s >= min_duration &&
        corpus.features[i].num_frames() >= context) {
      source.usable.push_back(i);
    }
  }
  if (source.usable.size() < 2) {
    throw DataError("training needs >= 2 usable train tracks (>= " +
                    std::to_string(min_duration) + " s); found " +
                    std::to_string(source.usable.size()));
  }

  TrainResult result;
  EncoderParams& p = result.params;
  p = init_encoder(config, mel, train.rng_seed);
  p.chain_id = augmentation.chain_id();
  const auto F = static_cast<Eigen::Index>(feature_count(config, mel));

  // Input standardization from a sample of augmented views.
  {
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(2 * train.stat_pairs), F);
    parallel_for(train.stat_pairs, train.workers,
                 [&](std::size_t i) { source.fill(kStatsStream, 0, i, rows); });
    p.feature_mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - p.feature_mean.transpose();
    const Eigen::VectorXd sd =
        (centered.array().square().colwise().sum() / static_cast<double>(rows.rows()))
            .sqrt()
            .transpose();
    p.feature_scale = sd.cwiseMax(1e-2);
  }

  EncoderGradients velocity{Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols()),
                            Eigen::VectorXd::Zero(p.b1.size()),
                            Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols()),
                            Eigen::VectorXd::Zero(p.b2.size())};
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(2 * train.batch_pairs), F);
  result.losses.reserve(train.total_steps);
  for (std::size_t step = 0; step < train.total_steps; ++step) {
    parallel_for(train.batch_pairs, train.workers,
                 [&](std::size_t i) { source.fill(kTrainStream, step, i, rows); });
    EncoderTape tape;
    NtXent loss;
    try {
      tape = encoder_forward(p, rows);
      loss = ntxent_loss(tape.output, train.temperature);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at step " + std::to_string(step) + ": " +
                           e.what());
    }
    if (!std::isfinite(loss.loss)) {
      throw NumericalError("training diverged: non-finite loss at step " +
                           std::to_string(step));
    }
    const EncoderGradients g = encoder_backward(p, tape, loss.grad);
    const double lr = lr_at(step, train);
    velocity.w1 = train.momentum * velocity.w1 + g.w1;
    velocity.b1 = train.momentum * velocity.b1 + g.b1;
    velocity.w2 = train.momentum * velocity.w2 + g.w2;
    velocity.b2 = train.momentum * velocity.b2 + g.b2;
    p.w1 -= lr * velocity.w1;
    p.b1 -= lr * velocity.b1;
    p.w2 -= lr * velocity.w2;
    p.b2 -= lr * velocity.b2;
    p.step = step + 1;
    result.losses.push_back(loss.loss);
    if (progress) progress(step, loss.loss);
  }
  return result;
}

// --- checkpoint -------------------------------------------------------------

namespace {

Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  // Row-major payload.
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
    }
  }
  return t;
}

Tensor vector_tensor(const Eigen::VectorXd& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    t.data[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  }
  return t;
}

Eigen::MatrixXd tensor_matrix(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 2) throw DataError(name + ": expected a 2-d tensor");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dims[0]),
                    static_cast<Eigen::Index>(t.dims[1]));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = t.data[static_cast<std::size_t>(i * m.cols() + j)];
    }
  }
  return m;
}

Eigen::VectorXd tensor_vector(const Tensor& t, const std::string& name) {
  if (t.dims.size() != 1) throw DataError(name + ": expected a 1-d tensor");
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.dims[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = t.data[static_cast<std::size_t>(i)];
  return v;
}

json encoder_header(const EncoderParams& p) {
  return {{"format", "embedloc-encoder"},
          {"version", 1},
          {"feature_dim", p.w1.cols()},
          {"encoder", to_json(p.config)},
          {"mel", to_json(p.mel)},
          {"chain_id", p.chain_id},
          {"seed", p.seed},
          {"step", p.step}};
}

}  // namespace

std::string checkpoint_id(const EncoderParams& p) {
  // Hash the float32 forms so that a saved and reloaded checkpoint keeps
  // its id.
  Fnv64 h;
  h.update(encoder_header(p).dump());
  for (const Tensor& t : {vector_tensor(p.feature_mean), vector_tensor(p.feature_scale),
                          matrix_tensor(p.w1), vector_tensor(p.b1), matrix_tensor(p.w2),
                          vector_tensor(p.b2)}) {
    h.update_values(std::span<const float>(t.data));
  }
  return h.hex();
}

void save_encoder(const EncoderParams& p, const std::filesystem::path& dir) {
  p.validate();
  std::filesystem::create_directories(dir);
  json header = encoder_header(p);
  header["checkpoint_id"] = checkpoint_id(p);
  std::ofstream out(dir / "header.json");
  if (!out) throw DataError("cannot write " + (dir / "header.json").string());
  out << header.dump(2) << "\n";
  write_tensor(dir / "feature_mean.emlt", vector_tensor(p.feature_mean));
  write_tensor(dir / "feature_scale.emlt", vector_tensor(p.feature_scale));
  write_tensor(dir / "w1.emlt", matrix_tensor(p.w1));
  write_tensor(dir / "b1.emlt", vector_tensor(p.b1));
  write_tensor(dir / "w2.emlt", matrix_tensor(p.w2));
  write_tensor(dir / "b2.emlt", vector_tensor(p.b2));
}

EncoderParams load_encoder(const std::filesystem::path& dir) {
  std::ifstream in(dir / "header.json");
  if (!in) throw DataError("missing encoder checkpoint header in " + dir.string());
  json header;
  try {
    header = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("bad encoder header " + (dir / "header.json").string() + ": " + e.what());
  }
  if (header.value("format", "") != "embedloc-encoder" || header.value("version", 0) != 1) {
    throw DataError("not an embedloc encoder checkpoint: " + dir.string());
  }
  EncoderParams p;
  try {
    p.config = encoder_config_from_json(header.at("encoder"), "encoder");
    p.mel = mel_config_from_json(header.at("mel"), "mel");
    p.chain_id = header.at("chain_id").get<std::string>();
    p.seed = header.at("seed").get<std::uint64_t>();
    p.step = header.at("step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("bad encoder header " + dir.string() + ": " + e.what());
  }
  p.feature_mean = tensor_vector(read_tensor(dir / "feature_mean.emlt"), "feature_mean");
  p.feature_scale = tensor_vector(read_tensor(dir / "feature_scale.emlt"), "feature_scale");
  p.w1 = tensor_matrix(read_tensor(dir / "w1.emlt"), "w1");
  p.b1 = tensor_vector(read_tensor(dir / "b1.emlt"), "b1");
  p.w2 = tensor_matrix(read_tensor(dir / "w2.emlt"), "w2");
  p.b2 = tensor_vector(read_tensor(dir / "b2.emlt"), "b2");
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt encoder checkpoint: ") + e.what());
  }
  return p;
}

}  // namespace embedloc

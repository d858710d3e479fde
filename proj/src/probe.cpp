#include "embedloc/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <limits>
#include <set>
#include <sstream>

#include "embedloc/config_json.hpp"
#include "embedloc/error.hpp"
#include "embedloc/locality.hpp"
#include "embedloc/rng.hpp"
#include "embedloc/tensor_io.hpp"

namespace embedloc {

using nlohmann::json;

void ProbeConfig::validate() const {
  if (hidden < 1) throw ConfigError("probe.hidden must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("probe.dropout must be in [0, 1)");
  if (batch < 1) throw ConfigError("probe.batch must be >= 1");
  if (steps < 1) throw ConfigError("probe.steps must be >= 1");
  if (!(warmup_steps < steps)) throw ConfigError("probe.warmup_steps must be < probe.steps");
  if (!(peak_lr > 0.0)) throw ConfigError("probe.peak_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("probe.momentum must be in [0, 1)");
  if (smoothing_taps < 1 || smoothing_taps % 2 == 0) {
    throw ConfigError("probe.smoothing_taps must be odd");
  }
  if (!(tolerance > 0.0)) throw ConfigError("probe.tolerance must be > 0");
}

json to_json(const ProbeConfig& c) {
  return {{"hidden", c.hidden},           {"dropout", c.dropout},
          {"batch", c.batch},             {"steps", c.steps},
          {"warmup_steps", c.warmup_steps}, {"peak_lr", c.peak_lr},
          {"momentum", c.momentum},       {"rng_seed", c.rng_seed},
          {"smoothing_taps", c.smoothing_taps}, {"tolerance", c.tolerance}};
}

ProbeConfig probe_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"hidden", "dropout", "batch", "steps", "warmup_steps", "peak_lr",
                          "momentum", "rng_seed", "smoothing_taps", "tolerance"},
                      where);
  ProbeConfig c;
  read_json_field(j, "hidden", c.hidden, where);
  read_json_field(j, "dropout", c.dropout, where);
  read_json_field(j, "batch", c.batch, where);
  read_json_field(j, "steps", c.steps, where);
  read_json_field(j, "warmup_steps", c.warmup_steps, where);
  read_json_field(j, "peak_lr", c.peak_lr, where);
  read_json_field(j, "momentum", c.momentum, where);
  read_json_field(j, "rng_seed", c.rng_seed, where);
  read_json_field(j, "smoothing_taps", c.smoothing_taps, where);
  read_json_field(j, "tolerance", c.tolerance, where);
  c.validate();
  return c;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// Same warmup + cosine shape as the encoder schedule.
double probe_lr(std::size_t step, const ProbeConfig& c) {
  TrainConfig t;
  t.total_steps = c.steps;
  t.warmup_steps = c.warmup_steps;
  t.peak_lr = c.peak_lr;
  return lr_at(step, t);
}

}  // namespace

ProbeTrainResult train_probe(const EmbeddingSet& set, const std::vector<TrackRecord>& records,
                             const ProbeConfig& config) {
  config.validate();
  if (set.size() == 0) throw DataError("probe training set is empty");
  const auto rec = align_records(set, records);
  std::vector<std::string> unlabelled;
  std::vector<int> labels;
  for (const auto* r : rec) {
    if (!r->bpm) {
      unlabelled.push_back(r->track_id);
      continue;
    }
    labels.push_back(static_cast<int>(std::lround(*r->bpm)) - kProbeMinBpm);
  }
  if (!unlabelled.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unlabelled.size(); ++i) {
      list += (i ? ", " : "") + unlabelled[i];
    }
    throw DataError("probe training tracks without bpm: " + list);
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) {
    throw DataError("probe training needs at least two distinct BPM classes");
  }

  const auto D = static_cast<Eigen::Index>(set.dim());
  const auto H = static_cast<Eigen::Index>(config.hidden);
  const Eigen::Index C = kProbeClasses;
  ProbeTrainResult result;
  ProbeModel& m = result.model;
  m.config = config;
  m.embedding_checkpoint_id = set.checkpoint_id;
  Rng init(derive_seed(config.rng_seed, {0x9b0e}));
  auto he = [&](Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(cols));
    Eigen::MatrixXd w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = init.uniform(-a, a);
    }
    return w;
  };
  m.w1 = he(H, D);
  m.b1 = Eigen::VectorXd::Zero(H);
  m.w2 = he(C, H) * 0.1;
  m.b2 = Eigen::VectorXd::Zero(C);

  Eigen::MatrixXd v_w1 = Eigen::MatrixXd::Zero(H, D), v_w2 = Eigen::MatrixXd::Zero(C, H);
  Eigen::VectorXd v_b1 = Eigen::VectorXd::Zero(H), v_b2 = Eigen::VectorXd::Zero(C);
  const double keep = 1.0 - config.dropout;
  const auto B = static_cast<Eigen::Index>(config.batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.rng_seed, {0x57e9, step}));
    Eigen::MatrixXd x(D, B);
    std::vector<int> y(config.batch);
    for (Eigen::Index b = 0; b < B; ++b) {
      const std::size_t i = rng.index(set.size());
      x.col(b) = set.vector(i);
      y[static_cast<std::size_t>(b)] = labels[i];
    }
    // Inverted dropout on the hidden layer.
    Eigen::MatrixXd pre = (m.w1 * x).colwise() + m.b1;
    Eigen::MatrixXd mask(H, B);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
    const Eigen::MatrixXd h = (pre.array().max(0.0) * mask.array()).matrix();
    const Eigen::MatrixXd logits = (m.w2 * h).colwise() + m.b2;

    double loss = 0.0;
    Eigen::MatrixXd d_logits(C, B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::VectorXd p = softmax(logits.col(b));
      const int label = y[static_cast<std::size_t>(b)];
      loss -= std::log(std::max(p[label], 1e-300));
      d_logits.col(b) = p;
      d_logits(label, b) -= 1.0;
    }
    loss /= static_cast<double>(B);
    d_logits /= static_cast<double>(B);
    if (!std::isfinite(loss)) {
      throw NumericalError("probe training diverged at step " + std::to_string(step));
    }
    const Eigen::MatrixXd d_h = m.w2.transpose() * d_logits;
    const Eigen::MatrixXd d_pre =
        (d_h.array() * mask.array() * (pre.array() > 0.0).cast<double>()).matrix();

    const double lr = probe_lr(step, config);
    v_w2 = config.momentum * v_w2 + d_logits * h.transpose();
    v_b2 = config.momentum * v_b2 + d_logits.rowwise().sum();
    v_w1 = config.momentum * v_w1 + d_pre * x.transpose();
    v_b1 = config.momentum * v_b1 + d_pre.rowwise().sum();
    m.w2 -= lr * v_w2;
    m.b2 -= lr * v_b2;
    m.w1 -= lr * v_w1;
    m.b1 -= lr * v_b1;
    result.losses.push_back(loss);
  }
  return result;
}

Eigen::VectorXd probe_scores(const ProbeModel& m, const Eigen::VectorXd& embedding) {
  if (static_cast<std::size_t>(embedding.size()) != m.input_dim()) {
    throw DataError("probe expects " + std::to_string(m.input_dim()) +
                    "-d embeddings, got " + std::to_string(embedding.size()));
  }
  const Eigen::VectorXd h = ((m.w1 * embedding) + m.b1).cwiseMax(0.0);
  return softmax(m.w2 * h + m.b2);
}

std::vector<double> hamming_window(std::size_t taps) {
  if (taps == 1) return {1.0};
  std::vector<double> w(taps);
  for (std::size_t n = 0; n < taps; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(taps - 1));
  }
  return w;
}

int smoothed_argmax_bpm(const Eigen::VectorXd& scores, std::size_t taps) {
  if (scores.size() != kProbeClasses) {
    throw DataError("tempo scores must have " + std::to_string(kProbeClasses) + " entries");
  }
  const auto w = hamming_window(taps);
  const auto half = static_cast<long>(taps / 2);
  const long n = scores.size();
  std::vector<double> smoothed(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long j = -half; j <= half; ++j) {
      const long k = i + j;
      if (k >= 0 && k < n) acc += w[static_cast<std::size_t>(j + half)] * scores[k];
    }
    smoothed[static_cast<std::size_t>(i)] = acc;
  }
  // Values within rounding of the maximum count as tied so that the
  // lowest-BPM rule does not depend on summation order.
  const double top = *std::max_element(smoothed.begin(), smoothed.end());
  const double slack = kTieTolerance * std::abs(top);
  long best = 0;
  while (smoothed[static_cast<std::size_t>(best)] < top - slack) ++best;
  return kProbeMinBpm + static_cast<int>(best);
}

int estimate_tempo(const ProbeModel& model, const Eigen::VectorXd& embedding) {
  return smoothed_argmax_bpm(probe_scores(model, embedding), model.config.smoothing_taps);
}

bool acc1_hit(double estimate, double truth, double tolerance) {
  return std::abs(estimate - truth) <= tolerance * truth;
}

bool acc2_hit(double estimate, double truth, double tolerance) {
  for (double o : tempo_octaves()) {
    if (std::abs(estimate - o * truth) <= tolerance * o * truth) return true;
  }
  return false;
}

namespace {

double accuracy(const std::vector<double>& est, const std::vector<double>& truth,
                double tolerance, bool octaves) {
  if (est.empty()) throw DataError("tempo accuracy is undefined for an empty list");
  if (est.size() != truth.size()) {
    throw DataError("tempo estimates and truths differ in length");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    hits += octaves ? acc2_hit(est[i], truth[i], tolerance) : acc1_hit(est[i], truth[i], tolerance);
  }
  return static_cast<double>(hits) / static_cast<double>(est.size());
}

}  // namespace

double acc1(const std::vector<double>& est, const std::vector<double>& truth, double tolerance) {
  return accuracy(est, truth, tolerance, false);
}

double acc2(const std::vector<double>& est, const std::vector<double>& truth, double tolerance) {
  return accuracy(est, truth, tolerance, true);
}

ProbeEvaluation evaluate_probe(const ProbeModel& model, const EmbeddingSet& set,
                               const std::vector<TrackRecord>& records) {
  const auto rec = align_records(set, records);
  ProbeEvaluation e;
  std::vector<double> est;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (!rec[i]->bpm) continue;
    e.track_ids.push_back(set.ids()[i]);
    e.truths.push_back(*rec[i]->bpm);
    e.estimates.push_back(estimate_tempo(model, set.vector(i)));
    est.push_back(e.estimates.back());
  }
  e.acc1 = acc1(est, e.truths, model.config.tolerance);
  e.acc2 = acc2(est, e.truths, model.config.tolerance);
  return e;
}

std::string to_csv(const ProbeEvaluation& e, double tolerance) {
  std::string out = "track_id,truth,estimate,acc1_hit,acc2_hit\n";
  for (std::size_t i = 0; i < e.track_ids.size(); ++i) {
    std::ostringstream truth;
    truth.precision(17);
    truth << e.truths[i];
    out += e.track_ids[i] + "," + truth.str() + "," + std::to_string(e.estimates[i]) + "," +
           (acc1_hit(e.estimates[i], e.truths[i], tolerance) ? "1" : "0") + "," +
           (acc2_hit(e.estimates[i], e.truths[i], tolerance) ? "1" : "0") + "\n";
  }
  return out;
}

void save_probe(const ProbeModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const json header = {{"format", "embedloc-probe"},
                       {"version", 1},
                       {"input_dim", m.input_dim()},
                       {"classes", kProbeClasses},
                       {"min_bpm", kProbeMinBpm},
                       {"config", to_json(m.config)},
                       {"embedding_checkpoint_id", m.embedding_checkpoint_id}};
  std::ofstream out(dir / "header.json");
  if (!out) throw DataError("cannot write " + (dir / "header.json").string());
  out << header.dump(2) << "\n";
  auto matrix = [](const Eigen::MatrixXd& a) {
    std::vector<double> flat(static_cast<std::size_t>(a.size()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) flat[static_cast<std::size_t>(i * a.cols() + j)] = a(i, j);
    }
    return make_tensor(flat, static_cast<std::uint64_t>(a.rows()), static_cast<std::uint64_t>(a.cols()));
  };
  write_tensor(dir / "w1.emlt", matrix(m.w1));
  write_tensor(dir / "b1.emlt", matrix(m.b1));
  write_tensor(dir / "w2.emlt", matrix(m.w2));
  write_tensor(dir / "b2.emlt", matrix(m.b2));
}

ProbeModel load_probe(const std::filesystem::path& dir) {
  std::ifstream in(dir / "header.json");
  if (!in) throw DataError("missing probe header in " + dir.string());
  json header;
  try {
    header = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("bad probe header in " + dir.string() + ": " + e.what());
  }
  if (header.value("format", "") != "embedloc-probe") {
    throw DataError("not an embedloc probe: " + dir.string());
  }
  ProbeModel m;
  m.config = probe_config_from_json(header.at("config"), "probe");
  m.embedding_checkpoint_id = header.value("embedding_checkpoint_id", "");
  auto matrix = [&](const char* name) {
    const Tensor t = read_tensor(dir / name);
    if (t.dims.size() != 2) throw DataError(std::string(name) + ": expected a 2-d tensor");
    Eigen::MatrixXd a(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = t.data[static_cast<std::size_t>(i * a.cols() + j)];
    }
    return a;
  };
  m.w1 = matrix("w1.emlt");
  m.b1 = matrix("b1.emlt").col(0);
  m.w2 = matrix("w2.emlt");
  m.b2 = matrix("b2.emlt").col(0);
  if (m.w1.rows() != static_cast<Eigen::Index>(m.config.hidden) || m.b1.size() != m.w1.rows() ||
      m.w2.cols() != m.w1.rows() || m.w2.rows() != kProbeClasses || m.b2.size() != kProbeClasses) {
    throw DataError("probe tensors in " + dir.string() + " have inconsistent shapes");
  }
  return m;
}

}  // namespace embedloc

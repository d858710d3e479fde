#include "embedloc/config_json.hpp"

#include <algorithm>

namespace embedloc {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(where + "." + key + ": unknown field");
  }
}

json to_json(const MelConfig& c) {
  return {{"sample_rate_hz", c.sample_rate_hz}, {"dft_size", c.dft_size},
          {"window_length", c.window_length},   {"hop", c.hop},
          {"num_bands", c.num_bands},           {"window", "hann"},
          {"log_floor", c.log_floor}};
}

MelConfig mel_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"sample_rate_hz", "dft_size", "window_length", "hop",
                          "num_bands", "window", "log_floor"},
                      where);
  MelConfig c;
  read_json_field(j, "sample_rate_hz", c.sample_rate_hz, where);
  read_json_field(j, "dft_size", c.dft_size, where);
  read_json_field(j, "window_length", c.window_length, where);
  read_json_field(j, "hop", c.hop, where);
  read_json_field(j, "num_bands", c.num_bands, where);
  read_json_field(j, "log_floor", c.log_floor, where);
  std::string window = "hann";
  read_json_field(j, "window", window, where);
  if (window != "hann") throw ConfigError(where + ".window: only 'hann' is supported");
  c.validate();
  return c;
}

json to_json(const SamplingRanges& r) {
  return {{"tau", {r.tau_min, r.tau_max}},
          {"mu", {r.mu_min, r.mu_max}},
          {"lowpass_hz", {r.lowpass_min_hz, r.lowpass_max_hz}},
          {"highpass_hz", {r.highpass_min_hz, r.highpass_max_hz}},
          {"rrc_time", {r.rrc_time_min, r.rrc_time_max}},
          {"rrc_freq", {r.rrc_freq_min, r.rrc_freq_max}}};
}

namespace {

void read_range(const json& j, const char* key, double& lo, double& hi,
                const std::string& where) {
  std::vector<double> v{lo, hi};
  read_json_field(j, key, v, where);
  if (v.size() != 2 || !(v[0] > 0.0) || !(v[0] <= v[1])) {
    throw ConfigError(where + "." + key + ": expected [lo, hi] with 0 < lo <= hi");
  }
  lo = v[0];
  hi = v[1];
}

}  // namespace

SamplingRanges sampling_ranges_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"tau", "mu", "lowpass_hz", "highpass_hz", "rrc_time", "rrc_freq"},
                      where);
  SamplingRanges r;
  read_range(j, "tau", r.tau_min, r.tau_max, where);
  read_range(j, "mu", r.mu_min, r.mu_max, where);
  read_range(j, "lowpass_hz", r.lowpass_min_hz, r.lowpass_max_hz, where);
  read_range(j, "highpass_hz", r.highpass_min_hz, r.highpass_max_hz, where);
  read_range(j, "rrc_time", r.rrc_time_min, r.rrc_time_max, where);
  read_range(j, "rrc_freq", r.rrc_freq_min, r.rrc_freq_max, where);
  return r;
}

json to_json(const AugmentationSpec& s) {
  return {{"chain", s.chain_id()},
          {"rng_seed", s.rng_seed},
          {"context_seconds", s.context_seconds},
          {"output_seconds", s.output_seconds},
          {"ranges", to_json(s.ranges)}};
}

AugmentationSpec augmentation_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"chain", "rng_seed", "context_seconds", "output_seconds", "ranges"},
                      where);
  AugmentationSpec s;
  std::string chain = "none";
  read_json_field(j, "chain", chain, where);
  s.chain = parse_chain(chain);
  read_json_field(j, "rng_seed", s.rng_seed, where);
  read_json_field(j, "context_seconds", s.context_seconds, where);
  read_json_field(j, "output_seconds", s.output_seconds, where);
  if (j.contains("ranges")) {
    s.ranges = sampling_ranges_from_json(j["ranges"], where + ".ranges");
  }
  s.validate();
  return s;
}

json to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"lag_min_seconds", c.lag_min_seconds},
          {"lag_max_seconds", c.lag_max_seconds},
          {"lag_step_frames", c.lag_step_frames},
          {"window_seconds", c.window_seconds}};
}

EncoderConfig encoder_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"embed_dim", "hidden", "lag_min_seconds", "lag_max_seconds",
                          "lag_step_frames", "window_seconds"},
                      where);
  EncoderConfig c;
  read_json_field(j, "embed_dim", c.embed_dim, where);
  read_json_field(j, "hidden", c.hidden, where);
  read_json_field(j, "lag_min_seconds", c.lag_min_seconds, where);
  read_json_field(j, "lag_max_seconds", c.lag_max_seconds, where);
  read_json_field(j, "lag_step_frames", c.lag_step_frames, where);
  read_json_field(j, "window_seconds", c.window_seconds, where);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"batch_pairs", c.batch_pairs},
          {"total_steps", c.total_steps},
          {"warmup_steps", c.warmup_steps},
          {"peak_lr", c.peak_lr},
          {"momentum", c.momentum},
          {"temperature", c.temperature},
          {"rng_seed", c.rng_seed},
          {"workers", c.workers},
          {"stat_pairs", c.stat_pairs},
          {"pair_context_seconds", c.timing.context_seconds},
          {"pair_max_offset_seconds", c.timing.max_offset_seconds}};
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"batch_pairs", "total_steps", "warmup_steps", "peak_lr",
                          "momentum", "temperature", "rng_seed", "workers", "stat_pairs",
                          "pair_context_seconds", "pair_max_offset_seconds"},
                      where);
  TrainConfig c;
  read_json_field(j, "batch_pairs", c.batch_pairs, where);
  read_json_field(j, "total_steps", c.total_steps, where);
  read_json_field(j, "warmup_steps", c.warmup_steps, where);
  read_json_field(j, "peak_lr", c.peak_lr, where);
  read_json_field(j, "momentum", c.momentum, where);
  read_json_field(j, "temperature", c.temperature, where);
  read_json_field(j, "rng_seed", c.rng_seed, where);
  read_json_field(j, "workers", c.workers, where);
  read_json_field(j, "stat_pairs", c.stat_pairs, where);
  read_json_field(j, "pair_context_seconds", c.timing.context_seconds, where);
  read_json_field(j, "pair_max_offset_seconds", c.timing.max_offset_seconds, where);
  c.validate();
  return c;
}

}  // namespace embedloc

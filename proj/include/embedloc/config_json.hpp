#pragma once

#include <initializer_list>
#include <json.hpp>
#include <string>

#include "embedloc/augment.hpp"
#include "embedloc/corpus.hpp"
#include "embedloc/encoder.hpp"
#include "embedloc/error.hpp"
#include "embedloc/melfront.hpp"

namespace embedloc {

// JSON forms of the configuration structs. Readers start from defaults,
// overwrite the keys present and reject unknown keys with a ConfigError
// naming the dotted path (`where` is the path prefix).

nlohmann::json to_json(const MelConfig& c);
MelConfig mel_config_from_json(const nlohmann::json& j, const std::string& where = "mel");

nlohmann::json to_json(const SamplingRanges& r);
SamplingRanges sampling_ranges_from_json(const nlohmann::json& j,
                                         const std::string& where = "augment.ranges");

nlohmann::json to_json(const AugmentationSpec& s);
AugmentationSpec augmentation_from_json(const nlohmann::json& j,
                                        const std::string& where = "augment");

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j,
                                       const std::string& where = "encoder");

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const std::string& where = "train");

/// Shared helper: copies j[key] into `out` when present, with a ConfigError
/// naming where.key on a type mismatch.
template <class T>
void read_json_field(const nlohmann::json& j, const char* key, T& out,
                     const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + it->dump() + ")");
  }
}

/// Throws ConfigError for keys of `j` outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace embedloc

#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "embedloc/corpus.hpp"
#include "embedloc/encoder.hpp"

namespace embedloc {

/// Track-average embeddings, one unit row per track id.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dim) : dim_(dim) {}

  /// Throws DataError on a duplicate id, a dimension mismatch or a row
  /// whose norm is not 1 within 1e-6.
  void add(const std::string& id, const Eigen::VectorXd& vector);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::MatrixXd& vectors() const { return vectors_; }
  Eigen::VectorXd vector(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)).transpose(); }
  std::optional<std::size_t> find(const std::string& id) const;
  /// Like find but throws DataError for an unknown id.
  std::size_t index_of(const std::string& id) const;

  std::string checkpoint_id;  // encoder the vectors came from
  std::string chain_id;       // augmentation chain it was trained with

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  Eigen::MatrixXd vectors_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct EmbedOptions {
  double window_seconds = 3.0;
  double hop_seconds = 3.0;  // = window: consecutive, non-overlapping
  void validate() const;
};

/// Encodes consecutive windows, averages the outputs and renormalizes.
/// Returns nullopt when the track is shorter than one window.
std::optional<Eigen::VectorXd> embed_track(const MelSpectrogram& features,
                                           const EncoderParams& params,
                                           const EmbedOptions& options = {});

struct EmbedResult {
  EmbeddingSet set;
  std::vector<std::string> skipped;  // too short for one window
};

/// Embeds the listed corpus indices (all tracks when empty).
EmbedResult embed_corpus(const Corpus& corpus, const EncoderParams& params,
                         const EmbedOptions& options = {},
                         const std::vector<std::size_t>& indices = {},
                         std::size_t workers = 1);

struct Neighbor {
  std::size_t index = 0;
  std::string id;
  double distance = 0.0;  // 1 - cos, clamped to [0, 2]

  bool operator==(const Neighbor&) const = default;
};

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Exact k nearest neighbours by cosine distance, excluding the query;
/// ties go to the smaller track id. Throws ConfigError unless k < size.
std::vector<Neighbor> knn(const EmbeddingSet& set, std::size_t query, std::size_t k);
std::vector<Neighbor> knn(const EmbeddingSet& set, const std::string& query_id,
                          std::size_t k);

/// knn for every track at once (row i = neighbours of track i).
std::vector<std::vector<Neighbor>> knn_table(const EmbeddingSet& set, std::size_t k);

/// <dir>/header.json (dim, provenance, ids in order) + <dir>/vectors.emlt.
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir,
                     const nlohmann::json& extra_header = {});
EmbeddingSet load_embeddings(const std::filesystem::path& dir);

}  // namespace embedloc

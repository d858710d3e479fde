#include "embedloc/embedspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "embedloc/error.hpp"
#include "embedloc/parallel.hpp"
#include "embedloc/tensor_io.hpp"

namespace embedloc {

using nlohmann::json;

void EmbeddingSet::add(const std::string& id, const Eigen::VectorXd& v) {
  if (dim_ == 0) dim_ = static_cast<std::size_t>(v.size());
  if (static_cast<std::size_t>(v.size()) != dim_) {
    throw DataError("embedding for '" + id + "' has dimension " + std::to_string(v.size()) +
                    ", expected " + std::to_string(dim_));
  }
  if (std::abs(v.norm() - 1.0) > 1e-6) {
    throw DataError("embedding for '" + id + "' is not unit norm");
  }
  if (lookup_.count(id)) throw DataError("duplicate embedding id '" + id + "'");
  lookup_.emplace(id, ids_.size());
  ids_.push_back(id);
  vectors_.conservativeResize(static_cast<Eigen::Index>(ids_.size()),
                              static_cast<Eigen::Index>(dim_));
  vectors_.row(vectors_.rows() - 1) = v.transpose();
}

std::optional<std::size_t> EmbeddingSet::find(const std::string& id) const {
  const auto it = lookup_.find(id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::index_of(const std::string& id) const {
  const auto i = find(id);
  if (!i) throw DataError("unknown track id '" + id + "' in embedding set");
  return *i;
}

void EmbedOptions::validate() const {
  if (!(window_seconds > 0.0)) throw ConfigError("embed.window_seconds must be > 0");
  if (!(hop_seconds > 0.0)) throw ConfigError("embed.hop_seconds must be > 0");
}

std::optional<Eigen::VectorXd> embed_track(const MelSpectrogram& features,
                                           const EncoderParams& params,
                                           const EmbedOptions& options) {
  options.validate();
  const MelConfig& mel = features.config();
  if (!(mel == params.mel)) {
    throw ConfigError("spectrogram configuration differs from the encoder's mel config");
  }
  const std::size_t window = mel.frames_for_seconds(options.window_seconds);
  const std::size_t hop = std::max<std::size_t>(1, mel.frames_for_seconds(options.hop_seconds));
  if (features.num_frames() < window) return std::nullopt;
  const std::size_t count = (features.num_frames() - window) / hop + 1;
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(count),
                       static_cast<Eigen::Index>(feature_count(params.config, mel)));
  for (std::size_t w = 0; w < count; ++w) {
    rows.row(static_cast<Eigen::Index>(w)) =
        encoder_features(features.slice(w * hop, window), params.config).transpose();
  }
  Eigen::VectorXd mean = encode_features(params, rows).colwise().mean().transpose();
  const double norm = mean.norm();
  if (!(norm > 1e-12)) {
    throw NumericalError("window embeddings of '" + features.source_id() +
                         "' cancel out; track average undefined");
  }
  return mean / norm;
}

EmbedResult embed_corpus(const Corpus& corpus, const EncoderParams& params,
                         const EmbedOptions& options,
                         const std::vector<std::size_t>& indices, std::size_t workers) {
  std::vector<std::size_t> order = indices;
  if (order.empty()) {
    order.resize(corpus.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  }
  std::vector<std::optional<Eigen::VectorXd>> vectors(order.size());
  parallel_for(order.size(), workers, [&](std::size_t i) {
    vectors[i] = embed_track(corpus.features.at(order[i]), params, options);
  });
  EmbedResult result;
  result.set = EmbeddingSet(static_cast<std::size_t>(params.config.embed_dim));
  result.set.checkpoint_id = checkpoint_id(params);
  result.set.chain_id = params.chain_id;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& id = corpus.records[order[i]].track_id;
    if (vectors[i]) {
      result.set.add(id, *vectors[i]);
    } else {
      result.skipped.push_back(id);
    }
  }
  return result;
}

double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double d = 1.0 - a.dot(b) / (a.norm() * b.norm());
  return std::clamp(d, 0.0, 2.0);
}

std::vector<Neighbor> knn(const EmbeddingSet& set, std::size_t query, std::size_t k) {
  if (query >= set.size()) throw DataError("knn query index out of range");
  if (k >= set.size()) {
    throw ConfigError("k = " + std::to_string(k) + " must be smaller than the set size " +
                      std::to_string(set.size()));
  }
  const Eigen::VectorXd dots = set.vectors() * set.vectors().row(static_cast<Eigen::Index>(query)).transpose();
  std::vector<Neighbor> all;
  all.reserve(set.size() - 1);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i == query) continue;
    all.push_back({i, set.ids()[i], std::clamp(1.0 - dots[static_cast<Eigen::Index>(i)], 0.0, 2.0)});
  }
  const auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
  all.resize(k);
  return all;
}

std::vector<Neighbor> knn(const EmbeddingSet& set, const std::string& query_id,
                          std::size_t k) {
  return knn(set, set.index_of(query_id), k);
}

std::vector<std::vector<Neighbor>> knn_table(const EmbeddingSet& set, std::size_t k) {
  std::vector<std::vector<Neighbor>> table(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) table[i] = knn(set, i, k);
  return table;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir,
                     const json& extra_header) {
  std::filesystem::create_directories(dir);
  json header = {{"format", "embedloc-embeddings"},
                 {"version", 1},
                 {"dim", set.dim()},
                 {"checkpoint_id", set.checkpoint_id},
                 {"chain_id", set.chain_id},
                 {"ids", set.ids()}};
  if (extra_header.is_object()) {
    for (const auto& [key, value] : extra_header.items()) header[key] = value;
  }
  std::ofstream out(dir / "header.json");
  if (!out) throw DataError("cannot write " + (dir / "header.json").string());
  out << header.dump(2) << "\n";
  std::vector<double> flat(set.size() * set.dim());
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < set.dim(); ++j) {
      flat[i * set.dim() + j] = set.vectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  write_tensor(dir / "vectors.emlt", make_tensor(flat, set.size(), set.dim()));
}

EmbeddingSet load_embeddings(const std::filesystem::path& dir) {
  std::ifstream in(dir / "header.json");
  if (!in) throw DataError("missing embedding header in " + dir.string());
  json header;
  try {
    header = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("bad embedding header in " + dir.string() + ": " + e.what());
  }
  if (header.value("format", "") != "embedloc-embeddings") {
    throw DataError("not an embedloc embedding set: " + dir.string());
  }
  const auto ids = header.at("ids").get<std::vector<std::string>>();
  const auto dim = header.at("dim").get<std::size_t>();
  const Tensor t = read_tensor(dir / "vectors.emlt");
  if (t.dims.size() != 2 || t.dims[0] != ids.size() || t.dims[1] != dim) {
    throw DataError("embedding matrix shape does not match its header in " + dir.string());
  }
  EmbeddingSet set(dim);
  set.checkpoint_id = header.value("checkpoint_id", "");
  set.chain_id = header.value("chain_id", "");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) v[static_cast<Eigen::Index>(j)] = t.data[i * dim + j];
    // Stored as float32; restore exact unit norm in double.
    const double norm = v.norm();
    if (std::abs(norm - 1.0) > 1e-5) {
      throw DataError("stored embedding for '" + ids[i] + "' is not unit norm");
    }
    set.add(ids[i], v / norm);
  }
  return set;
}

}  // namespace embedloc

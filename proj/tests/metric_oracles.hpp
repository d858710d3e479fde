#pragma once

// Brute-force reference implementations of the neighbourhood search and
// metrics, written independently of src/ (full sorts, explicit loops,
// octave candidates as divisions).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "embedloc/corpus.hpp"
#include "embedloc/embedspace.hpp"
#include "embedloc/rng.hpp"

namespace embedloc::oracle {

struct Item {
  std::string id;
  std::vector<double> v;
  std::optional<double> bpm;
  std::optional<KeyLabel> key;
  std::set<std::string> tags;
};

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
}

/// Positions (into items) of the k nearest, query excluded, ties by id.
inline std::vector<std::size_t> knn(const std::vector<Item>& items, std::size_t q,
                                    std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i != q) all.emplace_back(distance(items[q].v, items[i].v), i);
  }
  std::sort(all.begin(), all.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return items[a.second].id < items[b.second].id;
  });
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
  return out;
}

inline double rmms(const std::vector<Item>& items, std::size_t k) {
  double sum = 0.0;
  int seeds = 0;
  for (std::size_t s = 0; s < items.size(); ++s) {
    const auto nn = knn(items, s, k);
    bool ok = items[s].bpm.has_value();
    for (auto j : nn) ok = ok && items[j].bpm.has_value();
    if (!ok) continue;
    const double b = *items[s].bpm;
    const double candidates[] = {b / 3.0, b / 2.0, b, 2.0 * b, 3.0 * b};
    double acc = 0.0;
    for (auto j : nn) {
      double best = 1e300;
      for (double c : candidates) best = std::min(best, (c - *items[j].bpm) * (c - *items[j].bpm));
      acc += best;
    }
    sum += std::sqrt(acc / k);
    ++seeds;
  }
  return seeds ? sum / seeds : std::nan("");
}

inline double key_precision(const std::vector<Item>& items, std::size_t k) {
  double sum = 0.0;
  int seeds = 0;
  for (std::size_t s = 0; s < items.size(); ++s) {
    const auto nn = knn(items, s, k);
    bool ok = items[s].key.has_value();
    for (auto j : nn) ok = ok && items[j].key.has_value();
    if (!ok) continue;
    int m = 0;
    for (auto j : nn) m += items[j].key->to_string() == items[s].key->to_string();
    sum += static_cast<double>(m) / k;
    ++seeds;
  }
  return seeds ? sum / seeds : std::nan("");
}

inline double tag_precision(const std::vector<Item>& items, std::size_t k) {
  double sum = 0.0;
  int seeds = 0;
  for (std::size_t s = 0; s < items.size(); ++s) {
    if (items[s].tags.empty()) continue;
    std::vector<std::string> retrieved;
    for (auto j : knn(items, s, k)) {
      retrieved.insert(retrieved.end(), items[j].tags.begin(), items[j].tags.end());
    }
    if (retrieved.empty()) continue;
    const auto hits = std::count_if(retrieved.begin(), retrieved.end(),
                                    [&](const std::string& t) { return items[s].tags.count(t) > 0; });
    sum += static_cast<double>(hits) / static_cast<double>(retrieved.size());
    ++seeds;
  }
  return seeds ? sum / seeds : std::nan("");
}

inline double tag_retrieval(const std::vector<Item>& items, std::size_t k) {
  std::set<std::string> vocabulary;
  for (const auto& it : items) vocabulary.insert(it.tags.begin(), it.tags.end());
  double sum = 0.0;
  for (const auto& tag : vocabulary) {
    int carriers = 0, hits = 0;
    for (std::size_t s = 0; s < items.size(); ++s) {
      if (!items[s].tags.count(tag)) continue;
      ++carriers;
      bool found = false;
      for (auto j : knn(items, s, k)) found = found || items[j].tags.count(tag) > 0;
      hits += found;
    }
    sum += static_cast<double>(hits) / carriers;
  }
  return vocabulary.empty() ? std::nan("") : sum / static_cast<double>(vocabulary.size());
}

/// Random instance: unit vectors with planted duplicates (ties), partial
/// labels, random tag subsets and shuffled ids.
inline std::vector<Item> random_instance(Rng& rng, std::size_t n) {
  const std::size_t dim = 2 + rng.index(15);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f", "g", "h"};
  std::vector<Item> items(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& it = items[i];
    it.id = "t" + std::to_string(rng.next_u64() % 100000) + "_" + std::to_string(i);
    if (i > 0 && rng.uniform() < 0.1) {
      it.v = items[rng.index(i)].v;
    } else {
      double norm = 0.0;
      it.v.resize(dim);
      for (auto& x : it.v) {
        x = rng.normal();
        norm += x * x;
      }
      for (auto& x : it.v) x /= std::sqrt(norm);
    }
    if (rng.uniform() < 0.95) it.bpm = 60.0 + static_cast<double>(rng.index(121));
    if (rng.uniform() < 0.95) it.key = all_keys()[rng.index(24)];
    for (const auto& t : vocab) {
      if (rng.uniform() < 0.3) it.tags.insert(t);
    }
  }
  return items;
}

inline EmbeddingSet to_set(const std::vector<Item>& items) {
  EmbeddingSet set(items.front().v.size());
  for (const auto& it : items) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(it.v.size()));
    for (std::size_t j = 0; j < it.v.size(); ++j) v[static_cast<Eigen::Index>(j)] = it.v[j];
    set.add(it.id, v);
  }
  return set;
}

inline std::vector<TrackRecord> to_records(const std::vector<Item>& items) {
  std::vector<TrackRecord> records;
  for (const auto& it : items) {
    TrackRecord r;
    r.track_id = it.id;
    r.feature_path = it.id + ".emlt";
    r.duration_s = 16.0;
    r.bpm = it.bpm;
    r.key_label = it.key;
    r.tags = it.tags;
    records.push_back(r);
  }
  return records;
}

}  // namespace embedloc::oracle

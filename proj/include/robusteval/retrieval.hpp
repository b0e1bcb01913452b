// Sentence embeddings, the persisted embedding index, exact top-k cosine
// retrieval for few-shot selection, and clean-vs-attacked similarity stats.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"
#include "robusteval/perturb.hpp"

namespace robusteval {

using EmbeddingVector = std::vector<float>;

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  // Identifies the embedding space; indexes refuse queries across fingerprints.
  virtual std::string fingerprint() const = 0;
  // One vector per text, order preserving. Texts must be non-empty.
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;

  EmbeddingVector embed_one(const std::string& text) {
    return embed(std::vector<std::string>{text}).front();
  }
};

// Offline deterministic backend: term-frequency bag of tokens hashed into a
// fixed dimension, L2-normalized. Order-insensitive by construction.
class HashedBagEmbedder : public EmbeddingBackend {
 public:
  explicit HashedBagEmbedder(std::size_t dimension = 256) : dimension_(dimension) {
    if (dimension_ == 0) throw ConfigError("embedding dimension must be positive");
  }

  std::string fingerprint() const override {
    return "hashbag-" + std::to_string(dimension_);
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
      const auto tokens = tokenize(to_lower(text));
      if (tokens.empty()) throw ValidationError("embed: empty text");
      EmbeddingVector v(dimension_, 0.0f);
      for (const auto& tok : tokens) v[fnv1a64(tok) % dimension_] += 1.0f;
      double norm = 0.0;
      for (float x : v) norm += static_cast<double>(x) * x;
      norm = std::sqrt(norm);
      for (float& x : v) x = static_cast<float>(x / norm);
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::size_t dimension_;
};

// Cosine similarity; zero-norm vectors compare as 0 to avoid NaN in means.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) {
    throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct IndexEntry {
  std::string id;
  EmbeddingVector vector;
  std::string leaf_label;
};

struct EmbeddingIndex {
  std::size_t dimension = 0;
  std::string fingerprint;
  std::vector<IndexEntry> entries;

  void save(const std::filesystem::path& path) const {
    std::string out = nlohmann::json{{"dimension", dimension},
                                     {"count", entries.size()},
                                     {"fingerprint", fingerprint}}
                          .dump() +
                      "\n";
    for (const auto& e : entries) {
      std::vector<double> values(e.vector.begin(), e.vector.end());
      out += nlohmann::json{{"id", e.id}, {"label", e.leaf_label}, {"values", values}}.dump();
      out += "\n";
    }
    write_file(path, out);
  }

  static EmbeddingIndex load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open index: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("index " + path.string() + ": missing header");
    EmbeddingIndex index;
    try {
      nlohmann::json header = nlohmann::json::parse(line);
      index.dimension = header.at("dimension").get<std::size_t>();
      index.fingerprint = header.at("fingerprint").get<std::string>();
      const auto count = header.at("count").get<std::size_t>();
      index.entries.reserve(count);
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        IndexEntry e;
        e.id = j.at("id").get<std::string>();
        e.leaf_label = j.at("label").get<std::string>();
        for (double v : j.at("values")) e.vector.push_back(static_cast<float>(v));
        if (e.vector.size() != index.dimension) {
          throw ValidationError("index entry \"" + e.id + "\": dimension mismatch");
        }
        index.entries.push_back(std::move(e));
      }
      if (index.entries.size() != count) {
        throw ValidationError("index " + path.string() + ": header count " +
                              std::to_string(count) + " != " +
                              std::to_string(index.entries.size()) + " entries");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("index " + path.string() + ": " + ex.what());
    }
    return index;
  }
};

inline EmbeddingIndex build_index(const DatasetSplit& split, EmbeddingBackend& backend) {
  EmbeddingIndex index;
  index.fingerprint = backend.fingerprint();
  std::vector<std::string> texts;
  texts.reserve(split.records.size());
  for (const auto& r : split.records) texts.push_back(r.description);
  auto vectors = backend.embed(texts);
  index.entries.reserve(split.records.size());
  for (std::size_t i = 0; i < split.records.size(); ++i) {
    index.entries.push_back(
        {split.records[i].id, std::move(vectors[i]), split.records[i].leaf_label});
  }
  index.dimension = index.entries.empty() ? 0 : index.entries.front().vector.size();
  for (const auto& e : index.entries) {
    if (e.vector.size() != index.dimension) {
      throw ValidationError("index entry \"" + e.id + "\": dimension mismatch");
    }
  }
  return index;
}

struct ScoredId {
  std::string id;
  double similarity = 0.0;
};

// Exact scan: descending cosine similarity, ties by ascending id. Optionally
// skips one id (few-shot leakage guard). An empty index yields an empty list.
inline std::vector<ScoredId> top_k_similar(const EmbeddingVector& query,
                                           const EmbeddingIndex& index, std::size_t k,
                                           const std::string* exclude_id = nullptr) {
  if (index.entries.empty() || k == 0) return {};
  if (query.size() != index.dimension) {
    throw ValidationError("top_k_similar: query dimension " + std::to_string(query.size()) +
                          " != index dimension " + std::to_string(index.dimension));
  }
  std::vector<ScoredId> scored;
  scored.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    if (exclude_id && e.id == *exclude_id) continue;
    scored.push_back({e.id, cosine_similarity(query, e.vector)});
  }
  auto better = [](const ScoredId& a, const ScoredId& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  };
  if (k < scored.size()) {
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                      scored.end(), better);
    scored.resize(k);
  } else {
    std::sort(scored.begin(), scored.end(), better);
  }
  return scored;
}

// Mean cosine similarity between each clean description and its attacked
// counterpart, aligned by id.
inline double mean_pairwise_similarity(const DatasetSplit& clean,
                                       const std::vector<PerturbedRecord>& attacked,
                                       EmbeddingBackend& backend) {
  if (clean.records.size() != attacked.size()) {
    throw ValidationError("mean_pairwise_similarity: split sizes differ");
  }
  if (clean.records.empty()) {
    throw ValidationError("mean_pairwise_similarity: empty splits");
  }
  std::vector<std::string> clean_texts, attacked_texts;
  clean_texts.reserve(clean.records.size());
  attacked_texts.reserve(attacked.size());
  for (std::size_t i = 0; i < clean.records.size(); ++i) {
    if (clean.records[i].id != attacked[i].source_id) {
      throw ValidationError("mean_pairwise_similarity: id mismatch at position " +
                            std::to_string(i) + " (\"" + clean.records[i].id + "\" vs \"" +
                            attacked[i].source_id + "\")");
    }
    clean_texts.push_back(clean.records[i].description);
    attacked_texts.push_back(attacked[i].description);
  }
  const auto clean_vecs = backend.embed(clean_texts);
  const auto attacked_vecs = backend.embed(attacked_texts);
  double sum = 0.0;
  for (std::size_t i = 0; i < clean_vecs.size(); ++i) {
    sum += cosine_similarity(clean_vecs[i], attacked_vecs[i]);
  }
  return sum / static_cast<double>(clean_vecs.size());
}

}  // namespace robusteval

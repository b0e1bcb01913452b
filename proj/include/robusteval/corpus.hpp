// Dataset ingestion: product records, the category taxonomy, JSONL dataset
// files, and deterministic stratified sampling.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "robusteval/common.hpp"

namespace robusteval {

enum class SplitRole { Train, Test };

inline const char* to_string(SplitRole role) {
  return role == SplitRole::Train ? "train" : "test";
}

struct ProductRecord {
  std::string id;
  std::string description;
  std::string leaf_label;
  std::vector<std::string> path;  // root .. leaf

  bool operator==(const ProductRecord&) const = default;
};

// Rooted category tree. Leaf names are unique; each leaf is reachable by
// exactly one path, so paths can be reconstructed from the leaf alone.
class Taxonomy {
 public:
  static Taxonomy from_json(const nlohmann::json& node) {
    Taxonomy t;
    if (!node.is_object() || !node.contains("name")) {
      throw ParseError("taxonomy: root node must be an object with a \"name\"");
    }
    t.root_ = node.at("name").get<std::string>();
    std::vector<std::string> path{t.root_};
    if (node.contains("children")) {
      for (const auto& child : node.at("children")) {
        t.add_node(child, path, /*depth=*/1);
      }
    }
    if (t.leaves_.empty()) throw ValidationError("taxonomy: no leaf categories");
    return t;
  }

  static Taxonomy load(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("taxonomy " + path.string() + ": " + ex.what());
    }
    return from_json(doc);
  }

  const std::string& root() const { return root_; }

  // Leaves in tree (depth-first) order; this is the default prompt class order.
  const std::vector<std::string>& leaves() const { return leaves_; }

  // Children of the root in tree order.
  const std::vector<std::string>& second_level() const { return second_level_; }

  bool is_leaf(const std::string& name) const { return paths_.count(name) > 0; }

  bool is_second_level(const std::string& name) const {
    return std::find(second_level_.begin(), second_level_.end(), name) != second_level_.end();
  }

  const std::vector<std::string>& path_to(const std::string& leaf) const {
    auto it = paths_.find(leaf);
    if (it == paths_.end()) throw ValidationError("taxonomy: unknown leaf \"" + leaf + "\"");
    return it->second;
  }

  // Leaf descendants of a second-level node, in tree order. A childless
  // second-level node is its own leaf.
  std::vector<std::string> leaves_under(const std::string& second_level_name) const {
    std::vector<std::string> out;
    for (const auto& leaf : leaves_) {
      const auto& p = paths_.at(leaf);
      if (p.size() >= 2 && p[1] == second_level_name) out.push_back(leaf);
    }
    if (out.empty()) {
      throw ValidationError("taxonomy: no leaves under \"" + second_level_name + "\"");
    }
    return out;
  }

 private:
  void add_node(const nlohmann::json& node, std::vector<std::string>& path, int depth) {
    if (!node.is_object() || !node.contains("name")) {
      throw ParseError("taxonomy: every node must be an object with a \"name\"");
    }
    std::string name = node.at("name").get<std::string>();
    path.push_back(name);
    if (depth == 1) {
      if (is_second_level(name)) {
        throw ValidationError("taxonomy: duplicate second-level node \"" + name + "\"");
      }
      second_level_.push_back(name);
    }
    const bool has_children = node.contains("children") && !node.at("children").empty();
    if (has_children) {
      for (const auto& child : node.at("children")) add_node(child, path, depth + 1);
    } else {
      if (paths_.count(name)) {
        throw ValidationError("taxonomy: duplicate leaf \"" + name + "\"");
      }
      leaves_.push_back(name);
      paths_.emplace(name, path);
    }
    path.pop_back();
  }

  std::string root_;
  std::vector<std::string> leaves_;
  std::vector<std::string> second_level_;
  std::unordered_map<std::string, std::vector<std::string>> paths_;
};

struct DatasetSplit {
  std::vector<ProductRecord> records;
  SplitRole role = SplitRole::Test;
  std::string source_name;
};

namespace detail {

inline nlohmann::json record_to_json(const ProductRecord& r) {
  return nlohmann::json{
      {"id", r.id}, {"description", r.description}, {"label", r.leaf_label}, {"path", r.path}};
}

inline ProductRecord record_from_json(const nlohmann::json& j) {
  ProductRecord r;
  r.id = j.at("id").get<std::string>();
  r.description = j.at("description").get<std::string>();
  r.leaf_label = j.at("label").get<std::string>();
  if (j.contains("path")) r.path = j.at("path").get<std::vector<std::string>>();
  return r;
}

}  // namespace detail

// Validates one record against the taxonomy, completing a missing path from
// the leaf (unique-path invariant makes this well-defined).
inline void validate_record(ProductRecord& r, const Taxonomy& taxonomy) {
  if (trim(r.description).empty()) {
    throw ValidationError("record \"" + r.id + "\": empty description");
  }
  if (!taxonomy.is_leaf(r.leaf_label)) {
    throw ValidationError("record \"" + r.id + "\": unknown leaf label \"" + r.leaf_label + "\"");
  }
  const auto& canonical = taxonomy.path_to(r.leaf_label);
  if (r.path.empty()) {
    r.path = canonical;
    return;
  }
  if (r.path.front() != taxonomy.root()) {
    throw ValidationError("record \"" + r.id + "\": path does not start at taxonomy root");
  }
  if (r.path.back() != r.leaf_label) {
    throw ValidationError("record \"" + r.id + "\": path does not end at its label");
  }
  if (r.path != canonical) {
    throw ValidationError("record \"" + r.id + "\": path disagrees with taxonomy");
  }
}

// Loads a JSONL dataset. Lines whose object carries "_meta" are artifact
// headers and are skipped. Record order equals file order.
inline DatasetSplit load_dataset(const std::filesystem::path& path, const Taxonomy& taxonomy,
                                 SplitRole role) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset: " + path.string());
  DatasetSplit split;
  split.role = role;
  split.source_name = path.filename().string();
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": " +
                       ex.what());
    }
    if (j.contains("_meta")) continue;
    ProductRecord r;
    try {
      r = detail::record_from_json(j);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path.filename().string() + " line " + std::to_string(line_no) + ": " +
                       ex.what());
    }
    if (!seen_ids.insert(r.id).second) {
      throw ValidationError("record \"" + r.id + "\": duplicate id (line " +
                            std::to_string(line_no) + ")");
    }
    validate_record(r, taxonomy);
    split.records.push_back(std::move(r));
  }
  return split;
}

inline void save_dataset(const DatasetSplit& split, const std::filesystem::path& path,
                         const nlohmann::json& meta = nlohmann::json()) {
  std::string out;
  if (!meta.is_null()) {
    out += nlohmann::json{{"_meta", meta}}.dump();
    out += "\n";
  }
  for (const auto& r : split.records) {
    out += detail::record_to_json(r).dump();
    out += "\n";
  }
  write_file(path, out);
}

// Stratified sample: proportional shares with largest-remainder rounding
// (exact integer arithmetic, ties by ascending class name), at least one
// record per class present, then per-class selection seeded by
// (seed, class name). Output ordered by (leaf_label, id).
inline DatasetSplit stratified_sample(const DatasetSplit& split, std::size_t target_size,
                                      std::uint64_t seed) {
  const std::size_t total = split.records.size();
  if (target_size > total) {
    throw ValidationError("target_size " + std::to_string(target_size) +
                          " exceeds split size " + std::to_string(total));
  }
  std::map<std::string, std::vector<std::size_t>> by_class;  // ordered for determinism
  for (std::size_t i = 0; i < total; ++i) by_class[split.records[i].leaf_label].push_back(i);
  const std::size_t class_count = by_class.size();
  if (target_size < class_count) {
    throw ValidationError("target_size " + std::to_string(target_size) + " is below the " +
                          std::to_string(class_count) + " classes present");
  }

  struct Share {
    const std::string* name;
    std::size_t count;
    std::uint64_t remainder;  // of target*count/total, in units of 1/total
    std::size_t alloc;
  };
  std::vector<Share> shares;
  shares.reserve(class_count);
  std::size_t allocated = 0;
  for (const auto& [name, indices] : by_class) {
    const std::uint64_t numer = static_cast<std::uint64_t>(target_size) * indices.size();
    std::size_t floor_share = static_cast<std::size_t>(numer / total);
    std::uint64_t remainder = numer % total;
    std::size_t alloc = std::max<std::size_t>(1, floor_share);
    shares.push_back({&name, indices.size(), remainder, alloc});
    allocated += alloc;
  }

  if (allocated < target_size) {
    std::vector<Share*> order;
    for (auto& s : shares) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const Share* a, const Share* b) {
      if (a->remainder != b->remainder) return a->remainder > b->remainder;
      return *a->name < *b->name;
    });
    while (allocated < target_size) {
      bool progressed = false;
      for (Share* s : order) {
        if (allocated == target_size) break;
        if (s->alloc < s->count) {
          ++s->alloc;
          ++allocated;
          progressed = true;
        }
      }
      if (!progressed) break;  // unreachable: sum of counts >= target
    }
  } else if (allocated > target_size) {
    // Overshoot can only come from the one-per-class floor; shed from the
    // classes whose share was closest to its floor first.
    std::vector<Share*> order;
    for (auto& s : shares) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const Share* a, const Share* b) {
      if (a->remainder != b->remainder) return a->remainder < b->remainder;
      return *a->name < *b->name;
    });
    while (allocated > target_size) {
      bool progressed = false;
      for (Share* s : order) {
        if (allocated == target_size) break;
        if (s->alloc > 1) {
          --s->alloc;
          --allocated;
          progressed = true;
        }
      }
      if (!progressed) break;  // unreachable while target >= class count
    }
  }

  const std::uint64_t stream = derive_seed(seed, "sampling");
  DatasetSplit out;
  out.role = split.role;
  out.source_name = split.source_name;
  for (const auto& s : shares) {
    const auto& indices = by_class.at(*s.name);
    std::mt19937_64 rng(derive_seed(stream, *s.name));
    for (std::size_t pick : sample_indices(indices.size(), s.alloc, rng)) {
      out.records.push_back(split.records[indices[pick]]);
    }
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const ProductRecord& a, const ProductRecord& b) {
              if (a.leaf_label != b.leaf_label) return a.leaf_label < b.leaf_label;
              return a.id < b.id;
            });
  return out;
}

}  // namespace robusteval

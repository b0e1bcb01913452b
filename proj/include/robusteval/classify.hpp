// Classification drivers: the prompt template, label normalization, the
// pluggable classifier backends, and the flat / hierarchical / few-shot
// strategies.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"
#include "robusteval/perturb.hpp"
#include "robusteval/retrieval.hpp"

namespace robusteval {

inline constexpr const char* kInvalidLabel = "INVALID";

enum class Approach { Flat, Hierarchical, FewShot };

inline const char* to_string(Approach a) {
  switch (a) {
    case Approach::Flat: return "flat";
    case Approach::Hierarchical: return "hierarchical";
    case Approach::FewShot: return "fewshot";
  }
  return "flat";
}

inline Approach approach_from_string(const std::string& s) {
  if (s == "flat") return Approach::Flat;
  if (s == "hierarchical" || s == "hier") return Approach::Hierarchical;
  if (s == "fewshot" || s == "few-shot") return Approach::FewShot;
  throw ConfigError("unknown approach \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// Classification prompt
// ---------------------------------------------------------------------------

struct PromptSpec {
  std::vector<std::string> class_list;
  std::vector<std::pair<std::string, std::string>> few_shot;  // (description, label), <= 5
  bool reason_note = false;
  bool completion_suffix = false;  // completion-style providers need the final line
};

inline std::string render_classification_prompt(const PromptSpec& spec,
                                                const std::string& product) {
  if (spec.class_list.empty()) {
    throw ValidationError("classification prompt: empty class list");
  }
  std::string out = "Classify the following product to one class form the list below.\n\n";
  out += "List of classes:\n";
  for (const auto& name : spec.class_list) {
    out += name;
    out += "\n";
  }
  out += "\n";
  if (!spec.few_shot.empty()) {
    out += "Some examples with their classes are provided:\n";
    for (const auto& [description, label] : spec.few_shot) {
      out += "Product: " + description + "\nClass: " + label + "\n";
    }
    out += "\n";
  }
  out += "Product: " + product + "\n";
  if (spec.reason_note) {
    out +=
        "\nBe aware that some parts of the product description might have been abbreviated or "
        "amputated.\n";
  }
  out += "\nOutput only the class name and no additional text. Example: `Tablets'";
  if (spec.completion_suffix) {
    out += "\n\nProduct class from the list above is:";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label normalization
// ---------------------------------------------------------------------------

enum class ResolveStage {
  Invalid = 0,
  Exact = 1,
  Folded = 2,      // case / whitespace / punctuation insensitive
  Substring = 3,   // unique containment either way
  Embedding = 4,   // nearest label by cosine above threshold
};

struct ResolvedLabel {
  std::string label = kInvalidLabel;
  ResolveStage stage = ResolveStage::Invalid;
};

namespace detail {

// Lowercase, strip punctuation, collapse runs of whitespace.
inline std::string fold_label(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    const unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(uc)));
    } else if (is_space(c)) {
      pending_space = true;
    }
    // punctuation dropped entirely
  }
  return out;
}

}  // namespace detail

// Resolves a raw backend output to a label via the ladder: exact match,
// folded match, unique substring, then optional embedding nearest-neighbor
// at the given threshold. INVALID is a value, not an error.
inline ResolvedLabel normalize_label(const std::string& raw,
                                     const std::vector<std::string>& labels,
                                     EmbeddingBackend* embedder = nullptr,
                                     double embed_threshold = 0.85) {
  if (labels.empty()) throw ValidationError("normalize_label: empty label set");
  for (const auto& label : labels) {
    if (raw == label) return {label, ResolveStage::Exact};
  }
  const std::string folded = detail::fold_label(raw);
  if (!folded.empty()) {
    const std::string* match = nullptr;
    bool unique = true;
    for (const auto& label : labels) {
      if (detail::fold_label(label) == folded) {
        if (match) unique = false;
        match = &label;
      }
    }
    if (match && unique) return {*match, ResolveStage::Folded};
    if (match && !unique) return {};
    // Unique containment in either direction on folded forms.
    const std::string* candidate = nullptr;
    std::size_t candidates = 0;
    for (const auto& label : labels) {
      const std::string folded_label = detail::fold_label(label);
      if (folded_label.empty()) continue;
      if (folded_label.find(folded) != std::string::npos ||
          folded.find(folded_label) != std::string::npos) {
        candidate = &label;
        ++candidates;
      }
    }
    if (candidates == 1) return {*candidate, ResolveStage::Substring};
  }
  if (embedder && !trim(raw).empty()) {
    const EmbeddingVector query = embedder->embed_one(raw);
    const std::string* best = nullptr;
    double best_sim = 0.0;
    for (const auto& label : labels) {
      const double sim = cosine_similarity(query, embedder->embed_one(label));
      if (sim > best_sim || (best && sim == best_sim && label < *best)) {
        best = &label;
        best_sim = sim;
      }
    }
    if (best && best_sim >= embed_threshold) return {*best, ResolveStage::Embedding};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Classifier backends
// ---------------------------------------------------------------------------

enum class PromptStage { Leaf, Level2 };

struct ClassifyRequest {
  std::string record_id;
  std::string description;  // possibly perturbed
  std::string gold_label;   // leaf gold, for oracle backends
  std::string gold_level2;  // second-level gold, for oracle backends
  std::string prompt;       // fully rendered
  PromptStage stage = PromptStage::Leaf;
};

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual std::string name() const = 0;
  // Raw model output for one request; throws TransportError on exhaustion.
  virtual std::string complete(const ClassifyRequest& request) = 0;
};

// Test/diagnostic oracle: echoes the gold label of the requested stage.
class GoldEchoBackend : public ClassifierBackend {
 public:
  std::string name() const override { return "mock-gold"; }
  std::string complete(const ClassifyRequest& request) override {
    return request.stage == PromptStage::Level2 ? request.gold_level2 : request.gold_label;
  }
};

// Arbitrary behavior from a function, for tests and planted-error mocks.
class ScriptedBackend : public ClassifierBackend {
 public:
  using Fn = std::function<std::string(const ClassifyRequest&)>;
  explicit ScriptedBackend(Fn fn, std::string name = "scripted")
      : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::string complete(const ClassifyRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
  std::string name_;
};

// Replays externally produced predictions (e.g. a fine-tuned supervised
// model) through the scoring pipeline. Missing ids normalize to INVALID.
class PredictionFileBackend : public ClassifierBackend {
 public:
  explicit PredictionFileBackend(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open prediction file: " + path.string());
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
      outputs_[j.at("id").get<std::string>()] = j.at("raw_output").get<std::string>();
    }
  }

  std::string name() const override { return "prediction-file"; }

  std::string complete(const ClassifyRequest& request) override {
    auto it = outputs_.find(request.record_id);
    return it == outputs_.end() ? std::string() : it->second;
  }

 private:
  std::unordered_map<std::string, std::string> outputs_;
};

// Decorator counting backend calls; the pipeline cache tests rely on it.
class CountingBackend : public ClassifierBackend {
 public:
  explicit CountingBackend(ClassifierBackend& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }
  std::string complete(const ClassifyRequest& request) override {
    ++calls_;
    return inner_.complete(request);
  }
  std::size_t calls() const { return calls_; }

 private:
  ClassifierBackend& inner_;
  std::atomic<std::size_t> calls_{0};
};

// Adapts a chat completion function (e.g. HttpChatClient) to the backend
// interface; the prompt is the only thing sent over the wire.
class ChatBackend : public ClassifierBackend {
 public:
  using CompleteFn = std::function<std::string(const std::string& prompt)>;
  ChatBackend(CompleteFn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::string complete(const ClassifyRequest& request) override { return fn_(request.prompt); }

 private:
  CompleteFn fn_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Prediction records
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string source_id;
  Approach approach = Approach::Flat;
  AttackKind attack = AttackKind::Clean;
  bool reason_note = false;
  std::string raw_output;
  std::string normalized_label = kInvalidLabel;
  std::optional<std::string> level2_label;
  int resolution_stage = 0;
  std::string note;
};

namespace detail {

inline nlohmann::json prediction_to_json(const PredictionRecord& p) {
  nlohmann::json j{{"id", p.source_id},
                   {"approach", to_string(p.approach)},
                   {"attack", to_string(p.attack)},
                   {"reason_note", p.reason_note},
                   {"raw_output", p.raw_output},
                   {"normalized_label", p.normalized_label},
                   {"resolution_stage", p.resolution_stage}};
  if (p.level2_label) j["level2_label"] = *p.level2_label;
  if (!p.note.empty()) j["note"] = p.note;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord p;
  p.source_id = j.at("id").get<std::string>();
  p.approach = approach_from_string(j.at("approach").get<std::string>());
  p.attack = attack_from_string(j.at("attack").get<std::string>());
  p.reason_note = j.value("reason_note", false);
  p.raw_output = j.at("raw_output").get<std::string>();
  p.normalized_label = j.at("normalized_label").get<std::string>();
  if (j.contains("level2_label")) p.level2_label = j.at("level2_label").get<std::string>();
  p.resolution_stage = j.value("resolution_stage", 0);
  p.note = j.value("note", std::string());
  return p;
}

}  // namespace detail

inline void save_predictions(const std::vector<PredictionRecord>& records,
                             const std::filesystem::path& path,
                             const nlohmann::json& meta = nlohmann::json()) {
  std::string out;
  if (!meta.is_null()) out += nlohmann::json{{"_meta", meta}}.dump() + "\n";
  for (const auto& p : records) out += detail::prediction_to_json(p).dump() + "\n";
  write_file(path, out);
}

inline std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open predictions: " + path.string());
  std::vector<PredictionRecord> out;
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
    out.push_back(detail::prediction_from_json(j));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

// One unit of classification work: the (possibly attacked) text plus gold
// provenance for oracle backends.
struct ClassifyInput {
  std::string id;
  std::string description;
  std::string gold_label;
  std::string gold_level2;
};

inline ClassifyInput classify_input_from(const ProductRecord& record) {
  return {record.id, record.description, record.leaf_label,
          record.path.size() > 1 ? record.path[1] : record.path.front()};
}

inline ClassifyInput classify_input_from(const PerturbedRecord& perturbed,
                                         const ProductRecord& source) {
  return {source.id, perturbed.description, source.leaf_label,
          source.path.size() > 1 ? source.path[1] : source.path.front()};
}

struct ClassifyOptions {
  AttackKind attack = AttackKind::Clean;
  bool reason_note = false;
  bool completion_suffix = false;
  EmbeddingBackend* label_embedder = nullptr;  // optional ladder stage 4
  double embed_threshold = 0.85;
};

namespace detail {

inline PredictionRecord run_single_call(const ClassifyInput& input, ClassifierBackend& backend,
                                        const PromptSpec& spec, Approach approach,
                                        const ClassifyOptions& options) {
  PredictionRecord out;
  out.source_id = input.id;
  out.approach = approach;
  out.attack = options.attack;
  out.reason_note = options.reason_note;
  ClassifyRequest request{input.id,        input.description,
                          input.gold_label, input.gold_level2,
                          render_classification_prompt(spec, input.description),
                          PromptStage::Leaf};
  try {
    out.raw_output = backend.complete(request);
  } catch (const TransportError& ex) {
    out.note = std::string("transport: ") + ex.what();
    return out;
  }
  const ResolvedLabel resolved = normalize_label(out.raw_output, spec.class_list,
                                                 options.label_embedder, options.embed_threshold);
  out.normalized_label = resolved.label;
  out.resolution_stage = static_cast<int>(resolved.stage);
  return out;
}

}  // namespace detail

// Directly predicts the leaf label among the full class list.
inline PredictionRecord classify_flat(const ClassifyInput& input, ClassifierBackend& backend,
                                      const PromptSpec& spec,
                                      const ClassifyOptions& options = {}) {
  PromptSpec flat = spec;
  flat.reason_note = options.reason_note;
  flat.completion_suffix = options.completion_suffix;
  return detail::run_single_call(input, backend, flat, Approach::Flat, options);
}

// Two stages: second-level category first, then a leaf among that branch,
// with the category name appended to the description. An INVALID first
// stage falls back to the full leaf set and is flagged.
inline PredictionRecord classify_hierarchical(const ClassifyInput& input,
                                              ClassifierBackend& backend,
                                              const Taxonomy& taxonomy,
                                              const ClassifyOptions& options = {}) {
  if (taxonomy.second_level().empty()) {
    throw ValidationError("hierarchical classification needs a second taxonomy level");
  }
  PredictionRecord out;
  out.source_id = input.id;
  out.approach = Approach::Hierarchical;
  out.attack = options.attack;
  out.reason_note = options.reason_note;

  PromptSpec stage1_spec;
  stage1_spec.class_list = taxonomy.second_level();
  stage1_spec.reason_note = options.reason_note;
  stage1_spec.completion_suffix = options.completion_suffix;
  ClassifyRequest stage1{input.id,        input.description,
                         input.gold_label, input.gold_level2,
                         render_classification_prompt(stage1_spec, input.description),
                         PromptStage::Level2};
  std::string stage1_raw;
  try {
    stage1_raw = backend.complete(stage1);
  } catch (const TransportError& ex) {
    out.note = std::string("transport (stage 1): ") + ex.what();
    return out;
  }
  const ResolvedLabel level2 = normalize_label(stage1_raw, taxonomy.second_level(),
                                               options.label_embedder, options.embed_threshold);
  out.level2_label = level2.label;

  PromptSpec stage2_spec;
  if (level2.stage == ResolveStage::Invalid) {
    stage2_spec.class_list = taxonomy.leaves();
    out.note = "stage1-invalid-fallback (raw: " + stage1_raw + ")";
  } else {
    stage2_spec.class_list = taxonomy.leaves_under(level2.label);
  }
  stage2_spec.reason_note = options.reason_note;
  stage2_spec.completion_suffix = options.completion_suffix;
  // Stage-2 text carries the predicted category; the fallback keeps the
  // description untouched since there is no category to append.
  const std::string staged_description = level2.stage == ResolveStage::Invalid
                                             ? input.description
                                             : input.description + ", " + level2.label;
  ClassifyRequest stage2{input.id,        staged_description,
                         input.gold_label, input.gold_level2,
                         render_classification_prompt(stage2_spec, staged_description),
                         PromptStage::Leaf};
  try {
    out.raw_output = backend.complete(stage2);
  } catch (const TransportError& ex) {
    out.note += std::string("transport (stage 2): ") + ex.what();
    return out;
  }
  const ResolvedLabel resolved = normalize_label(out.raw_output, stage2_spec.class_list,
                                                 options.label_embedder, options.embed_threshold);
  out.normalized_label = resolved.label;
  out.resolution_stage = static_cast<int>(resolved.stage);
  return out;
}

// Flat call augmented with the k most similar clean training examples,
// most similar first. The query record itself is excluded from selection.
inline PredictionRecord classify_fewshot(const ClassifyInput& input, ClassifierBackend& backend,
                                         EmbeddingBackend& embedder,
                                         const EmbeddingIndex& index,
                                         const DatasetSplit& train,
                                         const std::vector<std::string>& class_list,
                                         std::size_t k = 5,
                                         const ClassifyOptions& options = {}) {
  if (index.fingerprint != embedder.fingerprint()) {
    throw ValidationError("few-shot: index fingerprint \"" + index.fingerprint +
                          "\" does not match backend \"" + embedder.fingerprint() + "\"");
  }
  std::unordered_map<std::string, const ProductRecord*> train_by_id;
  train_by_id.reserve(train.records.size());
  for (const auto& r : train.records) train_by_id.emplace(r.id, &r);

  const EmbeddingVector query = embedder.embed_one(input.description);
  const auto hits = top_k_similar(query, index, k, &input.id);

  PromptSpec spec;
  spec.class_list = class_list;
  spec.reason_note = options.reason_note;
  spec.completion_suffix = options.completion_suffix;
  for (const auto& hit : hits) {
    auto it = train_by_id.find(hit.id);
    if (it == train_by_id.end()) {
      throw ValidationError("few-shot: index id \"" + hit.id + "\" missing from training split");
    }
    spec.few_shot.emplace_back(it->second->description, it->second->leaf_label);
  }
  return detail::run_single_call(input, backend, spec, Approach::FewShot, options);
}

}  // namespace robusteval

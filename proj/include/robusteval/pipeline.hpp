// End-to-end orchestration: run configuration, stage execution with
// checksum-keyed caching, manifests, and Table-shaped report emission.
#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robusteval/classify.hpp"
#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"
#include "robusteval/metrics.hpp"
#include "robusteval/net.hpp"
#include "robusteval/perturb.hpp"
#include "robusteval/retrieval.hpp"

namespace robusteval {

struct ClassifierConfig {
  std::string kind = "mock-gold";  // chat-llm | prediction-file | mock-gold
  std::string endpoint;
  std::string model;
  std::string api_key_env;  // name of the env var; the value is never persisted
  std::string prediction_file;
  double temperature = 0.0;
  int timeout_seconds = 60;
  int max_retries = 3;
  double requests_per_second = 0.0;

  nlohmann::json to_json() const {
    return {{"kind", kind},
            {"endpoint", endpoint},
            {"model", model},
            {"api_key_env", api_key_env},
            {"prediction_file", prediction_file},
            {"temperature", temperature},
            {"timeout_seconds", timeout_seconds},
            {"max_retries", max_retries},
            {"requests_per_second", requests_per_second}};
  }
};

struct EmbeddingConfig {
  std::string kind = "hash";  // hash | http
  std::size_t dimension = 256;
  std::string endpoint;
  std::string model;
  std::string api_key_env;

  nlohmann::json to_json() const {
    return {{"kind", kind},
            {"dimension", dimension},
            {"endpoint", endpoint},
            {"model", model},
            {"api_key_env", api_key_env}};
  }
};

struct RunConfig {
  std::filesystem::path test_dataset;
  std::filesystem::path train_dataset;  // required for few-shot
  std::filesystem::path taxonomy_path;
  std::filesystem::path lexicon_path;  // empty = builtin lexicon
  std::filesystem::path output_dir = "out";

  AttackKind attack = AttackKind::Clean;
  Approach approach = Approach::Flat;
  bool reason_note = false;
  bool completion_suffix = false;

  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  std::size_t sample_size = 0;  // 0 = use the whole test split
  std::size_t fewshot_k = 5;

  PerturbMode perturb_mode = PerturbMode::Deterministic;
  std::size_t max_keep_tokens = 5;
  double max_abbrev_fraction = 0.20;
  bool lexicon_rule_fallback = false;
  bool label_embedding = false;  // ladder stage 4 during normalization

  ClassifierConfig classifier;
  EmbeddingConfig embedding;

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.test_dataset = j.at("test_dataset").get<std::string>();
    if (j.contains("train_dataset")) c.train_dataset = j.at("train_dataset").get<std::string>();
    c.taxonomy_path = j.at("taxonomy").get<std::string>();
    if (j.contains("lexicon")) c.lexicon_path = j.at("lexicon").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.attack = attack_from_string(j.value("attack", "clean"));
    c.approach = approach_from_string(j.value("approach", "flat"));
    c.reason_note = j.value("reason_note", false);
    c.completion_suffix = j.value("completion_suffix", false);
    c.seed = j.value("seed", std::uint64_t{0});
    c.parallelism = j.value("parallelism", std::size_t{1});
    c.sample_size = j.value("sample_size", std::size_t{0});
    c.fewshot_k = j.value("fewshot_k", std::size_t{5});
    c.label_embedding = j.value("label_embedding", false);
    if (j.contains("perturb")) {
      const auto& p = j.at("perturb");
      c.perturb_mode = p.value("mode", "det") == "llm" ? PerturbMode::Llm
                                                       : PerturbMode::Deterministic;
      c.max_keep_tokens = p.value("max_keep_tokens", std::size_t{5});
      c.max_abbrev_fraction = p.value("max_abbrev_fraction", 0.20);
      c.lexicon_rule_fallback = p.value("rule_fallback", false);
    }
    if (j.contains("classifier")) {
      const auto& b = j.at("classifier");
      c.classifier.kind = b.value("kind", "mock-gold");
      c.classifier.endpoint = b.value("endpoint", "");
      c.classifier.model = b.value("model", "");
      c.classifier.api_key_env = b.value("api_key_env", "");
      c.classifier.prediction_file = b.value("prediction_file", "");
      c.classifier.temperature = b.value("temperature", 0.0);
      c.classifier.timeout_seconds = b.value("timeout_seconds", 60);
      c.classifier.max_retries = b.value("max_retries", 3);
      c.classifier.requests_per_second = b.value("requests_per_second", 0.0);
    }
    if (j.contains("embedding")) {
      const auto& e = j.at("embedding");
      c.embedding.kind = e.value("kind", "hash");
      c.embedding.dimension = e.value("dimension", std::size_t{256});
      c.embedding.endpoint = e.value("endpoint", "");
      c.embedding.model = e.value("model", "");
      c.embedding.api_key_env = e.value("api_key_env", "");
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("config " + path.string() + ": " + ex.what());
    }
  }

  nlohmann::json to_json() const {
    return {{"test_dataset", test_dataset.string()},
            {"train_dataset", train_dataset.string()},
            {"taxonomy", taxonomy_path.string()},
            {"lexicon", lexicon_path.string()},
            {"output_dir", output_dir.string()},
            {"attack", to_string(attack)},
            {"approach", to_string(approach)},
            {"reason_note", reason_note},
            {"completion_suffix", completion_suffix},
            {"seed", seed},
            {"parallelism", parallelism},
            {"sample_size", sample_size},
            {"fewshot_k", fewshot_k},
            {"label_embedding", label_embedding},
            {"perturb",
             {{"mode", perturb_mode == PerturbMode::Llm ? "llm" : "det"},
              {"max_keep_tokens", max_keep_tokens},
              {"max_abbrev_fraction", max_abbrev_fraction},
              {"rule_fallback", lexicon_rule_fallback}}},
            {"classifier", classifier.to_json()},
            {"embedding", embedding.to_json()}};
  }

  void validate() const {
    namespace fs = std::filesystem;
    if (!fs::exists(test_dataset)) {
      throw ConfigError("test_dataset does not exist: " + test_dataset.string());
    }
    if (!fs::exists(taxonomy_path)) {
      throw ConfigError("taxonomy does not exist: " + taxonomy_path.string());
    }
    if (approach == Approach::FewShot) {
      if (train_dataset.empty() || !fs::exists(train_dataset)) {
        throw ConfigError("few-shot approach needs an existing train_dataset");
      }
      if (fewshot_k == 0) throw ConfigError("fewshot_k must be positive");
    }
    if (!lexicon_path.empty() && !fs::exists(lexicon_path)) {
      throw ConfigError("lexicon does not exist: " + lexicon_path.string());
    }
    if (classifier.kind == "prediction-file") {
      if (classifier.prediction_file.empty() || !fs::exists(classifier.prediction_file)) {
        throw ConfigError("prediction-file backend needs an existing prediction_file");
      }
    } else if (classifier.kind == "chat-llm") {
      if (classifier.endpoint.empty()) throw ConfigError("chat-llm backend needs an endpoint");
    } else if (classifier.kind != "mock-gold") {
      throw ConfigError("unknown classifier kind \"" + classifier.kind + "\"");
    }
    if (embedding.kind == "http") {
      if (embedding.endpoint.empty()) throw ConfigError("http embedding needs an endpoint");
    } else if (embedding.kind != "hash") {
      throw ConfigError("unknown embedding kind \"" + embedding.kind + "\"");
    }
    if (parallelism == 0) throw ConfigError("parallelism must be positive");
    if (!(max_abbrev_fraction > 0.0) || max_abbrev_fraction > 1.0) {
      throw ConfigError("max_abbrev_fraction must be in (0, 1]");
    }
    if (max_keep_tokens == 0) throw ConfigError("max_keep_tokens must be >= 1");
  }

  // Filename tag for artifacts of this (approach, attack, reason) cell.
  std::string cell_tag() const {
    std::string tag = std::string(to_string(approach)) + "_" + to_string(attack);
    if (reason_note) tag += "_reason";
    return tag;
  }
};

inline std::string resolve_api_key(const std::string& env_name) {
  if (env_name.empty()) return {};
  const char* value = std::getenv(env_name.c_str());
  return value ? value : "";
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct StageInfo {
  std::string name;
  bool cached = false;
  double seconds = 0.0;
};

struct RunManifest {
  nlohmann::json config_snapshot;
  std::vector<StageInfo> stages;
  std::map<std::string, std::string> artifacts;  // filename -> sha256
  std::size_t invalid_count = 0;
  std::size_t degraded_count = 0;
  std::string error;  // non-empty when a stage aborted

  nlohmann::json to_json() const {
    nlohmann::json stage_list = nlohmann::json::array();
    for (const auto& s : stages) {
      stage_list.push_back({{"name", s.name}, {"cached", s.cached}, {"seconds", s.seconds}});
    }
    nlohmann::json j{{"config", config_snapshot},
                     {"stages", stage_list},
                     {"artifacts", artifacts},
                     {"counts", {{"invalid", invalid_count}, {"degraded", degraded_count}}}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Backend construction
// ---------------------------------------------------------------------------

// Test injection points; anything left null is built from the config.
struct PipelineBackends {
  ClassifierBackend* classifier = nullptr;
  EmbeddingBackend* embedder = nullptr;
  ChatClient* perturb_client = nullptr;  // used only in llm perturb mode
};

namespace detail {

struct BuiltBackends {
  std::unique_ptr<HttpChatClient> chat;
  std::unique_ptr<ClassifierBackend> classifier;
  std::unique_ptr<EmbeddingBackend> embedder;
  std::shared_ptr<RateLimiter> limiter;
};

inline BuiltBackends build_backends(const RunConfig& config) {
  BuiltBackends built;
  if (config.classifier.kind == "mock-gold") {
    built.classifier = std::make_unique<GoldEchoBackend>();
  } else if (config.classifier.kind == "prediction-file") {
    built.classifier = std::make_unique<PredictionFileBackend>(config.classifier.prediction_file);
  } else {  // chat-llm
    HttpOptions options;
    options.endpoint = config.classifier.endpoint;
    options.api_key = resolve_api_key(config.classifier.api_key_env);
    options.timeout_seconds = config.classifier.timeout_seconds;
    options.max_retries = config.classifier.max_retries;
    built.limiter = config.classifier.requests_per_second > 0
                        ? std::make_shared<RateLimiter>(config.classifier.requests_per_second)
                        : nullptr;
    built.chat = std::make_unique<HttpChatClient>(options, config.classifier.model,
                                                  config.classifier.temperature, nullptr,
                                                  built.limiter);
    HttpChatClient* chat = built.chat.get();
    built.classifier = std::make_unique<ChatBackend>(
        [chat](const std::string& prompt) { return chat->complete(prompt); },
        "chat:" + config.classifier.model);
  }
  if (config.embedding.kind == "hash") {
    built.embedder = std::make_unique<HashedBagEmbedder>(config.embedding.dimension);
  } else {
    HttpOptions options;
    options.endpoint = config.embedding.endpoint;
    options.api_key = resolve_api_key(config.embedding.api_key_env);
    built.embedder = std::make_unique<HttpEmbeddingBackend>(options, config.embedding.model);
  }
  return built;
}

class HttpPerturbClient : public ChatClient {
 public:
  explicit HttpPerturbClient(HttpChatClient& chat) : chat_(chat) {}
  std::string complete(const std::string& prompt) override { return chat_.complete(prompt); }

 private:
  HttpChatClient& chat_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

class Pipeline {
 public:
  explicit Pipeline(RunConfig config, PipelineBackends injected = {})
      : config_(std::move(config)), injected_(injected) {}

  RunManifest run() {
    config_.validate();
    namespace fs = std::filesystem;
    fs::create_directories(config_.output_dir);
    load_cache();
    manifest_.config_snapshot = config_.to_json();

    try {
      execute();
    } catch (...) {
      manifest_.error = current_error_message();
      finalize_manifest();
      throw;
    }
    finalize_manifest();
    return manifest_;
  }

  const RunManifest& manifest() const { return manifest_; }

 private:
  void execute() {
    const Taxonomy taxonomy = Taxonomy::load(config_.taxonomy_path);
    DatasetSplit test = load_dataset(config_.test_dataset, taxonomy, SplitRole::Test);
    if (config_.sample_size > 0 && config_.sample_size < test.records.size()) {
      test = stratified_sample(test, config_.sample_size, config_.seed);
      const std::string sample_name = "sample_" + std::to_string(config_.sample_size) + ".jsonl";
      run_stage("sample", sample_name,
                stage_key({file_key(config_.test_dataset), file_key(config_.taxonomy_path)},
                          {{"sample_size", config_.sample_size}, {"seed", config_.seed}}),
                [&](const std::filesystem::path& artifact) {
                  save_dataset(test, artifact, artifact_meta());
                });
    }

    AbbreviationLexicon lexicon = config_.lexicon_path.empty()
                                      ? AbbreviationLexicon::builtin()
                                      : AbbreviationLexicon::load(config_.lexicon_path);
    if (!config_.lexicon_path.empty()) lexicon.set_rule_fallback(config_.lexicon_rule_fallback);

    detail::BuiltBackends built;
    const bool needs_classifier = injected_.classifier == nullptr;
    const bool needs_embedder =
        injected_.embedder == nullptr &&
        (config_.approach == Approach::FewShot || config_.label_embedding);
    if (needs_classifier || needs_embedder) built = detail::build_backends(config_);
    ClassifierBackend& classifier =
        injected_.classifier ? *injected_.classifier : *built.classifier;
    EmbeddingBackend* embedder = injected_.embedder ? injected_.embedder : built.embedder.get();

    // Perturb stage (skipped entirely for clean: the original text is used).
    std::vector<PerturbedRecord> perturbed;
    if (config_.attack != AttackKind::Clean) {
      const std::string artifact = "perturbed_" + std::string(to_string(config_.attack)) +
                                   ".jsonl";
      nlohmann::json lexicon_fingerprint;
      for (const auto& [word, abbr] : lexicon.entries()) lexicon_fingerprint[word] = abbr;
      const std::string key = stage_key(
          {file_key(config_.test_dataset), file_key(config_.taxonomy_path)},
          {{"attack", to_string(config_.attack)},
           {"mode", config_.perturb_mode == PerturbMode::Llm ? "llm" : "det"},
           {"seed", config_.seed},
           {"sample_size", config_.sample_size},
           {"max_keep_tokens", config_.max_keep_tokens},
           {"max_abbrev_fraction", config_.max_abbrev_fraction},
           {"rule_fallback", lexicon.rule_fallback()},
           {"lexicon", sha256_hex(lexicon_fingerprint.dump())}});
      const bool computed = run_stage("perturb", artifact, key,
                                      [&](const std::filesystem::path& path) {
                                        perturbed = make_perturbed(test, lexicon);
                                        save_perturbed(perturbed, path, artifact_meta());
                                      });
      if (!computed) perturbed = load_perturbed(config_.output_dir / artifact);
      for (const auto& p : perturbed) {
        if (p.degraded) ++manifest_.degraded_count;
      }
    }

    // Few-shot index over the clean training split.
    EmbeddingIndex index;
    DatasetSplit train;
    if (config_.approach == Approach::FewShot) {
      train = load_dataset(config_.train_dataset, taxonomy, SplitRole::Train);
      const std::string artifact = "index.jsonl";
      const std::string key =
          stage_key({file_key(config_.train_dataset), file_key(config_.taxonomy_path)},
                    {{"embedding", config_.embedding.to_json()}});
      const bool computed = run_stage("index", artifact, key,
                                      [&](const std::filesystem::path& path) {
                                        index = build_index(train, *embedder);
                                        index.save(path);
                                      });
      if (!computed) index = EmbeddingIndex::load(config_.output_dir / artifact);
    }

    // Classification.
    const std::string tag = config_.cell_tag();
    const std::string predictions_artifact = "predictions_" + tag + ".jsonl";
    std::vector<PredictionRecord> predictions;
    {
      std::vector<std::string> key_files{file_key(config_.test_dataset),
                                         file_key(config_.taxonomy_path)};
      if (config_.attack != AttackKind::Clean) {
        key_files.push_back(artifact_key("perturbed_" + std::string(to_string(config_.attack)) +
                                         ".jsonl"));
      }
      if (config_.approach == Approach::FewShot) key_files.push_back(artifact_key("index.jsonl"));
      const std::string key = stage_key(
          key_files, {{"approach", to_string(config_.approach)},
                      {"attack", to_string(config_.attack)},
                      {"reason_note", config_.reason_note},
                      {"completion_suffix", config_.completion_suffix},
                      {"sample_size", config_.sample_size},
                      {"seed", config_.seed},
                      {"fewshot_k", config_.fewshot_k},
                      {"label_embedding", config_.label_embedding},
                      {"classifier", config_.classifier.to_json()}});
      const bool computed =
          run_stage("classify", predictions_artifact, key, [&](const std::filesystem::path& path) {
            predictions = make_predictions(test, perturbed, taxonomy, classifier, embedder,
                                           index, train);
            save_predictions(predictions, path, artifact_meta());
          });
      if (!computed) predictions = load_predictions(config_.output_dir / predictions_artifact);
      for (const auto& p : predictions) {
        if (p.normalized_label == kInvalidLabel) ++manifest_.invalid_count;
      }
    }

    // Scoring.
    const std::string report_artifact = "report_" + tag + ".json";
    {
      const std::string key =
          stage_key({artifact_key(predictions_artifact), file_key(config_.test_dataset),
                     file_key(config_.taxonomy_path)},
                    {{"sample_size", config_.sample_size}, {"seed", config_.seed}});
      run_stage("score", report_artifact, key, [&](const std::filesystem::path& path) {
        std::vector<std::string> gold, pred;
        gold.reserve(test.records.size());
        std::map<std::string, std::string> pred_by_id;
        for (const auto& p : predictions) pred_by_id[p.source_id] = p.normalized_label;
        for (const auto& r : test.records) {
          gold.push_back(r.leaf_label);
          auto it = pred_by_id.find(r.id);
          if (it == pred_by_id.end()) {
            throw ValidationError("no prediction for record \"" + r.id + "\"");
          }
          pred.push_back(it->second);
        }
        const MetricsReport report = compute_prf(gold, pred, taxonomy.leaves());
        nlohmann::json doc{{"header", report_header()}, {"report", report.to_json()}};
        write_file(path, doc.dump(2) + "\n");
      });
    }

    // Robustness against the same-approach clean baseline, when present.
    if (config_.attack != AttackKind::Clean) {
      const std::string clean_report =
          "report_" + std::string(to_string(config_.approach)) + "_clean.json";
      const auto clean_path = config_.output_dir / clean_report;
      if (std::filesystem::exists(clean_path)) {
        const std::string artifact = "robustness_" + tag + ".json";
        const std::string key =
            stage_key({artifact_key(report_artifact), artifact_key(clean_report)}, {});
        run_stage("robustness", artifact, key, [&](const std::filesystem::path& path) {
          const MetricsReport clean = load_report(clean_path);
          const MetricsReport attacked = load_report(config_.output_dir / report_artifact);
          const RobustnessReport robustness = compute_delta_r(clean, attacked);
          nlohmann::json doc{{"header", report_header()},
                             {"baseline", clean_report},
                             {"robustness", robustness.to_json()}};
          write_file(path, doc.dump(2) + "\n");
        });
      }
    }
  }

  std::vector<PerturbedRecord> make_perturbed(const DatasetSplit& test,
                                              const AbbreviationLexicon& lexicon) {
    PerturbationConfig cfg;
    cfg.mode = config_.perturb_mode;
    cfg.max_keep_tokens = config_.max_keep_tokens;
    cfg.max_abbrev_fraction = config_.max_abbrev_fraction;
    cfg.seed = derive_seed(config_.seed, "perturb");
    if (cfg.mode == PerturbMode::Deterministic) {
      auto freq = std::make_shared<TokenFrequency>(build_token_frequency(test));
      cfg.corpus_frequency = freq;
      return perturb_split(test, config_.attack, lexicon, cfg);
    }
    // LLM mode: amputation and abbreviation prompts, composed for combined.
    ChatClient* client = injected_.perturb_client;
    std::unique_ptr<detail::HttpPerturbClient> owned;
    std::unique_ptr<HttpChatClient> chat;
    if (!client) {
      if (config_.classifier.kind != "chat-llm") {
        throw ConfigError("llm perturb mode needs a chat-llm classifier config for transport");
      }
      HttpOptions options;
      options.endpoint = config_.classifier.endpoint;
      options.api_key = resolve_api_key(config_.classifier.api_key_env);
      options.timeout_seconds = config_.classifier.timeout_seconds;
      options.max_retries = config_.classifier.max_retries;
      chat = std::make_unique<HttpChatClient>(options, config_.classifier.model,
                                              config_.classifier.temperature);
      owned = std::make_unique<detail::HttpPerturbClient>(*chat);
      client = owned.get();
    }
    auto perturb_one = [&](const ProductRecord& record) {
      switch (config_.attack) {
        case AttackKind::Abbreviated:
          return llm_perturb(record, PerturbPromptKind::Abbreviation, *client);
        case AttackKind::Amputated:
          return llm_perturb(record, PerturbPromptKind::Amputation, *client);
        case AttackKind::Combined: {
          PerturbedRecord amputated = llm_perturb(record, PerturbPromptKind::Amputation, *client);
          ProductRecord staged = record;
          staged.description = amputated.description;
          PerturbedRecord out = llm_perturb(staged, PerturbPromptKind::Abbreviation, *client);
          out.attack = AttackKind::Combined;
          out.kept_indices = amputated.kept_indices;
          if (amputated.degraded) {
            out.degraded = true;
            out.note = out.note.empty() ? amputated.note : amputated.note + "; " + out.note;
          }
          return out;
        }
        default:
          throw ConfigError("llm perturb mode does not apply to the clean attack");
      }
    };
    return parallel_ordered_map(test.records, perturb_one, config_.parallelism);
  }

  std::vector<PredictionRecord> make_predictions(const DatasetSplit& test,
                                                 const std::vector<PerturbedRecord>& perturbed,
                                                 const Taxonomy& taxonomy,
                                                 ClassifierBackend& classifier,
                                                 EmbeddingBackend* embedder,
                                                 const EmbeddingIndex& index,
                                                 const DatasetSplit& train) {
    std::vector<ClassifyInput> inputs;
    inputs.reserve(test.records.size());
    if (config_.attack == AttackKind::Clean) {
      for (const auto& r : test.records) inputs.push_back(classify_input_from(r));
    } else {
      if (perturbed.size() != test.records.size()) {
        throw ValidationError("perturbed artifact does not match the test split");
      }
      for (std::size_t i = 0; i < test.records.size(); ++i) {
        if (perturbed[i].source_id != test.records[i].id) {
          throw ValidationError("perturbed record order mismatch at position " +
                                std::to_string(i));
        }
        inputs.push_back(classify_input_from(perturbed[i], test.records[i]));
      }
    }

    ClassifyOptions options;
    options.attack = config_.attack;
    options.reason_note = config_.reason_note;
    options.completion_suffix = config_.completion_suffix;
    if (config_.label_embedding) options.label_embedder = embedder;

    PromptSpec flat_spec;
    flat_spec.class_list = taxonomy.leaves();

    auto classify_one = [&](const ClassifyInput& input) {
      switch (config_.approach) {
        case Approach::Flat:
          return classify_flat(input, classifier, flat_spec, options);
        case Approach::Hierarchical:
          return classify_hierarchical(input, classifier, taxonomy, options);
        case Approach::FewShot:
          return classify_fewshot(input, classifier, *embedder, index, train,
                                  taxonomy.leaves(), config_.fewshot_k, options);
      }
      throw ConfigError("unreachable approach");
    };
    return parallel_ordered_map(inputs, classify_one, config_.parallelism);
  }

  // --- caching -------------------------------------------------------------

  void load_cache() {
    const auto path = config_.output_dir / "cache.json";
    if (std::filesystem::exists(path)) {
      try {
        cache_ = nlohmann::json::parse(read_file(path));
      } catch (const nlohmann::json::exception&) {
        cache_ = nlohmann::json::object();  // stale cache is just a miss
      }
    } else {
      cache_ = nlohmann::json::object();
    }
  }

  void save_cache() {
    write_file(config_.output_dir / "cache.json", cache_.dump(2) + "\n");
  }

  std::string file_key(const std::filesystem::path& path) { return sha256_file(path); }

  std::string artifact_key(const std::string& artifact) {
    return sha256_file(config_.output_dir / artifact);
  }

  static std::string stage_key(const std::vector<std::string>& input_hashes,
                               const nlohmann::json& relevant_config) {
    nlohmann::json key{{"inputs", input_hashes}, {"config", relevant_config}};
    return sha256_hex(key.dump());
  }

  // Runs `make` unless the cached key matches and the artifact exists.
  // Returns true when the stage actually computed.
  template <typename MakeFn>
  bool run_stage(const std::string& name, const std::string& artifact, const std::string& key,
                 MakeFn make) {
    const auto path = config_.output_dir / artifact;
    const auto start = std::chrono::steady_clock::now();
    const bool cached = cache_.contains(artifact) && cache_[artifact] == key &&
                        std::filesystem::exists(path);
    if (!cached) {
      make(path);
      cache_[artifact] = key;
      save_cache();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest_.stages.push_back({name, cached, seconds});
    return !cached;
  }

  // --- manifest ------------------------------------------------------------

  nlohmann::json artifact_meta() const {
    return {{"tool", "robusteval"},
            {"seed", config_.seed},
            {"attack", to_string(config_.attack)},
            {"approach", to_string(config_.approach)},
            {"reason_note", config_.reason_note},
            {"source", config_.test_dataset.filename().string()}};
  }

  nlohmann::json report_header() const {
    return {{"tool", "robusteval"},
            {"seed", config_.seed},
            {"attack", to_string(config_.attack)},
            {"approach", to_string(config_.approach)},
            {"reason_note", config_.reason_note},
            {"n_source", config_.test_dataset.filename().string()},
            {"kl_units", "nats"}};
  }

  static MetricsReport load_report(const std::filesystem::path& path) {
    try {
      const nlohmann::json doc = nlohmann::json::parse(read_file(path));
      return MetricsReport::from_json(doc.at("report"));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("report " + path.string() + ": " + ex.what());
    }
  }

  void finalize_manifest() {
    manifest_.artifacts.clear();
    for (const auto& entry : std::filesystem::directory_iterator(config_.output_dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string name = entry.path().filename().string();
      if (name == "manifest.json") continue;
      manifest_.artifacts[name] = sha256_file(entry.path());
    }
    write_file(config_.output_dir / "manifest.json", manifest_.to_json().dump(2) + "\n");
  }

  static std::string current_error_message() {
    try {
      throw;
    } catch (const std::exception& ex) {
      return ex.what();
    } catch (...) {
      return "unknown error";
    }
  }

  RunConfig config_;
  PipelineBackends injected_;
  RunManifest manifest_;
  nlohmann::json cache_;
};

inline RunManifest run_pipeline(const RunConfig& config, PipelineBackends injected = {}) {
  Pipeline pipeline(config, injected);
  return pipeline.run();
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace detail {

struct ReportCell {
  Approach approach;
  AttackKind attack;
  bool reason_note;
  MetricsReport report;
};

struct RobustnessCell {
  Approach approach;
  AttackKind attack;
  bool reason_note;
  std::map<std::string, std::optional<double>> delta;  // metric -> fraction
};

inline bool parse_cell_tag(const std::string& stem, const std::string& prefix, Approach& approach,
                           AttackKind& attack, bool& reason) {
  if (stem.rfind(prefix, 0) != 0) return false;
  std::string rest = stem.substr(prefix.size());
  reason = false;
  if (rest.size() > 7 && rest.substr(rest.size() - 7) == "_reason") {
    reason = true;
    rest = rest.substr(0, rest.size() - 7);
  }
  const auto underscore = rest.find('_');
  if (underscore == std::string::npos) return false;
  try {
    approach = approach_from_string(rest.substr(0, underscore));
    attack = attack_from_string(rest.substr(underscore + 1));
  } catch (const ConfigError&) {
    return false;
  }
  return true;
}

inline std::string attack_display(AttackKind attack, bool reason) {
  std::string name = to_string(attack);
  if (!name.empty()) name[0] = static_cast<char>(std::toupper(name[0]));
  if (reason) name += "-Reason";
  return name;
}

}  // namespace detail

// Renders the human table for every report in an output directory: one row
// per (approach, attack) with the six metric columns as one-decimal
// percentages, plus a delta_r row per robustness pairing. Returns the table;
// optionally writes a full-precision CSV next to it.
inline std::string render_report_table(const std::filesystem::path& dir,
                                       const std::filesystem::path& csv_path = {}) {
  namespace fs = std::filesystem;
  std::vector<detail::ReportCell> cells;
  std::vector<detail::RobustnessCell> robustness;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    const std::string stem = entry.path().stem().string();
    Approach approach;
    AttackKind attack;
    bool reason;
    if (detail::parse_cell_tag(stem, "report_", approach, attack, reason)) {
      const nlohmann::json doc = nlohmann::json::parse(read_file(entry.path()));
      cells.push_back({approach, attack, reason, MetricsReport::from_json(doc.at("report"))});
    } else if (detail::parse_cell_tag(stem, "robustness_", approach, attack, reason)) {
      const nlohmann::json doc = nlohmann::json::parse(read_file(entry.path()));
      detail::RobustnessCell cell{approach, attack, reason, {}};
      for (const auto& [metric, value] : doc.at("robustness").at("delta_r").items()) {
        cell.delta[metric] = value.contains("delta_r")
                                 ? std::optional<double>(value.at("delta_r").get<double>())
                                 : std::nullopt;
      }
      robustness.push_back(std::move(cell));
    }
  }
  if (cells.empty()) throw ValidationError("no report_*.json files in " + dir.string());

  auto order_key = [](Approach approach, AttackKind attack, bool reason) {
    return static_cast<int>(approach) * 100 + static_cast<int>(attack) * 2 + (reason ? 1 : 0);
  };
  std::sort(cells.begin(), cells.end(), [&](const auto& a, const auto& b) {
    return order_key(a.approach, a.attack, a.reason_note) <
           order_key(b.approach, b.attack, b.reason_note);
  });
  std::sort(robustness.begin(), robustness.end(), [&](const auto& a, const auto& b) {
    return order_key(a.approach, a.attack, a.reason_note) <
           order_key(b.approach, b.attack, b.reason_note);
  });

  static constexpr const char* kMetricKeys[] = {"ma_P", "ma_R", "ma_F1", "we_P", "we_R", "we_F1"};
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-14s %-22s %7s %7s %7s %7s %7s %7s\n", "Approach",
                "Attack", "ma-P", "ma-R", "ma-F1", "we-P", "we-R", "we-F1");
  out += line;
  out += std::string(82, '-') + "\n";

  std::string csv = "approach,attack,reason_note,ma_P,ma_R,ma_F1,we_P,we_R,we_F1\n";
  std::optional<Approach> current;
  auto emit_robustness_rows = [&](Approach approach) {
    for (const auto& r : robustness) {
      if (r.approach != approach) continue;
      std::string label = "\xCE\x94_r(" + detail::attack_display(r.attack, r.reason_note) + ") %";
      std::snprintf(line, sizeof(line), "%-14s %-22s", "", label.c_str());
      out += line;
      csv += std::string("delta_r_") + to_string(r.approach) + "," + to_string(r.attack) + "," +
             (r.reason_note ? "true" : "false");
      for (const char* key : kMetricKeys) {
        auto it = r.delta.find(key);
        if (it != r.delta.end() && it->second) {
          std::snprintf(line, sizeof(line), " %7s", format_percent(*it->second).c_str());
          char buf[64];
          std::snprintf(buf, sizeof(buf), ",%.17g", *it->second);
          csv += buf;
        } else {
          std::snprintf(line, sizeof(line), " %7s", "n/a");
          csv += ",";
        }
        out += line;
      }
      out += "\n";
      csv += "\n";
    }
  };

  for (const auto& cell : cells) {
    if (current && *current != cell.approach) {
      emit_robustness_rows(*current);
      out += "\n";
    }
    current = cell.approach;
    const double values[] = {cell.report.ma_p, cell.report.ma_r, cell.report.ma_f1,
                             cell.report.we_p, cell.report.we_r, cell.report.we_f1};
    std::snprintf(line, sizeof(line), "%-14s %-22s", to_string(cell.approach),
                  detail::attack_display(cell.attack, cell.reason_note).c_str());
    out += line;
    csv += std::string(to_string(cell.approach)) + "," + to_string(cell.attack) + "," +
           (cell.reason_note ? "true" : "false");
    for (double v : values) {
      std::snprintf(line, sizeof(line), " %7s", format_percent(v).c_str());
      out += line;
      char buf[64];
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      csv += buf;
    }
    out += "\n";
    csv += "\n";
  }
  if (current) emit_robustness_rows(*current);

  bool has_clean = false, has_attacked = false;
  for (const auto& cell : cells) {
    (cell.attack == AttackKind::Clean ? has_clean : has_attacked) = true;
  }
  if (has_attacked && robustness.empty()) {
    out += has_clean ? "\nnote: no robustness reports found\n"
                     : "\nnote: no clean baseline report; delta_r rows omitted\n";
  }

  if (!csv_path.empty()) write_file(csv_path, csv);
  return out;
}

}  // namespace robusteval

// robusteval CLI: dataset validation and sampling, data attacks, embedding
// index construction and queries, classification runs, scoring, and the
// end-to-end pipeline.
//
// Exit codes: 0 success, 1 validation/config error, 2 stage failure,
// 3 backend exhaustion.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "robusteval/classify.hpp"
#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"
#include "robusteval/metrics.hpp"
#include "robusteval/net.hpp"
#include "robusteval/perturb.hpp"
#include "robusteval/pipeline.hpp"
#include "robusteval/retrieval.hpp"

namespace rv = robusteval;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStageFailure = 2;
constexpr int kExitBackendExhaustion = 3;

std::unique_ptr<rv::EmbeddingBackend> make_embedder(const std::string& kind, std::size_t dim,
                                                    const std::string& endpoint,
                                                    const std::string& model,
                                                    const std::string& api_key_env) {
  if (kind == "hash") return std::make_unique<rv::HashedBagEmbedder>(dim);
  if (kind == "http") {
    rv::HttpOptions options;
    options.endpoint = endpoint;
    options.api_key = rv::resolve_api_key(api_key_env);
    return std::make_unique<rv::HttpEmbeddingBackend>(options, model);
  }
  throw rv::ConfigError("unknown embedding backend \"" + kind + "\"");
}

int cmd_corpus_validate(const std::string& dataset, const std::string& taxonomy) {
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit split = rv::load_dataset(dataset, tax, rv::SplitRole::Test);
  std::map<std::string, std::size_t> per_class;
  for (const auto& r : split.records) ++per_class[r.leaf_label];
  std::cout << "ok: " << split.records.size() << " records, " << per_class.size()
            << " classes present, taxonomy \"" << tax.root() << "\" with " << tax.leaves().size()
            << " leaves / " << tax.second_level().size() << " second-level nodes\n";
  return kExitOk;
}

int cmd_corpus_sample(const std::string& dataset, const std::string& taxonomy, std::size_t size,
                      std::uint64_t seed, const std::string& out) {
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit split = rv::load_dataset(dataset, tax, rv::SplitRole::Test);
  const rv::DatasetSplit sample = rv::stratified_sample(split, size, seed);
  rv::save_dataset(sample, out,
                   {{"tool", "robusteval"},
                    {"seed", seed},
                    {"sample_size", size},
                    {"source", fs::path(dataset).filename().string()}});
  std::cout << "wrote " << sample.records.size() << " records to " << out << "\n";
  return kExitOk;
}

int cmd_perturb_run(const std::string& dataset, const std::string& taxonomy,
                    const std::string& attack_name, const std::string& mode,
                    std::uint64_t seed, const std::string& out, const std::string& lexicon_path,
                    bool rule_fallback, std::size_t keep, double fraction,
                    const std::string& endpoint, const std::string& model,
                    const std::string& api_key_env, std::size_t parallelism) {
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit split = rv::load_dataset(dataset, tax, rv::SplitRole::Test);
  const rv::AttackKind attack = rv::attack_from_string(attack_name);

  rv::AbbreviationLexicon lexicon = lexicon_path.empty() ? rv::AbbreviationLexicon::builtin()
                                                         : rv::AbbreviationLexicon::load(lexicon_path);
  if (!lexicon_path.empty()) lexicon.set_rule_fallback(rule_fallback);

  rv::PerturbationConfig cfg;
  cfg.max_keep_tokens = keep;
  cfg.max_abbrev_fraction = fraction;
  cfg.seed = rv::derive_seed(seed, "perturb");

  std::vector<rv::PerturbedRecord> records;
  if (mode == "det") {
    cfg.mode = rv::PerturbMode::Deterministic;
    cfg.corpus_frequency =
        std::make_shared<const rv::TokenFrequency>(rv::build_token_frequency(split));
    records = rv::perturb_split(split, attack, lexicon, cfg);
  } else if (mode == "llm") {
    if (endpoint.empty()) throw rv::ConfigError("llm mode needs --endpoint");
    rv::HttpOptions options;
    options.endpoint = endpoint;
    options.api_key = rv::resolve_api_key(api_key_env);
    rv::HttpChatClient chat(options, model);
    struct Client : rv::ChatClient {
      rv::HttpChatClient& chat;
      explicit Client(rv::HttpChatClient& c) : chat(c) {}
      std::string complete(const std::string& prompt) override { return chat.complete(prompt); }
    } client(chat);
    auto perturb_one = [&](const rv::ProductRecord& record) {
      switch (attack) {
        case rv::AttackKind::Abbreviated:
          return rv::llm_perturb(record, rv::PerturbPromptKind::Abbreviation, client);
        case rv::AttackKind::Amputated:
          return rv::llm_perturb(record, rv::PerturbPromptKind::Amputation, client);
        case rv::AttackKind::Combined: {
          auto amputated = rv::llm_perturb(record, rv::PerturbPromptKind::Amputation, client);
          rv::ProductRecord staged = record;
          staged.description = amputated.description;
          auto combined = rv::llm_perturb(staged, rv::PerturbPromptKind::Abbreviation, client);
          combined.attack = rv::AttackKind::Combined;
          combined.kept_indices = amputated.kept_indices;
          if (amputated.degraded) {
            combined.degraded = true;
            combined.note = combined.note.empty() ? amputated.note
                                                  : amputated.note + "; " + combined.note;
          }
          return combined;
        }
        default:
          throw rv::ConfigError("llm mode does not apply to the clean attack");
      }
    };
    records = rv::parallel_ordered_map(split.records, perturb_one, parallelism);
  } else {
    throw rv::ConfigError("mode must be det or llm");
  }

  std::size_t degraded = 0;
  for (const auto& r : records) degraded += r.degraded ? 1 : 0;
  rv::save_perturbed(records, out,
                     {{"tool", "robusteval"},
                      {"seed", seed},
                      {"attack", attack_name},
                      {"mode", mode},
                      {"source", fs::path(dataset).filename().string()}});
  std::cout << "wrote " << records.size() << " perturbed records to " << out;
  if (degraded > 0) std::cout << " (" << degraded << " flagged degraded)";
  std::cout << "\n";
  return kExitOk;
}

int cmd_retrieval_build(const std::string& dataset, const std::string& taxonomy,
                        const std::string& kind, std::size_t dim, const std::string& endpoint,
                        const std::string& model, const std::string& api_key_env,
                        const std::string& out) {
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit split = rv::load_dataset(dataset, tax, rv::SplitRole::Train);
  auto embedder = make_embedder(kind, dim, endpoint, model, api_key_env);
  const rv::EmbeddingIndex index = rv::build_index(split, *embedder);
  index.save(out);
  std::cout << "wrote index (" << index.entries.size() << " entries, dimension "
            << index.dimension << ", fingerprint " << index.fingerprint << ") to " << out << "\n";
  return kExitOk;
}

int cmd_retrieval_topk(const std::string& index_path, const std::string& dataset,
                       const std::string& taxonomy, const std::string& record_id, std::size_t k,
                       const std::string& kind, std::size_t dim, const std::string& endpoint,
                       const std::string& model, const std::string& api_key_env) {
  const rv::EmbeddingIndex index = rv::EmbeddingIndex::load(index_path);
  auto embedder = make_embedder(kind, dim, endpoint, model, api_key_env);
  if (embedder->fingerprint() != index.fingerprint) {
    throw rv::ValidationError("index fingerprint \"" + index.fingerprint +
                              "\" does not match backend \"" + embedder->fingerprint() + "\"");
  }
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit split = rv::load_dataset(dataset, tax, rv::SplitRole::Test);
  const rv::ProductRecord* query = nullptr;
  for (const auto& r : split.records) {
    if (r.id == record_id) {
      query = &r;
      break;
    }
  }
  if (!query) throw rv::ValidationError("record \"" + record_id + "\" not found in dataset");
  const auto hits =
      rv::top_k_similar(embedder->embed_one(query->description), index, k, &record_id);
  for (const auto& hit : hits) {
    std::cout << hit.id << "\t" << hit.similarity << "\n";
  }
  return kExitOk;
}

int cmd_retrieval_similarity(const std::string& clean_path, const std::string& attacked_path,
                             const std::string& taxonomy, const std::string& kind,
                             std::size_t dim, const std::string& endpoint,
                             const std::string& model, const std::string& api_key_env) {
  const rv::Taxonomy tax = rv::Taxonomy::load(taxonomy);
  const rv::DatasetSplit clean = rv::load_dataset(clean_path, tax, rv::SplitRole::Test);
  const auto attacked = rv::load_perturbed(attacked_path);
  auto embedder = make_embedder(kind, dim, endpoint, model, api_key_env);
  std::cout << rv::mean_pairwise_similarity(clean, attacked, *embedder) << "\n";
  return kExitOk;
}

int cmd_classify_run(const std::string& input_path, const std::string& clean_path,
                     const std::string& taxonomy_path, const std::string& approach_name,
                     const std::string& attack_name, bool reason_note, bool completion_suffix,
                     const std::string& backend_kind, const std::string& endpoint,
                     const std::string& model, const std::string& api_key_env,
                     const std::string& prediction_file, const std::string& index_path,
                     const std::string& train_path, std::size_t k, const std::string& kind,
                     std::size_t dim, const std::string& out, std::size_t parallelism) {
  const rv::Taxonomy taxonomy = rv::Taxonomy::load(taxonomy_path);
  const rv::Approach approach = rv::approach_from_string(approach_name);
  const rv::AttackKind attack = rv::attack_from_string(attack_name);

  // Inputs: a clean dataset, or a perturbed artifact plus its clean source.
  std::vector<rv::ClassifyInput> inputs;
  if (attack == rv::AttackKind::Clean) {
    const rv::DatasetSplit split = rv::load_dataset(input_path, taxonomy, rv::SplitRole::Test);
    for (const auto& r : split.records) inputs.push_back(rv::classify_input_from(r));
  } else {
    if (clean_path.empty()) {
      throw rv::ConfigError("attacked runs need --clean <dataset> for gold provenance");
    }
    const rv::DatasetSplit clean = rv::load_dataset(clean_path, taxonomy, rv::SplitRole::Test);
    const auto perturbed = rv::load_perturbed(input_path);
    if (perturbed.size() != clean.records.size()) {
      throw rv::ValidationError("perturbed artifact does not match the clean dataset");
    }
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
      if (perturbed[i].source_id != clean.records[i].id) {
        throw rv::ValidationError("perturbed record order mismatch at position " +
                                  std::to_string(i));
      }
      inputs.push_back(rv::classify_input_from(perturbed[i], clean.records[i]));
    }
  }

  std::unique_ptr<rv::ClassifierBackend> backend;
  std::unique_ptr<rv::HttpChatClient> chat;
  if (backend_kind == "mock-gold") {
    backend = std::make_unique<rv::GoldEchoBackend>();
  } else if (backend_kind == "prediction-file") {
    if (prediction_file.empty()) {
      throw rv::ConfigError("prediction-file backend needs --prediction-file");
    }
    backend = std::make_unique<rv::PredictionFileBackend>(prediction_file);
  } else if (backend_kind == "chat-llm") {
    if (endpoint.empty()) throw rv::ConfigError("chat-llm backend needs --endpoint");
    rv::HttpOptions options;
    options.endpoint = endpoint;
    options.api_key = rv::resolve_api_key(api_key_env);
    chat = std::make_unique<rv::HttpChatClient>(options, model);
    rv::HttpChatClient* chat_ptr = chat.get();
    backend = std::make_unique<rv::ChatBackend>(
        [chat_ptr](const std::string& prompt) { return chat_ptr->complete(prompt); },
        "chat:" + model);
  } else {
    throw rv::ConfigError("unknown backend \"" + backend_kind + "\"");
  }

  rv::ClassifyOptions options;
  options.attack = attack;
  options.reason_note = reason_note;
  options.completion_suffix = completion_suffix;

  rv::PromptSpec flat_spec;
  flat_spec.class_list = taxonomy.leaves();

  rv::EmbeddingIndex index;
  rv::DatasetSplit train;
  std::unique_ptr<rv::EmbeddingBackend> embedder;
  if (approach == rv::Approach::FewShot) {
    if (index_path.empty() || train_path.empty()) {
      throw rv::ConfigError("few-shot needs --index and --train");
    }
    index = rv::EmbeddingIndex::load(index_path);
    train = rv::load_dataset(train_path, taxonomy, rv::SplitRole::Train);
    embedder = make_embedder(kind, dim, endpoint, model, api_key_env);
  }

  auto classify_one = [&](const rv::ClassifyInput& input) {
    switch (approach) {
      case rv::Approach::Flat:
        return rv::classify_flat(input, *backend, flat_spec, options);
      case rv::Approach::Hierarchical:
        return rv::classify_hierarchical(input, *backend, taxonomy, options);
      case rv::Approach::FewShot:
        return rv::classify_fewshot(input, *backend, *embedder, index, train, taxonomy.leaves(),
                                    k, options);
    }
    throw rv::ConfigError("unreachable approach");
  };
  const auto predictions = rv::parallel_ordered_map(inputs, classify_one, parallelism);

  std::size_t invalid = 0;
  for (const auto& p : predictions) invalid += p.normalized_label == rv::kInvalidLabel ? 1 : 0;
  rv::save_predictions(predictions, out,
                       {{"tool", "robusteval"},
                        {"approach", approach_name},
                        {"attack", attack_name},
                        {"reason_note", reason_note},
                        {"backend", backend->name()}});
  std::cout << "wrote " << predictions.size() << " predictions to " << out;
  if (invalid > 0) std::cout << " (" << invalid << " INVALID)";
  std::cout << "\n";
  return kExitOk;
}

int cmd_metrics_score(const std::string& gold_path, const std::string& pred_path,
                      const std::string& taxonomy_path, const std::string& out) {
  const rv::Taxonomy taxonomy = rv::Taxonomy::load(taxonomy_path);
  const rv::DatasetSplit split = rv::load_dataset(gold_path, taxonomy, rv::SplitRole::Test);
  const auto predictions = rv::load_predictions(pred_path);
  std::map<std::string, std::string> pred_by_id;
  for (const auto& p : predictions) pred_by_id[p.source_id] = p.normalized_label;
  std::vector<std::string> gold, pred;
  for (const auto& r : split.records) {
    auto it = pred_by_id.find(r.id);
    if (it == pred_by_id.end()) {
      throw rv::ValidationError("no prediction for record \"" + r.id + "\"");
    }
    gold.push_back(r.leaf_label);
    pred.push_back(it->second);
  }
  const rv::MetricsReport report = rv::compute_prf(gold, pred, taxonomy.leaves());
  std::cout << "n=" << report.n << "  ma-P " << rv::format_percent(report.ma_p) << "  ma-R "
            << rv::format_percent(report.ma_r) << "  ma-F1 " << rv::format_percent(report.ma_f1)
            << "  we-P " << rv::format_percent(report.we_p) << "  we-R "
            << rv::format_percent(report.we_r) << "  we-F1 " << rv::format_percent(report.we_f1)
            << "\n";
  if (!out.empty()) {
    rv::write_file(out, nlohmann::json{{"header", {{"tool", "robusteval"}}},
                                       {"report", report.to_json()}}
                                .dump(2) +
                            "\n");
  }
  return kExitOk;
}

rv::MetricsReport load_report_file(const std::string& path) {
  const nlohmann::json doc = nlohmann::json::parse(rv::read_file(path));
  return rv::MetricsReport::from_json(doc.contains("report") ? doc.at("report") : doc);
}

int cmd_metrics_robustness(const std::string& clean_path, const std::string& attacked_path,
                           const std::string& out) {
  const rv::RobustnessReport report =
      rv::compute_delta_r(load_report_file(clean_path), load_report_file(attacked_path));
  for (const auto& [metric, entry] : report.delta) {
    std::cout << metric << ": ";
    if (entry.delta) {
      std::cout << rv::format_percent(*entry.delta) << "%";
    } else {
      std::cout << "undefined (clean metric is 0)";
    }
    std::cout << "\n";
  }
  if (!out.empty()) {
    rv::write_file(out, nlohmann::json{{"header", {{"tool", "robusteval"}}},
                                       {"robustness", report.to_json()}}
                                .dump(2) +
                            "\n");
  }
  return kExitOk;
}

std::vector<std::string> descriptions_of(const std::string& path, const rv::Taxonomy& taxonomy) {
  // Accepts either a dataset or a perturbed artifact.
  std::vector<std::string> out;
  try {
    for (const auto& p : rv::load_perturbed(path)) out.push_back(p.description);
    if (!out.empty()) return out;
  } catch (const rv::Error&) {
    out.clear();
  }
  const rv::DatasetSplit split = rv::load_dataset(path, taxonomy, rv::SplitRole::Test);
  for (const auto& r : split.records) out.push_back(r.description);
  return out;
}

int cmd_metrics_kl(const std::string& a_path, const std::string& b_path,
                   const std::string& taxonomy_path) {
  const rv::Taxonomy taxonomy = rv::Taxonomy::load(taxonomy_path);
  const auto a = rv::DistributionStats::from_descriptions(descriptions_of(a_path, taxonomy));
  const auto b = rv::DistributionStats::from_descriptions(descriptions_of(b_path, taxonomy));
  std::cout << rv::compute_kl(a, b) << " nats\n";
  return kExitOk;
}

int cmd_pipeline_run(const std::string& config_path, bool dry_run) {
  const rv::RunConfig config = rv::RunConfig::load(config_path);
  config.validate();
  if (dry_run) {
    std::cout << "config ok\n";
    return kExitOk;
  }
  const rv::RunManifest manifest = rv::run_pipeline(config);
  for (const auto& stage : manifest.stages) {
    std::cout << stage.name << (stage.cached ? " (cached)" : "") << "\n";
  }
  std::cout << "artifacts: " << manifest.artifacts.size() << ", invalid predictions: "
            << manifest.invalid_count << ", degraded perturbations: " << manifest.degraded_count
            << "\n";
  return kExitOk;
}

int cmd_pipeline_report(const std::string& dir, const std::string& csv) {
  std::cout << rv::render_report_table(dir, csv.empty() ? fs::path() : fs::path(csv));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-attack simulation and classification robustness evaluation for "
               "product-description corpora"};
  app.require_subcommand(1);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Dataset and taxonomy operations");
  corpus->require_subcommand(1);
  std::string dataset, taxonomy, out_path;
  auto* validate = corpus->add_subcommand("validate", "Validate a dataset against a taxonomy");
  validate->add_option("dataset", dataset)->required();
  validate->add_option("taxonomy", taxonomy)->required();

  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
  auto* sample = corpus->add_subcommand("sample", "Deterministic stratified sample");
  sample->add_option("--in", dataset)->required();
  sample->add_option("--taxonomy", taxonomy)->required();
  sample->add_option("--size", sample_size)->required();
  sample->add_option("--seed", seed)->default_val(0);
  sample->add_option("--out", out_path)->required();

  // perturb
  std::string attack = "combined", mode = "det", lexicon_path, endpoint, model = "gpt-4",
              api_key_env;
  bool rule_fallback = false;
  std::size_t keep = 5, parallelism = 1;
  double fraction = 0.20;
  auto* perturb = app.add_subcommand("perturb", "Data attacks");
  perturb->require_subcommand(1);
  auto* perturb_run = perturb->add_subcommand("run", "Attack a dataset");
  perturb_run->add_option("--in", dataset)->required();
  perturb_run->add_option("--taxonomy", taxonomy)->required();
  perturb_run->add_option("--attack", attack)
      ->check(CLI::IsMember({"abbreviated", "amputated", "combined"}))
      ->required();
  perturb_run->add_option("--mode", mode)->check(CLI::IsMember({"det", "llm"}));
  perturb_run->add_option("--seed", seed)->default_val(0);
  perturb_run->add_option("--out", out_path)->required();
  perturb_run->add_option("--lexicon", lexicon_path);
  perturb_run->add_flag("--rule-fallback", rule_fallback);
  perturb_run->add_option("--keep", keep);
  perturb_run->add_option("--fraction", fraction);
  perturb_run->add_option("--endpoint", endpoint);
  perturb_run->add_option("--model", model);
  perturb_run->add_option("--api-key-env", api_key_env);
  perturb_run->add_option("--parallelism", parallelism);

  // retrieval
  std::string emb_kind = "hash", index_path, record_id, attacked_path;
  std::size_t dim = 256, topk = 5;
  auto* retrieval = app.add_subcommand("retrieval", "Embeddings and similarity");
  retrieval->require_subcommand(1);
  auto* build = retrieval->add_subcommand("build-index", "Embed a training split");
  build->add_option("--in", dataset)->required();
  build->add_option("--taxonomy", taxonomy)->required();
  build->add_option("--backend", emb_kind)->check(CLI::IsMember({"hash", "http"}));
  build->add_option("--dim", dim);
  build->add_option("--endpoint", endpoint);
  build->add_option("--model", model);
  build->add_option("--api-key-env", api_key_env);
  build->add_option("--out", out_path)->required();

  auto* topk_cmd = retrieval->add_subcommand("topk", "Query an index");
  topk_cmd->add_option("--index", index_path)->required();
  topk_cmd->add_option("--in", dataset)->required();
  topk_cmd->add_option("--taxonomy", taxonomy)->required();
  topk_cmd->add_option("--id", record_id)->required();
  topk_cmd->add_option("--k", topk);
  topk_cmd->add_option("--backend", emb_kind)->check(CLI::IsMember({"hash", "http"}));
  topk_cmd->add_option("--dim", dim);
  topk_cmd->add_option("--endpoint", endpoint);
  topk_cmd->add_option("--model", model);
  topk_cmd->add_option("--api-key-env", api_key_env);

  auto* similarity = retrieval->add_subcommand("similarity",
                                               "Mean clean-vs-attacked cosine similarity");
  similarity->add_option("--clean", dataset)->required();
  similarity->add_option("--attacked", attacked_path)->required();
  similarity->add_option("--taxonomy", taxonomy)->required();
  similarity->add_option("--backend", emb_kind)->check(CLI::IsMember({"hash", "http"}));
  similarity->add_option("--dim", dim);
  similarity->add_option("--endpoint", endpoint);
  similarity->add_option("--model", model);
  similarity->add_option("--api-key-env", api_key_env);

  // classify
  std::string approach = "flat", backend_kind = "mock-gold", prediction_file, clean_path,
              train_path;
  bool reason_note = false, completion_suffix = false;
  auto* classify = app.add_subcommand("classify", "Classification runs");
  classify->require_subcommand(1);
  auto* classify_run = classify->add_subcommand("run", "Classify a dataset or attacked artifact");
  classify_run->add_option("--in", dataset)->required();
  classify_run->add_option("--clean", clean_path);
  classify_run->add_option("--taxonomy", taxonomy)->required();
  classify_run->add_option("--approach", approach)
      ->check(CLI::IsMember({"flat", "hier", "hierarchical", "fewshot"}));
  classify_run->add_option("--attack", attack)
      ->check(CLI::IsMember({"clean", "abbreviated", "amputated", "combined"}))
      ->default_val("clean");
  classify_run->add_flag("--reason-note", reason_note);
  classify_run->add_flag("--completion-suffix", completion_suffix);
  classify_run->add_option("--backend", backend_kind)
      ->check(CLI::IsMember({"mock-gold", "prediction-file", "chat-llm"}));
  classify_run->add_option("--endpoint", endpoint);
  classify_run->add_option("--model", model);
  classify_run->add_option("--api-key-env", api_key_env);
  classify_run->add_option("--prediction-file", prediction_file);
  classify_run->add_option("--index", index_path);
  classify_run->add_option("--train", train_path);
  classify_run->add_option("--k", topk);
  classify_run->add_option("--emb-backend", emb_kind)->check(CLI::IsMember({"hash", "http"}));
  classify_run->add_option("--dim", dim);
  classify_run->add_option("--parallelism", parallelism);
  classify_run->add_option("--out", out_path)->required();

  // metrics
  std::string gold_path, pred_path, a_path, b_path;
  auto* metrics = app.add_subcommand("metrics", "Scoring and diagnostics");
  metrics->require_subcommand(1);
  auto* score = metrics->add_subcommand("score", "Score predictions against gold");
  score->add_option("--gold", gold_path)->required();
  score->add_option("--pred", pred_path)->required();
  score->add_option("--taxonomy", taxonomy)->required();
  score->add_option("--out", out_path);

  auto* robustness = metrics->add_subcommand("robustness", "Delta_r between two reports");
  robustness->add_option("--clean", clean_path)->required();
  robustness->add_option("--attacked", attacked_path)->required();
  robustness->add_option("--out", out_path);

  auto* kl = metrics->add_subcommand("kl", "KL divergence of token-length histograms");
  kl->add_option("--a", a_path)->required();
  kl->add_option("--b", b_path)->required();
  kl->add_option("--taxonomy", taxonomy)->required();

  // pipeline
  std::string config_path, report_dir, csv_path;
  bool dry_run = false;
  auto* pipeline = app.add_subcommand("pipeline", "End-to-end runs");
  pipeline->require_subcommand(1);
  auto* pipeline_run = pipeline->add_subcommand("run", "Execute a configured run");
  pipeline_run->add_option("--config", config_path)->required();
  pipeline_run->add_flag("--dry-run", dry_run, "Validate the config without executing");
  auto* pipeline_report = pipeline->add_subcommand("report", "Render the report table");
  pipeline_report->add_option("--dir", report_dir)->required();
  pipeline_report->add_option("--csv", csv_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_corpus_validate(dataset, taxonomy);
    if (sample->parsed()) {
      return cmd_corpus_sample(dataset, taxonomy, sample_size, seed, out_path);
    }
    if (perturb_run->parsed()) {
      return cmd_perturb_run(dataset, taxonomy, attack, mode, seed, out_path, lexicon_path,
                             rule_fallback, keep, fraction, endpoint, model, api_key_env,
                             parallelism);
    }
    if (build->parsed()) {
      return cmd_retrieval_build(dataset, taxonomy, emb_kind, dim, endpoint, model, api_key_env,
                                 out_path);
    }
    if (topk_cmd->parsed()) {
      return cmd_retrieval_topk(index_path, dataset, taxonomy, record_id, topk, emb_kind, dim,
                                endpoint, model, api_key_env);
    }
    if (similarity->parsed()) {
      return cmd_retrieval_similarity(dataset, attacked_path, taxonomy, emb_kind, dim, endpoint,
                                      model, api_key_env);
    }
    if (classify_run->parsed()) {
      return cmd_classify_run(dataset, clean_path, taxonomy, approach, attack, reason_note,
                              completion_suffix, backend_kind, endpoint, model, api_key_env,
                              prediction_file, index_path, train_path, topk, emb_kind, dim,
                              out_path, parallelism);
    }
    if (score->parsed()) return cmd_metrics_score(gold_path, pred_path, taxonomy, out_path);
    if (robustness->parsed()) {
      return cmd_metrics_robustness(clean_path, attacked_path, out_path);
    }
    if (kl->parsed()) return cmd_metrics_kl(a_path, b_path, taxonomy);
    if (pipeline_run->parsed()) return cmd_pipeline_run(config_path, dry_run);
    if (pipeline_report->parsed()) return cmd_pipeline_report(report_dir, csv_path);
  } catch (const rv::TransportError& ex) {
    std::cerr << "backend error: " << ex.what() << "\n";
    return kExitBackendExhaustion;
  } catch (const rv::ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const rv::ValidationError& ex) {
    std::cerr << "validation error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const rv::ParseError& ex) {
    std::cerr << "parse error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitStageFailure;
  }
  return kExitOk;
}

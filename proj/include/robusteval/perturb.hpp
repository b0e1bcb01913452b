// Data attacks on product descriptions: deterministic amputation and
// abbreviation operators, their composition, the LLM-backed perturbation
// prompts, and alignment-based validation of LLM outputs.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"

namespace robusteval {

enum class AttackKind { Clean, Abbreviated, Amputated, Combined };

inline const char* to_string(AttackKind a) {
  switch (a) {
    case AttackKind::Clean: return "clean";
    case AttackKind::Abbreviated: return "abbreviated";
    case AttackKind::Amputated: return "amputated";
    case AttackKind::Combined: return "combined";
  }
  return "clean";
}

inline AttackKind attack_from_string(const std::string& s) {
  if (s == "clean") return AttackKind::Clean;
  if (s == "abbreviated") return AttackKind::Abbreviated;
  if (s == "amputated") return AttackKind::Amputated;
  if (s == "combined") return AttackKind::Combined;
  throw ConfigError("unknown attack kind \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// Abbreviation lexicon
// ---------------------------------------------------------------------------

// Maps lowercase full words to shorter forms. Entries must be strictly
// shorter than the word and never identical to it. An optional rule fallback
// strips interior vowels and appends "." for alphabetic words of >= 4
// letters whenever that still shortens the word.
class AbbreviationLexicon {
 public:
  AbbreviationLexicon() = default;

  explicit AbbreviationLexicon(std::map<std::string, std::string> entries,
                               bool rule_fallback = false)
      : rule_fallback_(rule_fallback) {
    for (auto& [word, abbr] : entries) add(word, abbr);
  }

  void add(const std::string& word, const std::string& abbr) {
    const std::string key = to_lower(word);
    if (abbr.size() >= key.size()) {
      throw ValidationError("lexicon: \"" + abbr + "\" is not shorter than \"" + key + "\"");
    }
    if (abbr == key) throw ValidationError("lexicon: \"" + key + "\" maps to itself");
    if (!tokenize(abbr).empty() && tokenize(abbr).size() != 1) {
      throw ValidationError("lexicon: abbreviation \"" + abbr + "\" contains whitespace");
    }
    entries_[key] = abbr;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }
  bool rule_fallback() const { return rule_fallback_; }
  void set_rule_fallback(bool on) { rule_fallback_ = on; }

  // Abbreviated form for a token, if any. Lexicon entries win; the vowel
  // strip rule applies only to purely alphabetic tokens of >= 4 letters.
  std::optional<std::string> lookup(const std::string& token) const {
    const std::string key = to_lower(token);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
    if (rule_fallback_) {
      if (auto rule = rule_abbreviate(key)) return rule;
    }
    return std::nullopt;
  }

  // Interior vowels dropped, "." appended: "wireless" -> "wrlss.".
  // Returns nothing when the result would not be strictly shorter.
  static std::optional<std::string> rule_abbreviate(const std::string& lower_word) {
    if (lower_word.size() < 4) return std::nullopt;
    for (char c : lower_word) {
      if (c < 'a' || c > 'z') return std::nullopt;
    }
    std::string out;
    out.push_back(lower_word.front());
    for (std::size_t i = 1; i + 1 < lower_word.size(); ++i) {
      char c = lower_word[i];
      if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') continue;
      out.push_back(c);
    }
    out.push_back(lower_word.back());
    out.push_back('.');
    if (out.size() >= lower_word.size()) return std::nullopt;
    return out;
  }

  static AbbreviationLexicon builtin();

  // Two-column text: full word TAB abbreviation. '#' lines are comments.
  static AbbreviationLexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open lexicon: " + path.string());
    AbbreviationLexicon lex;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto tab = t.find('\t');
      if (tab == std::string::npos) {
        throw ParseError(path.filename().string() + " line " + std::to_string(line_no) +
                         ": expected <word>TAB<abbreviation>");
      }
      lex.add(trim(t.substr(0, tab)), trim(t.substr(tab + 1)));
    }
    return lex;
  }

  void save(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& [word, abbr] : entries_) out += word + "\t" + abbr + "\n";
    write_file(path, out);
  }

 private:
  std::map<std::string, std::string> entries_;
  bool rule_fallback_ = false;
};

inline AbbreviationLexicon AbbreviationLexicon::builtin() {
  AbbreviationLexicon lex;
  lex.set_rule_fallback(true);
  const std::pair<const char*, const char*> seed[] = {
      {"mobile", "mob."},        {"brown", "brwn"},
      {"black", "blk"},          {"white", "wht"},
      {"wireless", "wrls."},     {"warranty", "wty."},
      {"battery", "batt."},      {"adapter", "adpt."},
      {"charger", "chrgr"},      {"original", "orig."},
      {"professional", "pro."},  {"stainless", "stnls."},
      {"package", "pkg."},       {"quantity", "qty."},
      {"piece", "pc."},          {"pieces", "pcs."},
      {"large", "lrg"},          {"small", "sm."},
      {"medium", "med."},        {"cable", "cbl."},
      {"keyboard", "kbd."},      {"monitor", "mon."},
      {"memory", "mem."},        {"laptop", "lptp"},
      {"support", "supp."},      {"extension", "ext."},
      {"premium", "prem."},      {"genuine", "gen."},
      {"replacement", "repl."},  {"compatible", "compat."},
      {"display", "disp."},      {"speaker", "spkr"},
      {"portable", "prtbl"},     {"digital", "dgtl"},
      {"include", "incl."},      {"included", "incl."},
      {"height", "ht."},         {"width", "wd."},
      {"weight", "wt."},         {"length", "len."},
      {"inches", "in."},         {"approximately", "approx."},
      {"accessories", "accs."},  {"assembly", "assy."},
      {"aluminium", "alu."},     {"aluminum", "alu."},
      {"power", "pwr"},          {"control", "ctrl"},
      {"electronic", "elec."},   {"standard", "std."},
  };
  for (const auto& [word, abbr] : seed) lex.add(word, abbr);
  return lex;
}

// ---------------------------------------------------------------------------
// Perturbation configuration and records
// ---------------------------------------------------------------------------

using TokenFrequency = std::unordered_map<std::string, std::uint64_t>;

// Lowercased token counts over a split's descriptions, used by the
// amputation importance scorer.
inline TokenFrequency build_token_frequency(const DatasetSplit& split) {
  TokenFrequency freq;
  for (const auto& r : split.records) {
    for (const auto& tok : tokenize(r.description)) ++freq[to_lower(tok)];
  }
  return freq;
}

enum class PerturbMode { Deterministic, Llm };

struct PerturbationConfig {
  PerturbMode mode = PerturbMode::Deterministic;
  std::size_t max_keep_tokens = 5;
  double max_abbrev_fraction = 0.20;
  std::uint64_t seed = 0;
  bool lowercase_output = true;
  // Optional corpus statistics for the importance scorer; null means all
  // tokens are equally rare and position decides.
  std::shared_ptr<const TokenFrequency> corpus_frequency;

  void validate() const {
    if (max_keep_tokens < 1) throw ConfigError("max_keep_tokens must be >= 1");
    if (!(max_abbrev_fraction > 0.0) || max_abbrev_fraction > 1.0) {
      throw ConfigError("max_abbrev_fraction must be in (0, 1]");
    }
  }
};

struct PerturbedRecord {
  std::string source_id;
  AttackKind attack = AttackKind::Clean;
  std::string description;
  std::vector<std::size_t> kept_indices;       // original-token indices retained, increasing
  std::vector<std::size_t> abbreviated_indices;  // positions in the post-amputation sequence
  bool degraded = false;  // LLM output violated a hard constraint; kept for audit
  std::string note;
};

// ---------------------------------------------------------------------------
// Deterministic operators
// ---------------------------------------------------------------------------

namespace detail {

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",   "for", "from",
      "has",  "have", "in",   "is",   "it",   "its",  "of",   "on",   "or",  "that",
      "the",  "this", "to",   "was",  "were", "will", "with", "without", "via", "per",
      "into", "over", "under", "up",  "out",  "off",  "not",  "no"};
  return words;
}

inline std::vector<std::string> maybe_lowercase(const std::vector<std::string>& tokens,
                                                bool lowercase) {
  if (!lowercase) return tokens;
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(to_lower(t));
  return out;
}

}  // namespace detail

// Token importance order for deterministic amputation: non-stopwords first,
// then rarer corpus frequency, then earlier position. Returns original
// indices, most important first. The order is total, so results do not
// depend on the seed.
inline std::vector<std::size_t> importance_order(const std::vector<std::string>& tokens,
                                                 const PerturbationConfig& cfg) {
  const TokenFrequency* freq = cfg.corpus_frequency ? cfg.corpus_frequency.get() : nullptr;
  std::vector<std::size_t> order(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) {
    const std::string lower = to_lower(tokens[i]);
    const bool stop = detail::stopwords().count(lower) > 0;
    std::uint64_t count = 0;
    if (freq) {
      auto it = freq->find(lower);
      if (it != freq->end()) count = it->second;
    }
    return std::tuple<bool, std::uint64_t, std::size_t>(stop, count, i);
  };
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  return order;
}

// Removes tokens while preserving order. Sequences of at most
// max_keep_tokens pass unchanged; longer ones keep exactly the
// max_keep_tokens most important tokens in their original order.
inline PerturbedRecord amputate(const std::vector<std::string>& tokens,
                                const PerturbationConfig& cfg,
                                const std::string& source_id = {}) {
  cfg.validate();
  if (tokens.empty()) throw ValidationError("amputate: empty token sequence");
  PerturbedRecord out;
  out.source_id = source_id;
  out.attack = AttackKind::Amputated;
  if (tokens.size() <= cfg.max_keep_tokens) {
    out.kept_indices.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out.kept_indices[i] = i;
  } else {
    auto order = importance_order(tokens, cfg);
    order.resize(cfg.max_keep_tokens);
    std::sort(order.begin(), order.end());
    out.kept_indices = std::move(order);
  }
  std::vector<std::string> kept;
  kept.reserve(out.kept_indices.size());
  for (std::size_t i : out.kept_indices) kept.push_back(tokens[i]);
  out.description = join_tokens(detail::maybe_lowercase(kept, cfg.lowercase_output));
  return out;
}

// Replaces a seeded subset of lexicon-eligible tokens with their shorter
// forms; token count and order are unchanged and at most
// ceil(max_abbrev_fraction * n) positions are touched.
inline PerturbedRecord abbreviate(const std::vector<std::string>& tokens,
                                  const AbbreviationLexicon& lexicon,
                                  const PerturbationConfig& cfg,
                                  const std::string& source_id = {}) {
  cfg.validate();
  if (tokens.empty()) throw ValidationError("abbreviate: empty token sequence");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (lexicon.lookup(tokens[i])) eligible.push_back(i);
  }
  const auto budget = static_cast<std::size_t>(
      std::ceil(cfg.max_abbrev_fraction * static_cast<double>(tokens.size())));
  const std::size_t take = std::min(budget, eligible.size());

  std::vector<std::size_t> chosen;
  if (take == eligible.size()) {
    chosen = eligible;
  } else {
    std::mt19937_64 rng(derive_seed(cfg.seed, "abbreviation"));
    for (std::size_t pick : sample_indices(eligible.size(), take, rng)) {
      chosen.push_back(eligible[pick]);
    }
    std::sort(chosen.begin(), chosen.end());
  }

  PerturbedRecord out;
  out.source_id = source_id;
  out.attack = AttackKind::Abbreviated;
  out.kept_indices.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) out.kept_indices[i] = i;
  out.abbreviated_indices = chosen;

  std::vector<std::string> result = detail::maybe_lowercase(tokens, cfg.lowercase_output);
  for (std::size_t i : chosen) result[i] = *lexicon.lookup(tokens[i]);
  out.description = join_tokens(result);
  return out;
}

// Amputation followed by abbreviation of the survivors. kept_indices refer
// to the original sequence; abbreviated_indices to the post-amputation one.
inline PerturbedRecord combine(const std::vector<std::string>& tokens,
                               const AbbreviationLexicon& lexicon,
                               const PerturbationConfig& cfg,
                               const std::string& source_id = {}) {
  PerturbedRecord amputated = amputate(tokens, cfg, source_id);
  PerturbedRecord out = abbreviate(tokenize(amputated.description), lexicon, cfg, source_id);
  out.attack = AttackKind::Combined;
  out.kept_indices = std::move(amputated.kept_indices);
  return out;
}

// Identity attack: lowercased text, full kept trace, empty abbreviation trace.
inline PerturbedRecord clean_record(const std::vector<std::string>& tokens,
                                    const PerturbationConfig& cfg,
                                    const std::string& source_id = {}) {
  if (tokens.empty()) throw ValidationError("clean: empty token sequence");
  PerturbedRecord out;
  out.source_id = source_id;
  out.attack = AttackKind::Clean;
  out.kept_indices.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) out.kept_indices[i] = i;
  out.description = join_tokens(detail::maybe_lowercase(tokens, cfg.lowercase_output));
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation prompts
// ---------------------------------------------------------------------------

enum class PerturbPromptKind { Abbreviation, Amputation };

namespace detail {

inline constexpr const char* kAbbreviationPromptTemplate =
    "You got a new job as a product classifier for products belonging to the Icecat catalog.\n"
    "You are asked to modify a description of a product that belongs to the \"{industry_input}\" "
    "category (according to the hierarchy in Icecat) and modify words with their abbreviations "
    "(as could happen in shipment details).\n"
    "It is vital to not modify the description in a way that could change the classification of "
    "the product.\n"
    "Please do not abbreviate more than 20% of the words or I would not understand the "
    "description.\n"
    "The order of the words must not change.\n"
    "Original description: {description_input}\n"
    "New description:";

inline constexpr const char* kAmputationPromptTemplate =
    "You got a new job as a product classifier for products belonging to the Icecat catalog.\n"
    "You are asked to truncate a description of a product that belongs to the \"{industry_input}\" "
    "category (according to the hierarchy in Icecat) and to make it much shorter, like it would "
    "appear in a shipment detail description.\n"
    "Omit all the information that is not strictly necessary to identify the product, i.e. "
    "technical characteristics.\n"
    "The order of the words must not change.\n"
    "Work following the order below:\n"
    "1. if the description is shorter than 5 words, do not change it\n"
    "2. if the description is longer than 5 words, select the 5 most important words\n"
    "3. put the selected words in the relative order in which they appeared in the original "
    "description\n"
    "Original description: {description_input}\n"
    "New description:";

// Single-pass substitution: placeholders in the template are replaced once;
// inserted text is never rescanned.
inline std::string substitute(std::string_view tmpl,
                              const std::vector<std::pair<std::string_view, std::string_view>>&
                                  replacements) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, value] : replacements) {
        if (tmpl.compare(i, key.size(), key) == 0) {
          out += value;
          i += key.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) {
      out.push_back(tmpl[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace detail

inline std::string render_perturbation_prompt(PerturbPromptKind kind, const std::string& industry,
                                              const std::string& description) {
  if (trim(description).empty()) {
    throw ValidationError("perturbation prompt: empty description");
  }
  const char* tmpl = kind == PerturbPromptKind::Abbreviation
                         ? detail::kAbbreviationPromptTemplate
                         : detail::kAmputationPromptTemplate;
  return detail::substitute(
      tmpl, {{"{industry_input}", industry}, {"{description_input}", description}});
}

// ---------------------------------------------------------------------------
// LLM perturbation and alignment validation
// ---------------------------------------------------------------------------

// Chat-completion client surface used by llm_perturb; the HTTP
// implementation lives in net.hpp, tests plug in fakes.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

inline bool is_abbreviation_form(const std::string& out_lower, const std::string& in_lower) {
  if (out_lower.size() >= in_lower.size()) return false;
  if (out_lower.size() >= 2 && out_lower.back() == '.' &&
      in_lower.compare(0, out_lower.size() - 1, out_lower, 0, out_lower.size() - 1) == 0) {
    return true;
  }
  std::string stripped;
  stripped.reserve(in_lower.size());
  for (std::size_t i = 0; i < in_lower.size(); ++i) {
    char c = in_lower[i];
    bool interior = i > 0 && i + 1 < in_lower.size();
    if (interior && (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u')) continue;
    stripped.push_back(c);
  }
  return out_lower == stripped || out_lower == stripped + ".";
}

// Aligns an LLM perturbation against the input and reconstructs the traces.
// Hard constraint violations (reordering, new tokens under amputation, more
// than the 20% abbreviation budget) set `degraded` instead of rejecting.
inline PerturbedRecord validate_llm_perturbation(const std::vector<std::string>& input,
                                                 const std::string& output_text,
                                                 PerturbPromptKind kind,
                                                 const std::string& source_id = {}) {
  PerturbedRecord out;
  out.source_id = source_id;
  out.description = trim(output_text);
  const std::vector<std::string> output = tokenize(out.description);

  std::vector<std::string> in_lower, out_lower;
  in_lower.reserve(input.size());
  out_lower.reserve(output.size());
  for (const auto& t : input) in_lower.push_back(to_lower(t));
  for (const auto& t : output) out_lower.push_back(to_lower(t));

  if (kind == PerturbPromptKind::Abbreviation) {
    out.attack = AttackKind::Abbreviated;
    if (output.size() != input.size()) {
      out.degraded = true;
      out.note = "token count changed (" + std::to_string(input.size()) + " -> " +
                 std::to_string(output.size()) + ")";
      return out;
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
      out.kept_indices.push_back(i);
      if (out_lower[i] == in_lower[i]) continue;
      if (is_abbreviation_form(out_lower[i], in_lower[i])) {
        out.abbreviated_indices.push_back(i);
      } else {
        out.degraded = true;
        out.note = "token " + std::to_string(i) + " \"" + output[i] +
                   "\" is neither the original nor an abbreviation of \"" + input[i] + "\"";
      }
    }
    const auto budget = static_cast<std::size_t>(
        std::ceil(0.20 * static_cast<double>(input.size())));
    if (!out.degraded && out.abbreviated_indices.size() > budget) {
      out.degraded = true;
      out.note = "abbreviated " + std::to_string(out.abbreviated_indices.size()) +
                 " tokens, budget " + std::to_string(budget);
    }
    return out;
  }

  // Amputation: the output must be an order-preserving subsequence of the
  // input. Longest-common-subsequence alignment over folded tokens; any
  // unmatched output token is a new or reordered token.
  out.attack = AttackKind::Amputated;
  const std::size_t n = input.size(), m = output.size();
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      lcs[i][j] = in_lower[i] == out_lower[j] ? lcs[i + 1][j + 1] + 1
                                              : std::max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  std::size_t i = 0, j = 0, matched = 0;
  while (i < n && j < m) {
    if (in_lower[i] == out_lower[j]) {
      out.kept_indices.push_back(i);
      ++matched;
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }
  if (matched != m) {
    out.degraded = true;
    out.note = std::to_string(m - matched) + " output token(s) not present in the input order";
  }
  return out;
}

// Renders the attack prompt for a record (industry = second-level category),
// asks the client, and validates the completion.
inline PerturbedRecord llm_perturb(const ProductRecord& record, PerturbPromptKind kind,
                                   ChatClient& client) {
  const std::string industry = record.path.size() > 1 ? record.path[1] : record.path.front();
  const std::string prompt = render_perturbation_prompt(kind, industry, record.description);
  const std::string completion = client.complete(prompt);
  return validate_llm_perturbation(tokenize(record.description), completion, kind, record.id);
}

// ---------------------------------------------------------------------------
// Attack drivers and the perturbed-dataset wire format
// ---------------------------------------------------------------------------

inline PerturbedRecord perturb_record(const ProductRecord& record, AttackKind attack,
                                      const AbbreviationLexicon& lexicon,
                                      const PerturbationConfig& base_cfg) {
  PerturbationConfig cfg = base_cfg;
  // Per-record substream so one seed drives the whole split reproducibly.
  cfg.seed = derive_seed(base_cfg.seed, record.id);
  const auto tokens = tokenize(record.description);
  switch (attack) {
    case AttackKind::Clean: return clean_record(tokens, cfg, record.id);
    case AttackKind::Abbreviated: return abbreviate(tokens, lexicon, cfg, record.id);
    case AttackKind::Amputated: return amputate(tokens, cfg, record.id);
    case AttackKind::Combined: return combine(tokens, lexicon, cfg, record.id);
  }
  throw ConfigError("unreachable attack kind");
}

inline std::vector<PerturbedRecord> perturb_split(const DatasetSplit& split, AttackKind attack,
                                                  const AbbreviationLexicon& lexicon,
                                                  const PerturbationConfig& cfg) {
  std::vector<PerturbedRecord> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) out.push_back(perturb_record(r, attack, lexicon, cfg));
  return out;
}

namespace detail {

inline nlohmann::json perturbed_to_json(const PerturbedRecord& p) {
  nlohmann::json j{{"id", p.source_id},
                   {"attack", to_string(p.attack)},
                   {"description", p.description},
                   {"kept_indices", p.kept_indices},
                   {"abbreviated_indices", p.abbreviated_indices}};
  if (p.degraded) {
    j["degraded"] = true;
    j["note"] = p.note;
  }
  return j;
}

inline PerturbedRecord perturbed_from_json(const nlohmann::json& j) {
  PerturbedRecord p;
  p.source_id = j.at("id").get<std::string>();
  p.attack = attack_from_string(j.at("attack").get<std::string>());
  p.description = j.at("description").get<std::string>();
  p.kept_indices = j.at("kept_indices").get<std::vector<std::size_t>>();
  p.abbreviated_indices = j.at("abbreviated_indices").get<std::vector<std::size_t>>();
  p.degraded = j.value("degraded", false);
  p.note = j.value("note", std::string());
  return p;
}

}  // namespace detail

inline void save_perturbed(const std::vector<PerturbedRecord>& records,
                           const std::filesystem::path& path,
                           const nlohmann::json& meta = nlohmann::json()) {
  std::string out;
  if (!meta.is_null()) out += nlohmann::json{{"_meta", meta}}.dump() + "\n";
  for (const auto& p : records) out += detail::perturbed_to_json(p).dump() + "\n";
  write_file(path, out);
}

inline std::vector<PerturbedRecord> load_perturbed(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open perturbed dataset: " + path.string());
  std::vector<PerturbedRecord> out;
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
    out.push_back(detail::perturbed_from_json(j));
  }
  return out;
}

}  // namespace robusteval

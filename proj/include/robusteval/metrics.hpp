// Scoring: macro/weighted precision, recall, F1, the relative robustness
// drop delta_r, KL divergence over token-length histograms, and the
// repeated-run confidence interval.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "robusteval/common.hpp"
#include "robusteval/corpus.hpp"

namespace robusteval {

struct ClassStats {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_denominator = false;  // precision or recall had an empty denominator
};

struct MetricsReport {
  double ma_p = 0.0, ma_r = 0.0, ma_f1 = 0.0;
  double we_p = 0.0, we_r = 0.0, we_f1 = 0.0;
  std::map<std::string, ClassStats> per_class;
  std::size_t n = 0;

  nlohmann::json to_json() const {
    nlohmann::json per;
    for (const auto& [name, s] : per_class) {
      per[name] = {{"tp", s.tp},     {"fp", s.fp},
                   {"fn", s.fn},     {"support", s.support},
                   {"precision", s.precision}, {"recall", s.recall},
                   {"f1", s.f1}};
    }
    return nlohmann::json{{"ma_P", ma_p}, {"ma_R", ma_r}, {"ma_F1", ma_f1},
                          {"we_P", we_p}, {"we_R", we_r}, {"we_F1", we_f1},
                          {"n", n},       {"per_class", per}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.ma_p = j.at("ma_P").get<double>();
    r.ma_r = j.at("ma_R").get<double>();
    r.ma_f1 = j.at("ma_F1").get<double>();
    r.we_p = j.at("we_P").get<double>();
    r.we_r = j.at("we_R").get<double>();
    r.we_f1 = j.at("we_F1").get<double>();
    r.n = j.value("n", std::size_t{0});
    if (j.contains("per_class")) {
      for (const auto& [name, s] : j.at("per_class").items()) {
        ClassStats cs;
        cs.tp = s.value("tp", std::size_t{0});
        cs.fp = s.value("fp", std::size_t{0});
        cs.fn = s.value("fn", std::size_t{0});
        cs.support = s.value("support", std::size_t{0});
        cs.precision = s.value("precision", 0.0);
        cs.recall = s.value("recall", 0.0);
        cs.f1 = s.value("f1", 0.0);
        r.per_class[name] = cs;
      }
    }
    return r;
  }
};

struct MetricsOptions {
  // Macro averages run over classes present in gold; flip to average over
  // the full class set instead.
  bool macro_over_present_only = true;
};

// Per-class precision/recall/F1 plus macro and support-weighted averages.
// Predictions outside the class set (including INVALID) count as wrong for
// every class: a false negative for the gold class and a true positive for
// nothing. Weighted recall is computed as sum(TP)/n, which is accuracy.
inline MetricsReport compute_prf(const std::vector<std::string>& gold,
                                 const std::vector<std::string>& pred,
                                 const std::vector<std::string>& classes,
                                 const MetricsOptions& options = {}) {
  if (gold.size() != pred.size()) {
    throw ValidationError("compute_prf: gold and prediction lengths differ (" +
                          std::to_string(gold.size()) + " vs " + std::to_string(pred.size()) +
                          ")");
  }
  if (gold.empty()) throw ValidationError("compute_prf: empty inputs");

  MetricsReport report;
  report.n = gold.size();
  for (const auto& c : classes) report.per_class[c];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto g = report.per_class.find(gold[i]);
    if (g == report.per_class.end()) {
      throw ValidationError("compute_prf: gold label \"" + gold[i] + "\" not in class set");
    }
    ++g->second.support;
    if (pred[i] == gold[i]) {
      ++g->second.tp;
    } else {
      ++g->second.fn;
      auto p = report.per_class.find(pred[i]);
      if (p != report.per_class.end()) ++p->second.fp;
    }
  }

  std::size_t total_tp = 0;
  double macro_p = 0.0, macro_r = 0.0, macro_f1 = 0.0;
  double weighted_p = 0.0, weighted_f1 = 0.0;
  std::size_t macro_classes = 0;
  for (auto& [name, s] : report.per_class) {
    const std::size_t p_den = s.tp + s.fp;
    const std::size_t r_den = s.tp + s.fn;  // == support
    s.zero_denominator = p_den == 0 || r_den == 0;
    s.precision = p_den == 0 ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(p_den);
    s.recall = r_den == 0 ? 0.0 : static_cast<double>(s.tp) / static_cast<double>(r_den);
    s.f1 = (s.precision + s.recall) == 0.0
               ? 0.0
               : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    total_tp += s.tp;
    if (!options.macro_over_present_only || s.support > 0) {
      macro_p += s.precision;
      macro_r += s.recall;
      macro_f1 += s.f1;
      ++macro_classes;
    }
    weighted_p += static_cast<double>(s.support) * s.precision;
    weighted_f1 += static_cast<double>(s.support) * s.f1;
  }
  if (macro_classes == 0) throw ValidationError("compute_prf: no classes to average over");
  report.ma_p = macro_p / static_cast<double>(macro_classes);
  report.ma_r = macro_r / static_cast<double>(macro_classes);
  report.ma_f1 = macro_f1 / static_cast<double>(macro_classes);
  report.we_p = weighted_p / static_cast<double>(report.n);
  report.we_r = static_cast<double>(total_tp) / static_cast<double>(report.n);
  report.we_f1 = weighted_f1 / static_cast<double>(report.n);
  return report;
}

// ---------------------------------------------------------------------------
// Robustness delta
// ---------------------------------------------------------------------------

struct DeltaEntry {
  double clean = 0.0;
  double perturbed = 0.0;
  std::optional<double> delta;  // |clean - perturbed| / clean; empty when clean == 0
};

struct RobustnessReport {
  MetricsReport clean;
  MetricsReport perturbed;
  std::map<std::string, DeltaEntry> delta;  // keyed ma_P, ma_R, ma_F1, we_P, we_R, we_F1

  nlohmann::json to_json() const {
    nlohmann::json d;
    for (const auto& [metric, e] : delta) {
      d[metric] = {{"clean", e.clean}, {"perturbed", e.perturbed}};
      if (e.delta) {
        d[metric]["delta_r"] = *e.delta;
      } else {
        d[metric]["undefined"] = true;
      }
    }
    return nlohmann::json{
        {"clean", clean.to_json()}, {"perturbed", perturbed.to_json()}, {"delta_r", d}};
  }
};

inline RobustnessReport compute_delta_r(const MetricsReport& clean,
                                        const MetricsReport& perturbed) {
  RobustnessReport r;
  r.clean = clean;
  r.perturbed = perturbed;
  const std::pair<const char*, std::pair<double, double>> metrics[] = {
      {"ma_P", {clean.ma_p, perturbed.ma_p}},   {"ma_R", {clean.ma_r, perturbed.ma_r}},
      {"ma_F1", {clean.ma_f1, perturbed.ma_f1}}, {"we_P", {clean.we_p, perturbed.we_p}},
      {"we_R", {clean.we_r, perturbed.we_r}},   {"we_F1", {clean.we_f1, perturbed.we_f1}}};
  for (const auto& [name, values] : metrics) {
    DeltaEntry e;
    e.clean = values.first;
    e.perturbed = values.second;
    if (values.first > 0.0) e.delta = std::abs(values.first - values.second) / values.first;
    r.delta[name] = e;
  }
  return r;
}

// Percentage with one decimal, as printed in human-readable reports.
inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
  return buf;
}

// ---------------------------------------------------------------------------
// Token-length distributions and KL divergence
// ---------------------------------------------------------------------------

// Normalized histogram of description token counts, binned by exact integer
// length.
struct DistributionStats {
  std::map<int, double> mass;
  std::size_t total = 0;
  std::optional<double> kl_vs_clean;

  static DistributionStats from_lengths(const std::vector<int>& lengths) {
    if (lengths.empty()) throw ValidationError("distribution: empty histogram");
    DistributionStats d;
    std::map<int, std::size_t> counts;
    for (int len : lengths) ++counts[len];
    d.total = lengths.size();
    for (const auto& [len, count] : counts) {
      d.mass[len] = static_cast<double>(count) / static_cast<double>(d.total);
    }
    return d;
  }

  static DistributionStats from_descriptions(const std::vector<std::string>& descriptions) {
    std::vector<int> lengths;
    lengths.reserve(descriptions.size());
    for (const auto& text : descriptions) {
      lengths.push_back(static_cast<int>(tokenize(text).size()));
    }
    return from_lengths(lengths);
  }

  static DistributionStats from_split(const DatasetSplit& split) {
    std::vector<int> lengths;
    lengths.reserve(split.records.size());
    for (const auto& r : split.records) {
      lengths.push_back(static_cast<int>(tokenize(r.description).size()));
    }
    return from_lengths(lengths);
  }
};

// KL(p || q) in nats over the union bin domain. Empty q bins receive 1e-9
// mass and q is renormalized; identical inputs return exactly 0.
inline double compute_kl(const DistributionStats& p, const DistributionStats& q) {
  if (p.mass.empty() || q.mass.empty()) throw ValidationError("compute_kl: empty histogram");
  if (p.mass == q.mass) return 0.0;
  constexpr double kEpsilon = 1e-9;
  std::map<int, double> q_smoothed = q.mass;
  double q_total = 1.0;
  for (const auto& [bin, mass] : p.mass) {
    (void)mass;
    if (q_smoothed.find(bin) == q_smoothed.end()) {
      q_smoothed[bin] = kEpsilon;
      q_total += kEpsilon;
    }
  }
  double kl = 0.0;
  for (const auto& [bin, p_mass] : p.mass) {
    if (p_mass <= 0.0) continue;
    const double q_mass = q_smoothed.at(bin) / q_total;
    kl += p_mass * std::log(p_mass / q_mass);
  }
  return kl;
}

// ---------------------------------------------------------------------------
// Confidence interval over repeated runs: mean and 1.96 * std / sqrt(n)
// with the sample standard deviation.
// ---------------------------------------------------------------------------

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

inline ConfidenceInterval confidence_interval(const std::vector<double>& values) {
  if (values.size() < 2) {
    throw ValidationError("confidence_interval: need at least 2 values");
  }
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * std_dev / std::sqrt(n)};
}

}  // namespace robusteval

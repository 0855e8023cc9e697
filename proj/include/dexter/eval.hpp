#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexter/dataset.hpp"

namespace dexter {

struct PRF {
  long long tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : 100.0 * tp / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : 100.0 * tp / (tp + fn); }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct EvalReport {
  PRF overall;
  std::map<std::string, PRF> per_label;
  std::map<std::string, PRF> per_domain;
  double exact_match_pct = 0.0;
  std::optional<double> p_value;
};

namespace detail {

inline void count_spans(const std::vector<Span>& gold, const std::vector<Span>& pred,
                        PRF& into, std::map<std::string, PRF>* per_label) {
  for (const Span& p : pred) {
    bool hit = false;
    for (const Span& g : gold) hit = hit || g == p;
    into.tp += hit;
    into.fp += !hit;
    if (per_label) {
      (*per_label)[p.label].tp += hit;
      (*per_label)[p.label].fp += !hit;
    }
  }
  for (const Span& g : gold) {
    bool hit = false;
    for (const Span& p : pred) hit = hit || g == p;
    into.fn += !hit;
    if (per_label) (*per_label)[g.label].fn += !hit;
  }
}

}  // namespace detail

// Utterance-level correctness: all token labels match, and the intent
// matches when one is present on either side.
inline std::vector<uint8_t> correctness_vector(
    const Dataset& gold, const std::vector<std::vector<std::string>>& pred_labels,
    const std::vector<std::string>& pred_intents = {}) {
  if (pred_labels.size() != gold.size())
    throw std::runtime_error("correctness_vector: corpus size mismatch");
  std::vector<uint8_t> out(gold.size());
  for (size_t i = 0; i < gold.size(); ++i) {
    bool ok = gold[i].labels == pred_labels[i];
    if (!pred_intents.empty()) ok = ok && gold[i].intent == pred_intents[i];
    out[i] = ok ? 1 : 0;
  }
  return out;
}

// Entity-level CoNLL-style scoring: entities are maximal BIO spans and a
// predicted entity counts only on an exact (boundary, label) match.
// Micro-averaged overall, per label and per domain.
inline EvalReport ner_f1(const Dataset& gold,
                         const std::vector<std::vector<std::string>>& pred_labels) {
  if (pred_labels.size() != gold.size())
    throw std::runtime_error("ner_f1: corpus size mismatch: gold has " +
                             std::to_string(gold.size()) + " utterances, pred has " +
                             std::to_string(pred_labels.size()));
  EvalReport report;
  long long exact = 0;
  for (size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].tokens.size() != pred_labels[i].size())
      throw std::runtime_error(
          "ner_f1: token count mismatch at utterance " + std::to_string(i) + " (gold " +
          std::to_string(gold[i].tokens.size()) + ", pred " +
          std::to_string(pred_labels[i].size()) + ")");
    std::vector<Span> gs = bio_spans(gold[i].labels);
    std::vector<Span> ps = bio_spans(bio_repair(pred_labels[i]));
    detail::count_spans(gs, ps, report.overall, &report.per_label);
    PRF& dom = report.per_domain[gold[i].domain.empty() ? "all" : gold[i].domain];
    detail::count_spans(gs, ps, dom, nullptr);
    exact += gold[i].labels == pred_labels[i];
  }
  report.exact_match_pct = gold.empty() ? 0.0 : 100.0 * exact / gold.size();
  return report;
}

// Utterance counts as correct iff the intent and every token label match.
inline double exact_match(const Dataset& gold,
                          const std::vector<std::vector<std::string>>& pred_labels,
                          const std::vector<std::string>& pred_intents) {
  if (pred_labels.size() != gold.size() || pred_intents.size() != gold.size())
    throw std::runtime_error("exact_match: corpus size mismatch");
  long long ok = 0;
  for (size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].tokens.size() != pred_labels[i].size())
      throw std::runtime_error("exact_match: token count mismatch at utterance " +
                               std::to_string(i));
    ok += gold[i].labels == pred_labels[i] && gold[i].intent == pred_intents[i];
  }
  return gold.empty() ? 0.0 : 100.0 * ok / gold.size();
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// One-tailed p-value that run_b's per-utterance success probability exceeds
// run_a's. Two-proportion z-test with pooled variance for n >= 50; for
// smaller n an exact mid-p computation over the pooled binomial difference.
// Identical success counts return exactly 0.5.
inline double binomial_significance(const std::vector<uint8_t>& run_a,
                                    const std::vector<uint8_t>& run_b) {
  if (run_a.empty() || run_b.empty())
    throw std::runtime_error("binomial_significance: empty correctness vector");
  if (run_a.size() != run_b.size())
    throw std::runtime_error("binomial_significance: length mismatch");
  int64_t n = static_cast<int64_t>(run_a.size());
  int64_t sa = 0, sb = 0;
  for (uint8_t v : run_a) sa += v != 0;
  for (uint8_t v : run_b) sb += v != 0;
  if (sa == sb) return 0.5;

  double pool = static_cast<double>(sa + sb) / (2.0 * static_cast<double>(n));
  if (n >= 50) {
    double var = pool * (1.0 - pool) * (2.0 / static_cast<double>(n));
    if (var <= 0.0) return 0.5;  // both vectors constant and equal
    double z = (static_cast<double>(sb) - static_cast<double>(sa)) /
               (static_cast<double>(n) * std::sqrt(var));
    return 1.0 - normal_cdf(z);
  }

  // Exact: S_a, S_b iid Binomial(n, pool); p = P[D > d] + P[D = d]/2 with
  // D = S_b - S_a and d the observed difference.
  std::vector<double> pmf(n + 1);
  {
    // log-space binomial pmf to stay stable for all pool values
    std::vector<double> logfact(n + 1, 0.0);
    for (int64_t i = 1; i <= n; ++i) logfact[i] = logfact[i - 1] + std::log((double)i);
    for (int64_t k = 0; k <= n; ++k) {
      double lp = logfact[n] - logfact[k] - logfact[n - k] +
                  k * std::log(pool) + (n - k) * std::log1p(-pool);
      pmf[k] = std::exp(lp);
    }
  }
  int64_t d_obs = sb - sa;
  double p_gt = 0.0, p_eq = 0.0;
  for (int64_t i = 0; i <= n; ++i) {
    for (int64_t j = 0; j <= n; ++j) {
      double pr = pmf[i] * pmf[j];
      int64_t d = j - i;
      if (d > d_obs)
        p_gt += pr;
      else if (d == d_obs)
        p_eq += pr;
    }
  }
  return p_gt + 0.5 * p_eq;
}

inline std::string report_to_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "overall    P=" << r.overall.precision() << " R=" << r.overall.recall()
     << " F1=" << r.overall.f1() << " (tp=" << r.overall.tp << " fp=" << r.overall.fp
     << " fn=" << r.overall.fn << ")\n";
  os << "exact-match " << r.exact_match_pct << "%\n";
  for (const auto& [dom, prf] : r.per_domain)
    os << "domain " << dom << "  P=" << prf.precision() << " R=" << prf.recall()
       << " F1=" << prf.f1() << "\n";
  for (const auto& [lab, prf] : r.per_label)
    os << "label " << lab << "  P=" << prf.precision() << " R=" << prf.recall()
       << " F1=" << prf.f1() << " (tp=" << prf.tp << " fp=" << prf.fp
       << " fn=" << prf.fn << ")\n";
  if (r.p_value) os << "p-value vs reference: " << std::setprecision(6) << *r.p_value << "\n";
  return os.str();
}

}  // namespace dexter

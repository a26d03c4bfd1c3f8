#include "qag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "qag/vocab.hpp"

namespace qag {

namespace {

constexpr double kRougeBeta = 1.2;

void check_pairs(const std::vector<EvalPair>& pairs, const char* op) {
  if (pairs.empty()) throw ValidationError(std::string(op) + ": no pairs");
  for (const auto& p : pairs)
    if (p.references.empty()) throw ValidationError(std::string(op) + ": pair without references");
}

// n-grams keyed as separator-joined strings; token text never contains 0x1f.
std::unordered_map<std::string, long> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::unordered_map<std::string, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key += '\x1f';
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct Alignment {
  std::vector<std::pair<int, int>> matches;  // (candidate index, reference index)
  int chunks = 0;
};

// Greedy left-to-right exact alignment. Each candidate token takes the
// reference occurrence that continues the current chunk when possible,
// otherwise the earliest unused one.
Alignment align_exact(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  Alignment a;
  std::vector<bool> used(ref.size(), false);
  int prev_cand = -2, prev_ref = -2;
  for (int i = 0; i < static_cast<int>(cand.size()); ++i) {
    int chosen = -1;
    if (prev_cand == i - 1 && prev_ref + 1 < static_cast<int>(ref.size()) &&
        !used[static_cast<std::size_t>(prev_ref + 1)] &&
        ref[static_cast<std::size_t>(prev_ref + 1)] == cand[static_cast<std::size_t>(i)]) {
      chosen = prev_ref + 1;
    } else {
      for (int j = 0; j < static_cast<int>(ref.size()); ++j)
        if (!used[static_cast<std::size_t>(j)] && ref[static_cast<std::size_t>(j)] == cand[static_cast<std::size_t>(i)]) {
          chosen = j;
          break;
        }
    }
    if (chosen < 0) continue;
    used[static_cast<std::size_t>(chosen)] = true;
    a.matches.emplace_back(i, chosen);
    prev_cand = i;
    prev_ref = chosen;
  }
  int pc = -2, pr = -2;
  for (const auto& [ci, ri] : a.matches) {
    if (!(ci == pc + 1 && ri == pr + 1)) ++a.chunks;
    pc = ci;
    pr = ri;
  }
  return a;
}

}  // namespace

double bleu4_corpus(const std::vector<EvalPair>& pairs, bool smooth) {
  check_pairs(pairs, "bleu4_corpus");
  long num[5] = {0, 0, 0, 0, 0};
  long den[5] = {0, 0, 0, 0, 0};
  long cand_total = 0, ref_total = 0;
  for (const auto& pair : pairs) {
    const long clen = static_cast<long>(pair.candidate.size());
    cand_total += clen;
    // Effective reference length: closest to the candidate, ties -> shorter.
    long best_ref = static_cast<long>(pair.references[0].size());
    for (const auto& ref : pair.references) {
      const long rlen = static_cast<long>(ref.size());
      const long d_new = std::labs(rlen - clen), d_old = std::labs(best_ref - clen);
      if (d_new < d_old || (d_new == d_old && rlen < best_ref)) best_ref = rlen;
    }
    ref_total += best_ref;
    for (int n = 1; n <= 4; ++n) {
      auto cand_counts = ngram_counts(pair.candidate, n);
      std::unordered_map<std::string, long> best;
      for (const auto& ref : pair.references)
        for (const auto& [g, c] : ngram_counts(ref, n)) best[g] = std::max(best[g], c);
      for (const auto& [g, c] : cand_counts) {
        auto it = best.find(g);
        num[n] += std::min(c, it == best.end() ? 0L : it->second);
      }
      den[n] += std::max(0L, clen - n + 1);
    }
  }
  double log_p = 0.0;
  for (int n = 1; n <= 4; ++n) {
    long nn = num[n], dd = den[n];
    if (smooth && n >= 2) {
      nn += 1;
      dd += 1;
    }
    if (nn == 0 || dd == 0) return 0.0;
    log_p += std::log(static_cast<double>(nn) / static_cast<double>(dd)) / 4.0;
  }
  if (cand_total == 0) return 0.0;
  const double bp = cand_total > ref_total
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_total) / static_cast<double>(cand_total));
  return bp * std::exp(log_p);
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs, "rouge_l");
  const double b2 = kRougeBeta * kRougeBeta;
  double total = 0.0;
  for (const auto& pair : pairs) {
    double best = 0.0;
    for (const auto& ref : pair.references) {
      if (pair.candidate.empty() || ref.empty()) continue;
      const double l = static_cast<double>(lcs_length(pair.candidate, ref));
      const double r = l / static_cast<double>(ref.size());
      const double p = l / static_cast<double>(pair.candidate.size());
      if (r + b2 * p > 0) best = std::max(best, (1.0 + b2) * r * p / (r + b2 * p));
    }
    total += best;
  }
  return total / static_cast<double>(pairs.size());
}

double meteor_lite(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs, "meteor_lite");
  double total = 0.0;
  for (const auto& pair : pairs) {
    double best = 0.0;
    for (const auto& ref : pair.references) {
      auto a = align_exact(pair.candidate, ref);
      const double m = static_cast<double>(a.matches.size());
      if (m == 0) continue;
      const double p = m / static_cast<double>(pair.candidate.size());
      const double r = m / static_cast<double>(ref.size());
      const double f_mean = 10.0 * p * r / (r + 9.0 * p);
      const double frac = static_cast<double>(a.chunks) / m;
      const double penalty = 0.5 * frac * frac * frac;
      best = std::max(best, f_mean * (1.0 - penalty));
    }
    total += best;
  }
  return total / static_cast<double>(pairs.size());
}

MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
  MetricReport r;
  r.bleu4 = bleu4_corpus(pairs);
  r.rouge_l = rouge_l(pairs);
  r.meteor = meteor_lite(pairs);
  r.n = pairs.size();
  return r;
}

std::string report_kv_line(const std::string& prefix, const MetricReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s_bleu4=%.2f %s_rouge_l=%.2f %s_meteor=%.2f %s_n=%zu",
                prefix.c_str(), report.bleu4 * 100.0, prefix.c_str(), report.rouge_l * 100.0,
                prefix.c_str(), report.meteor * 100.0, prefix.c_str(), report.n);
  return buf;
}

EvalPair make_eval_pair(const std::string& candidate, const std::vector<std::string>& references) {
  EvalPair p;
  p.candidate = tokenize(candidate);
  for (const auto& r : references) p.references.push_back(tokenize(r));
  return p;
}

}  // namespace qag

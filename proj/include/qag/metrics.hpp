#pragma once

#include <string>
#include <vector>

#include "qag/error.hpp"

namespace qag {

// One scored pair: a candidate token list against one or more references.
struct EvalPair {
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;
};

// Scores in [0,1]; reports multiply by 100 for table formatting.
struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::size_t n = 0;
};

// Corpus BLEU: geometric mean of modified n-gram precisions (n=1..4, counts
// clipped against the best-matching reference) with brevity penalty.
// Unsmoothed by default: any zero precision zeroes the score. The smooth
// flag applies add-one smoothing to n >= 2 (debugging aid).
double bleu4_corpus(const std::vector<EvalPair>& pairs, bool smooth = false);

// Per-pair LCS F-measure with beta = 1.2, max over references, averaged.
double rouge_l(const std::vector<EvalPair>& pairs);

// Exact-match unigram METEOR variant (no stemming or synonymy):
// F_mean = 10PR / (R + 9P), fragmentation penalty 0.5 * (chunks/matches)^3.
double meteor_lite(const std::vector<EvalPair>& pairs);

MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs);

// Machine-readable key=value line, scores x100 at 2 decimals, e.g.
// "qg_bleu4=64.55 qg_rouge_l=63.56 qg_meteor=59.26 qg_n=10".
std::string report_kv_line(const std::string& prefix, const MetricReport& report);

// Tokenizes raw text with the shared vocabulary normalization.
EvalPair make_eval_pair(const std::string& candidate, const std::vector<std::string>& references);

}  // namespace qag

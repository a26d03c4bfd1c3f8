#pragma once

#include <map>
#include <string>
#include <vector>

#include "qag/error.hpp"

namespace qag {

// One (passage, question, answer) record; the unit of ingestion, training
// and evaluation.
struct QagExample {
  std::string id;
  std::string passage;
  std::string question;
  std::string answer;
  std::string split;  // train | dev | test
};

struct LoadReport {
  std::vector<QagExample> examples;
  std::vector<std::string> errors;    // per-record, tagged with line numbers
  std::vector<std::string> warnings;  // e.g. empty file
  std::size_t lines = 0;
};

// Streaming JSONL reader (one object per line, constant memory per record).
// Malformed or invalid records are reported, not fatal. Missing file throws
// IoError naming the path.
LoadReport load_dataset(const std::string& path);

void save_dataset(const std::string& path, const std::vector<QagExample>& examples);

// One generated triplet as written by the pipeline.
struct GeneratedRecord {
  std::string id;
  std::string passage_id;
  std::vector<std::string> keyphrases;
  std::string question;
  std::string answer;
  int iteration = 1;
};

void save_generated(const std::string& path, const std::vector<GeneratedRecord>& records);
std::vector<GeneratedRecord> load_generated(const std::string& path);

// Examples sharing one passage, keyed by the first example's id.
struct PassageGroup {
  std::string passage_id;
  std::string passage;
  std::vector<const QagExample*> examples;
};

std::vector<PassageGroup> group_by_passage(const std::vector<QagExample>& examples);

struct DatasetStats {
  std::map<std::string, double> leading_unigrams;  // first question token -> proportion
  std::map<std::string, double> leading_bigrams;   // first two tokens -> proportion
  std::map<int, double> ngram_match;               // n in {1,2,3} -> ratio
  std::map<std::string, std::size_t> split_counts;
  std::size_t n_examples = 0;
};

// Proportions of the lowercased leading unigram / bigram of each non-empty
// question. Each distribution sums to 1 over its support.
std::pair<std::map<std::string, double>, std::map<std::string, double>> question_type_distribution(
    const std::vector<QagExample>& examples);

// Fraction of answer n-grams (token-level, occurrence-weighted) that also
// occur contiguously in the corresponding passage. Answers shorter than n
// contribute nothing; an empty denominator yields 0.
double ngram_match_ratio(const std::vector<QagExample>& examples, int n);

// The sentence of p (split on . ! ?) maximizing
// |sentence tokens ∩ phrase tokens| / |phrase tokens| over token sets.
// Empty phrase list falls back to the first sentence; ties pick the earliest.
std::string most_similar_sentence(const std::string& passage, const std::vector<std::string>& phrases);

DatasetStats analyze_dataset(const std::vector<QagExample>& examples);
std::string format_stats_human(const DatasetStats& stats);
std::vector<std::string> format_stats_kv(const DatasetStats& stats);

// Synthetic corpora: extractive answers are verbatim passage spans;
// abstractive answers keep at least 30% of their unigrams out of the
// passage. Deterministic per seed.
enum class SyntheticProfile { extractive, abstractive };

SyntheticProfile parse_profile(const std::string& name);

std::vector<QagExample> make_synthetic_corpus(std::uint64_t seed, int size, SyntheticProfile profile);

void write_synthetic_corpus(const std::string& path, std::uint64_t seed, int size,
                            SyntheticProfile profile);

}  // namespace qag

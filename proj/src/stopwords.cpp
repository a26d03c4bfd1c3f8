#include "qag/stopwords.hpp"

namespace qag {

// 127 common English function words. Contraction fragments ("s", "t",
// "don") appear because the tokenizer splits on apostrophes.
const std::vector<std::string>& stopword_list() {
  static const std::vector<std::string> words = {
      "i",       "me",      "my",      "myself",  "we",       "our",        "ours",
      "ourselves", "you",   "your",    "yours",   "yourself", "yourselves", "he",
      "him",     "his",     "himself", "she",     "her",      "hers",       "herself",
      "it",      "its",     "itself",  "they",    "them",     "their",      "theirs",
      "themselves", "what", "which",   "who",     "whom",     "this",       "that",
      "these",   "those",   "am",      "is",      "are",      "was",        "were",
      "be",      "been",    "being",   "have",    "has",      "had",        "having",
      "do",      "does",    "did",     "doing",   "a",        "an",         "the",
      "and",     "but",     "if",      "or",      "because",  "as",         "until",
      "while",   "of",      "at",      "by",      "for",      "with",       "about",
      "against", "between", "into",    "through", "during",   "before",     "after",
      "above",   "below",   "to",      "from",    "up",       "down",       "in",
      "out",     "on",      "off",     "over",    "under",    "again",      "further",
      "then",    "once",    "here",    "there",   "when",     "where",      "why",
      "how",     "all",     "any",     "both",    "each",     "few",        "more",
      "most",    "other",   "some",    "such",    "no",       "nor",        "not",
      "only",    "own",     "same",    "so",      "than",     "too",        "very",
      "s",       "t",       "can",     "will",    "just",     "don",        "should",
      "now"};
  return words;
}

const std::unordered_set<std::string>& stopword_set() {
  static const std::unordered_set<std::string> set(stopword_list().begin(), stopword_list().end());
  return set;
}

bool is_stopword(const std::string& token) { return stopword_set().count(token) != 0; }

}  // namespace qag

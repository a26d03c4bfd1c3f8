#include "qag/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "qag/vocab.hpp"

namespace qag {

namespace {

using Json = nlohmann::ordered_json;

std::string get_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

bool valid_split(const std::string& s) { return s == "train" || s == "dev" || s == "test"; }

}  // namespace

LoadReport load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("dataset: cannot read " + path);
  LoadReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++report.lines;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      report.errors.push_back("line " + std::to_string(lineno) + ": malformed record");
      continue;
    }
    QagExample ex;
    ex.id = get_string(j, "id");
    ex.passage = get_string(j, "passage");
    ex.question = get_string(j, "question");
    ex.answer = get_string(j, "answer");
    ex.split = get_string(j, "split");
    if (ex.id.empty()) {
      report.errors.push_back("line " + std::to_string(lineno) + ": missing id");
      continue;
    }
    if (ex.passage.empty()) {
      report.errors.push_back("line " + std::to_string(lineno) + ": missing passage (" + ex.id + ")");
      continue;
    }
    if (!valid_split(ex.split)) {
      report.errors.push_back("line " + std::to_string(lineno) + ": bad split '" + ex.split + "' (" +
                              ex.id + ")");
      continue;
    }
    if (ex.split == "train" && (ex.question.empty() || ex.answer.empty())) {
      report.errors.push_back("line " + std::to_string(lineno) +
                              ": train record needs question and answer (" + ex.id + ")");
      continue;
    }
    report.examples.push_back(std::move(ex));
  }
  if (report.examples.empty() && report.errors.empty())
    report.warnings.push_back("dataset " + path + " is empty");
  return report;
}

void save_dataset(const std::string& path, const std::vector<QagExample>& examples) {
  std::ofstream out(path);
  if (!out) throw IoError("dataset: cannot write " + path);
  for (const auto& ex : examples) {
    Json j;
    j["id"] = ex.id;
    j["passage"] = ex.passage;
    j["question"] = ex.question;
    j["answer"] = ex.answer;
    j["split"] = ex.split;
    out << j.dump() << '\n';
  }
}

void save_generated(const std::string& path, const std::vector<GeneratedRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("generated: cannot write " + path);
  for (const auto& r : records) {
    Json j;
    j["id"] = r.id;
    j["passage_id"] = r.passage_id;
    j["keyphrases"] = r.keyphrases;
    j["question"] = r.question;
    j["answer"] = r.answer;
    j["iteration"] = r.iteration;
    out << j.dump() << '\n';
  }
}

std::vector<GeneratedRecord> load_generated(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("generated: cannot read " + path);
  std::vector<GeneratedRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ValidationError("generated: line " + std::to_string(lineno) + " is malformed in " + path);
    GeneratedRecord r;
    r.id = get_string(j, "id");
    r.passage_id = get_string(j, "passage_id");
    r.question = get_string(j, "question");
    r.answer = get_string(j, "answer");
    if (auto it = j.find("keyphrases"); it != j.end() && it->is_array())
      for (const auto& k : *it)
        if (k.is_string()) r.keyphrases.push_back(k.get<std::string>());
    if (auto it = j.find("iteration"); it != j.end() && it->is_number_integer())
      r.iteration = it->get<int>();
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PassageGroup> group_by_passage(const std::vector<QagExample>& examples) {
  std::vector<PassageGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& ex : examples) {
    auto it = index.find(ex.passage);
    if (it == index.end()) {
      index.emplace(ex.passage, groups.size());
      groups.push_back(PassageGroup{ex.id, ex.passage, {&ex}});
    } else {
      groups[it->second].examples.push_back(&ex);
    }
  }
  return groups;
}

std::pair<std::map<std::string, double>, std::map<std::string, double>> question_type_distribution(
    const std::vector<QagExample>& examples) {
  std::map<std::string, long> uni, bi;
  long n_uni = 0, n_bi = 0;
  for (const auto& ex : examples) {
    auto toks = tokenize(ex.question);
    if (toks.empty()) continue;
    ++uni[toks[0]];
    ++n_uni;
    if (toks.size() >= 2) {
      ++bi[toks[0] + " " + toks[1]];
      ++n_bi;
    }
  }
  std::map<std::string, double> uni_p, bi_p;
  for (const auto& [k, c] : uni) uni_p[k] = static_cast<double>(c) / static_cast<double>(n_uni);
  for (const auto& [k, c] : bi) bi_p[k] = static_cast<double>(c) / static_cast<double>(n_bi);
  return {uni_p, bi_p};
}

double ngram_match_ratio(const std::vector<QagExample>& examples, int n) {
  if (n < 1) throw ConfigError("ngram_match_ratio: n must be >= 1");
  long total = 0, matched = 0;
  for (const auto& ex : examples) {
    auto ans = tokenize(ex.answer);
    if (static_cast<int>(ans.size()) < n) continue;
    auto pas = tokenize(ex.passage);
    std::unordered_set<std::string> passage_ngrams;
    for (std::size_t i = 0; i + n <= pas.size(); ++i) {
      std::string key;
      for (int k = 0; k < n; ++k) {
        if (k) key += '\x1f';
        key += pas[i + static_cast<std::size_t>(k)];
      }
      passage_ngrams.insert(std::move(key));
    }
    for (std::size_t i = 0; i + n <= ans.size(); ++i) {
      std::string key;
      for (int k = 0; k < n; ++k) {
        if (k) key += '\x1f';
        key += ans[i + static_cast<std::size_t>(k)];
      }
      ++total;
      if (passage_ngrams.count(key)) ++matched;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

std::string most_similar_sentence(const std::string& passage, const std::vector<std::string>& phrases) {
  std::vector<std::string> sentences;
  std::string cur;
  for (char c : passage) {
    if (c == '.' || c == '!' || c == '?') {
      if (!cur.empty()) sentences.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) sentences.push_back(cur);
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\n\r");
    const auto e = s.find_last_not_of(" \t\n\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<std::string> trimmed;
  for (auto& s : sentences) {
    auto t = trim(s);
    if (!t.empty()) trimmed.push_back(t);
  }
  if (trimmed.empty()) throw ValidationError("most_similar_sentence: empty passage");

  std::unordered_set<std::string> phrase_tokens;
  for (const auto& p : phrases)
    for (const auto& t : tokenize(p)) phrase_tokens.insert(t);
  if (phrase_tokens.empty()) return trimmed.front();

  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    std::unordered_set<std::string> sent_tokens;
    for (const auto& t : tokenize(trimmed[i])) sent_tokens.insert(t);
    long overlap = 0;
    for (const auto& t : phrase_tokens) overlap += sent_tokens.count(t) ? 1 : 0;
    double score = static_cast<double>(overlap) / static_cast<double>(phrase_tokens.size());
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return trimmed[best];
}

DatasetStats analyze_dataset(const std::vector<QagExample>& examples) {
  DatasetStats stats;
  stats.n_examples = examples.size();
  stats.split_counts = {{"train", 0}, {"dev", 0}, {"test", 0}};
  for (const auto& ex : examples) ++stats.split_counts[ex.split];
  auto [uni, bi] = question_type_distribution(examples);
  stats.leading_unigrams = std::move(uni);
  stats.leading_bigrams = std::move(bi);
  for (int n = 1; n <= 3; ++n) stats.ngram_match[n] = ngram_match_ratio(examples, n);
  return stats;
}

namespace {

// Sorted by proportion (desc) then key for stable reports.
std::vector<std::pair<std::string, double>> by_proportion(const std::map<std::string, double>& dist) {
  std::vector<std::pair<std::string, double>> v(dist.begin(), dist.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return v;
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string format_stats_human(const DatasetStats& stats) {
  std::ostringstream os;
  os << "examples: " << stats.n_examples << " (train=" << stats.split_counts.at("train")
     << " dev=" << stats.split_counts.at("dev") << " test=" << stats.split_counts.at("test") << ")\n";
  os << "leading question unigrams:\n";
  for (const auto& [k, v] : by_proportion(stats.leading_unigrams))
    os << "  " << k << " " << fmt(v) << "\n";
  os << "leading question bigrams:\n";
  for (const auto& [k, v] : by_proportion(stats.leading_bigrams))
    os << "  " << k << " " << fmt(v) << "\n";
  os << "answer-passage n-gram match ratio (token-level):\n";
  for (const auto& [n, v] : stats.ngram_match) os << "  n=" << n << " " << fmt(v) << "\n";
  return os.str();
}

std::vector<std::string> format_stats_kv(const DatasetStats& stats) {
  std::vector<std::string> lines;
  lines.push_back("examples=" + std::to_string(stats.n_examples));
  lines.push_back("split_train=" + std::to_string(stats.split_counts.at("train")) +
                  " split_dev=" + std::to_string(stats.split_counts.at("dev")) +
                  " split_test=" + std::to_string(stats.split_counts.at("test")));
  for (const auto& [k, v] : by_proportion(stats.leading_unigrams))
    lines.push_back("unigram:" + k + "=" + fmt(v, "%.6f"));
  for (const auto& [k, v] : by_proportion(stats.leading_bigrams))
    lines.push_back("bigram:" + k + "=" + fmt(v, "%.6f"));
  for (const auto& [n, v] : stats.ngram_match)
    lines.push_back("ngram_match_" + std::to_string(n) + "=" + fmt(v, "%.6f"));
  return lines;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

SyntheticProfile parse_profile(const std::string& name) {
  if (name == "extractive") return SyntheticProfile::extractive;
  if (name == "abstractive") return SyntheticProfile::abstractive;
  throw ConfigError("unknown synthetic profile '" + name + "' (extractive|abstractive)");
}

namespace {

struct Slots {
  std::string adj, noun, place, person, verb, time, year;
};

const std::vector<std::string> kAdjs = {"red",    "old",    "quiet",  "bright",  "tall",
                                        "narrow", "golden", "wooden", "ancient", "busy"};
const std::vector<std::string> kNouns = {"tower",  "bridge", "garden",  "mill",   "harbor",
                                         "castle", "museum", "library", "market", "lighthouse"};
const std::vector<std::string> kPlaces = {"valley", "hillside", "riverbank", "meadow", "village",
                                          "coast",  "forest",   "plaza",     "canyon", "island"};
const std::vector<std::string> kPersons = {"mara",  "ivan", "chen", "amara", "diego",
                                           "freya", "kofi", "lena", "omar",  "sana"};
const std::vector<std::string> kVerbs = {"visit",   "sketch", "photograph", "admire",  "study",
                                         "restore", "guard",  "praise",     "measure", "explore"};
const std::vector<std::string> kTimes = {"morning", "spring", "summer", "evening",
                                         "weekend", "autumn", "winter", "noon"};
const std::vector<std::string> kYears = {"1820", "1851", "1883", "1901", "1912",
                                         "1935", "1948", "1960", "1977", "1989"};

std::string fill(const std::string& tpl, const Slots& s) {
  std::string out;
  for (std::size_t i = 0; i < tpl.size();) {
    if (tpl[i] == '{') {
      auto end = tpl.find('}', i);
      std::string key = tpl.substr(i + 1, end - i - 1);
      if (key == "adj") out += s.adj;
      else if (key == "noun") out += s.noun;
      else if (key == "place") out += s.place;
      else if (key == "person") out += s.person;
      else if (key == "verb") out += s.verb;
      else if (key == "time") out += s.time;
      else if (key == "year") out += s.year;
      i = end + 1;
    } else {
      out.push_back(tpl[i]);
      ++i;
    }
  }
  return out;
}

struct QaTemplate {
  const char* question;
  const char* answer;
};

// Extractive answers are contiguous spans of the passage template below.
const QaTemplate kExtractive[3] = {
    {"where does the {adj} {noun} stand ?", "near the {place}"},
    {"who built the {adj} {noun} ?", "{person} built it in {year}"},
    {"when do people {verb} the {noun} ?", "every {time}"},
};

// Abstractive answers keep most of their tokens out of the passage and
// strip to a single keyphrase fragment (no interior stop words).
const QaTemplate kAbstractive[3] = {
    {"who created the {adj} {noun} ?", "{person} crafted wonders long ago"},
    {"why do people {verb} the {noun} ?", "crowds adore seeing {adj} charm"},
    {"when did {person} build the {noun} ?", "around {year} roughly speaking"},
};

constexpr const char* kPassageTemplate =
    "the {adj} {noun} stands near the {place} . {person} built it in {year} . "
    "people {verb} it every {time} .";

}  // namespace

std::vector<QagExample> make_synthetic_corpus(std::uint64_t seed, int size, SyntheticProfile profile) {
  if (size < 1) throw ConfigError("make_synthetic_corpus: size must be >= 1");
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const std::vector<std::string>& pool) {
    return pool[rng() % pool.size()];
  };
  const QaTemplate* templates = profile == SyntheticProfile::extractive ? kExtractive : kAbstractive;

  std::vector<QagExample> out;
  std::set<std::string> seen_passages;
  int next_id = 0;
  while (static_cast<int>(out.size()) < size) {
    Slots s{pick(kAdjs), pick(kNouns), pick(kPlaces), pick(kPersons),
            pick(kVerbs), pick(kTimes), pick(kYears)};
    std::string passage = fill(kPassageTemplate, s);
    if (!seen_passages.insert(passage).second) continue;
    int n_pairs = std::min<int>(1 + static_cast<int>(rng() % 2), size - static_cast<int>(out.size()));
    int first_type = static_cast<int>(rng() % 3);
    for (int k = 0; k < n_pairs; ++k) {
      const auto& tpl = templates[(first_type + k) % 3];
      QagExample ex;
      char id[16];
      std::snprintf(id, sizeof(id), "ex%04d", next_id++);
      ex.id = id;
      ex.passage = passage;
      ex.question = fill(tpl.question, s);
      ex.answer = fill(tpl.answer, s);
      ex.split = "train";
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void write_synthetic_corpus(const std::string& path, std::uint64_t seed, int size,
                            SyntheticProfile profile) {
  save_dataset(path, make_synthetic_corpus(seed, size, profile));
}

}  // namespace qag

#include "qag/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace qag {

namespace {

bool is_word_char(unsigned char c) {
  // Bytes >= 0x80 keep multibyte UTF-8 sequences glued to their word.
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

const std::array<std::string, Vocab::kNumReserved>& Vocab::reserved_tokens() {
  static const std::array<std::string, kNumReserved> tokens = {"[pad]", "[bos]", "[eos]",
                                                               "[unk]", "[cls]", "[kpsep]"};
  return tokens;
}

std::vector<std::string> tokenize(const std::string& text) {
  const auto& reserved = Vocab::reserved_tokens();
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      // Reserved bracket forms are single tokens; anything else starting
      // with '[' falls through to punctuation handling.
      bool matched = false;
      for (const auto& r : reserved) {
        if (text.size() - i >= r.size()) {
          bool eq = true;
          for (std::size_t k = 0; k < r.size(); ++k)
            if (static_cast<char>(std::tolower(static_cast<unsigned char>(text[i + k]))) != r[k]) {
              eq = false;
              break;
            }
          if (eq) {
            flush();
            out.push_back(r);
            i += r.size();
            matched = true;
            break;
          }
        }
      }
      if (matched) continue;
    }
    if (std::isspace(c)) {
      flush();
      ++i;
    } else if (is_word_char(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
      ++i;
    } else {
      flush();
      out.push_back(std::string(1, static_cast<char>(c)));
      ++i;
    }
  }
  flush();
  return out;
}

std::string normalize(const std::string& text) {
  auto toks = tokenize(text);
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

Vocab::Vocab() {
  for (const auto& t : reserved_tokens()) push_token(t);
}

void Vocab::push_token(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int min_freq, int max_size) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  // std::map keeps candidate iteration deterministic.
  std::map<std::string, long> freq;
  for (const auto& doc : corpus)
    for (const auto& tok : tokenize(doc)) {
      bool reserved = false;
      for (const auto& r : reserved_tokens()) reserved = reserved || tok == r;
      if (!reserved) ++freq[tok];
    }
  std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, n] : items) {
    if (n < min_freq) continue;
    if (v.size() >= max_size) break;
    v.push_token(tok);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw IndexError("vocab: id " + std::to_string(id) + " out of range [0," + std::to_string(size()) + ")");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("vocab: cannot write " + path);
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocab: cannot read " + path);
  Vocab v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < kNumReserved) {
      if (line != reserved_tokens()[static_cast<std::size_t>(lineno)])
        throw ValidationError("vocab: " + path + " line " + std::to_string(lineno) +
                              " must be reserved token " + reserved_tokens()[static_cast<std::size_t>(lineno)]);
    } else {
      if (line.empty() || v.contains(line))
        throw ValidationError("vocab: " + path + " line " + std::to_string(lineno) +
                              " is empty or duplicate");
      v.push_token(line);
    }
    ++lineno;
  }
  if (lineno < kNumReserved) throw ValidationError("vocab: " + path + " is missing reserved tokens");
  return v;
}

TokenSeq encode(const std::string& text, const Vocab& vocab, bool add_bos_eos) {
  TokenSeq out;
  if (add_bos_eos) out.push_back(Vocab::kBos);
  for (const auto& tok : tokenize(text)) out.push_back(vocab.id(tok));
  if (add_bos_eos) out.push_back(Vocab::kEos);
  return out;
}

std::string decode(const TokenSeq& seq, const Vocab& vocab, bool keep_special) {
  std::string out;
  for (int id : seq) {
    if (!keep_special && (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos)) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace qag

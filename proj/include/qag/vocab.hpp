#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "qag/error.hpp"

namespace qag {

// Encoded token ids. Content never contains interior PAD.
using TokenSeq = std::vector<int>;

// Word-level vocabulary with fixed reserved ids. Immutable after build and
// freely shareable across threads.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kCls = 4;    // segment separator
  static constexpr int kKpsep = 5;  // keyphrase separator
  static constexpr int kNumReserved = 6;

  static const std::array<std::string, kNumReserved>& reserved_tokens();

  // Deterministic build: lowercased, whitespace/punctuation tokenized,
  // frequency-sorted with lexicographic tie-break. max_size counts the
  // reserved entries. Throws ValidationError on an empty corpus.
  static Vocab build(const std::vector<std::string>& corpus, int min_freq = 1,
                     int max_size = 1 << 20);

  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // One token per line, line number = id, reserved tokens first.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  Vocab();
  void push_token(const std::string& token);

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Normalization shared by encoding and the evaluation metrics: lowercase,
// alphanumeric runs as words, punctuation as standalone tokens, reserved
// bracket forms kept whole.
std::vector<std::string> tokenize(const std::string& text);

// tokenize() joined by single spaces.
std::string normalize(const std::string& text);

TokenSeq encode(const std::string& text, const Vocab& vocab, bool add_bos_eos = false);

// In-vocab text round-trips exactly through encode/decode after
// normalization. PAD/BOS/EOS are dropped unless keep_special is set.
std::string decode(const TokenSeq& seq, const Vocab& vocab, bool keep_special = false);

}  // namespace qag

#pragma once

// Greedy and beam decoding over an abstract next-token scorer, so the search
// logic is testable against exhaustive enumeration without a model.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "qag/error.hpp"
#include "qag/vocab.hpp"

namespace qag::decoding {

// Maps the tokens generated so far to raw logits over the vocabulary for the
// next position.
using StepScorer = std::function<std::vector<double>(const TokenSeq& prefix)>;

// Argmax decoding; ties resolve to the lowest token id. The returned
// sequence excludes the terminating EOS.
TokenSeq greedy(const StepScorer& scorer, int eos_id, int max_new);

// Beam search. Hypotheses are ranked by log-prob / steps^length_penalty,
// where steps counts scorer emissions (generated tokens plus the EOS step);
// length_penalty 0 ranks by raw log-prob. Ties break by earlier finish, then
// lexicographic token order. beam_width == 1 reproduces greedy exactly.
TokenSeq beam(const StepScorer& scorer, int eos_id, int max_new, int beam_width,
              double length_penalty);

namespace detail {

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0;
  for (double v : logits) denom += std::exp(v - mx);
  const double lse = mx + std::log(denom);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace detail

inline TokenSeq greedy(const StepScorer& scorer, int eos_id, int max_new) {
  TokenSeq out;
  for (int step = 0; step < max_new; ++step) {
    auto logits = scorer(out);
    int best = 0;
    for (int j = 1; j < static_cast<int>(logits.size()); ++j)
      if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(best)]) best = j;
    if (best == eos_id) break;
    out.push_back(best);
  }
  return out;
}

inline TokenSeq beam(const StepScorer& scorer, int eos_id, int max_new, int beam_width,
                     double length_penalty) {
  if (beam_width < 1) throw ConfigError("beam: width must be >= 1");
  struct Hyp {
    TokenSeq tokens;
    double logp = 0.0;
    bool finished = false;
    int finish_step = -1;
    int steps = 0;  // scorer emissions, including the EOS step
  };
  auto score = [length_penalty](const Hyp& h) {
    const int steps = std::max(1, h.steps);
    return h.logp / std::pow(static_cast<double>(steps), length_penalty);
  };
  // Higher score wins; ties prefer the earlier finish, then the
  // lexicographically smaller token sequence.
  auto better = [&](const Hyp& a, const Hyp& b) {
    const double sa = score(a), sb = score(b);
    if (sa != sb) return sa > sb;
    const int fa = a.finished ? a.finish_step : std::numeric_limits<int>::max();
    const int fb = b.finished ? b.finish_step : std::numeric_limits<int>::max();
    if (fa != fb) return fa < fb;
    return a.tokens < b.tokens;
  };

  std::vector<Hyp> live{Hyp{}};
  std::vector<Hyp> finished;
  for (int step = 0; step < max_new && !live.empty(); ++step) {
    struct Cand {
      std::size_t parent;
      int token;
      double logp;
    };
    std::vector<Cand> cands;
    for (std::size_t hi = 0; hi < live.size(); ++hi) {
      auto logp = detail::log_softmax(scorer(live[hi].tokens));
      for (int tok = 0; tok < static_cast<int>(logp.size()); ++tok)
        cands.push_back({hi, tok, live[hi].logp + logp[static_cast<std::size_t>(tok)]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    // Take the top beam_width continuations; EOS continuations retire to the
    // finished pool, the rest stay live.
    std::vector<Hyp> next;
    int taken = 0;
    for (const auto& c : cands) {
      if (taken >= beam_width) break;
      ++taken;
      Hyp h = live[c.parent];
      h.logp = c.logp;
      h.steps += 1;
      if (c.token == eos_id) {
        h.finished = true;
        h.finish_step = step;
        finished.push_back(h);
      } else {
        h.tokens.push_back(c.token);
        next.push_back(h);
      }
    }
    live = std::move(next);
    // Keep at most beam_width finished hypotheses (the best ones).
    std::sort(finished.begin(), finished.end(), better);
    if (static_cast<int>(finished.size()) > beam_width) finished.resize(static_cast<std::size_t>(beam_width));
  }
  // Unfinished hypotheses only compete when nothing finished.
  if (finished.empty()) finished = std::move(live);
  if (finished.empty()) return {};
  std::sort(finished.begin(), finished.end(), better);
  return finished.front().tokens;
}

}  // namespace qag::decoding

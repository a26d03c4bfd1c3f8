#!/usr/bin/env python3
"""Independent reference implementations used to freeze the expected metric
values in the C++ test fixtures. Run: python3 reference_metrics.py
"""

import math
from collections import Counter

BETA = 1.2


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu4(pairs, smooth=False):
    num = [0] * 5
    den = [0] * 5
    c_total = 0
    r_total = 0
    for cand, refs in pairs:
        c_total += len(cand)
        # effective reference length: closest to the candidate, ties -> shorter
        r_total += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            cand_counts = Counter(ngrams(cand, n))
            best = Counter()
            for ref in refs:
                rc = Counter(ngrams(ref, n))
                for g in rc:
                    best[g] = max(best[g], rc[g])
            num[n] += sum(min(cnt, best[g]) for g, cnt in cand_counts.items())
            den[n] += max(0, len(cand) - n + 1)
    log_p = 0.0
    for n in range(1, 5):
        nn, dd = num[n], den[n]
        if smooth and n >= 2:
            nn, dd = nn + 1, dd + 1
        if nn == 0 or dd == 0:
            return 0.0
        log_p += math.log(nn / dd) / 4.0
    if c_total == 0:
        return 0.0
    bp = 1.0 if c_total > r_total else math.exp(1.0 - r_total / c_total)
    return bp * math.exp(log_p)


def lcs(a, b):
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            dp[i][j] = dp[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(dp[i - 1][j], dp[i][j - 1])
    return dp[len(a)][len(b)]


def rouge_l(pairs):
    total = 0.0
    for cand, refs in pairs:
        best = 0.0
        for ref in refs:
            if not cand or not ref:
                continue
            l = lcs(cand, ref)
            r = l / len(ref)
            p = l / len(cand)
            if r + BETA * BETA * p > 0:
                f = (1 + BETA * BETA) * r * p / (r + BETA * BETA * p)
                best = max(best, f)
        total += best
    return total / len(pairs)


def meteor_align(cand, ref):
    """Greedy left-to-right exact alignment preferring chunk continuation."""
    used = [False] * len(ref)
    matches = []  # (cand_idx, ref_idx)
    prev_ref = -2
    prev_cand = -2
    for i, tok in enumerate(cand):
        positions = [j for j in range(len(ref)) if not used[j] and ref[j] == tok]
        if not positions:
            continue
        if prev_cand == i - 1 and prev_ref + 1 in positions:
            j = prev_ref + 1
        else:
            j = positions[0]
        used[j] = True
        matches.append((i, j))
        prev_cand, prev_ref = i, j
    return matches


def meteor_lite(pairs):
    total = 0.0
    for cand, refs in pairs:
        best = 0.0
        for ref in refs:
            matches = meteor_align(cand, ref)
            m = len(matches)
            if m == 0:
                continue
            p = m / len(cand)
            r = m / len(ref)
            f_mean = 10 * p * r / (r + 9 * p)
            chunks = 0
            pc, pr = -2, -2
            for ci, ri in matches:
                if not (ci == pc + 1 and ri == pr + 1):
                    chunks += 1
                pc, pr = ci, ri
            penalty = 0.5 * (chunks / m) ** 3
            best = max(best, f_mean * (1 - penalty))
        total += best
    return total / len(pairs)


FIXTURE = [
    ("the cat sat on the mat", ["the cat sat on the mat"]),
    ("the cat on the mat", ["the cat sat on the mat"]),
    ("a b c d", ["a c d", "a b c d e"]),
    ("quick the fox", ["the quick fox"]),
    ("", ["something here"]),
    ("x y", ["p q r s"]),
    ("to be or not to be , that is the question", ["to be or not to be that is the question"]),
    ("one two three", ["one two three"]),
    ("the the the the", ["the cat"]),
    ("round and round the garden", ["round the garden , like a teddy bear", "round and round we go"]),
]


def main():
    pairs = [(c.split(), [r.split() for r in refs]) for c, refs in FIXTURE]
    print(f"fixture bleu4      = {bleu4(pairs):.17g}")
    print(f"fixture rouge_l    = {rouge_l(pairs):.17g}")
    print(f"fixture meteor     = {meteor_lite(pairs):.17g}")

    hand = [(FIXTURE[1][0].split(), [FIXTURE[1][1][0].split()])]
    print(f"single pair 2 bleu4 unsmoothed = {bleu4(hand):.17g}")
    print(f"single pair 2 bleu4 smoothed   = {bleu4(hand, smooth=True):.17g}")

    spec_rouge = [("a c d".split(), ["a b c d".split()])]
    print(f"rouge a-c-d vs a-b-c-d = {rouge_l(spec_rouge):.17g}")

    spec_meteor = [("quick the fox".split(), ["the quick fox".split()])]
    print(f"meteor quick-the-fox = {meteor_lite(spec_meteor):.17g}")

    ident = [("w x y z".split(), ["w x y z".split()])]
    print(f"identity bleu = {bleu4(ident):.17g}, rouge = {rouge_l(ident):.17g}, "
          f"meteor = {meteor_lite(ident):.17g}  (1 - 0.5/64 = {1 - 0.5 / 64:.17g})")


if __name__ == "__main__":
    main()

"""Independent brute-force reference implementations used only by tests.

Deliberately written in a different style from the package code (explicit
loops, recursion, no shared helpers) so they stay an independent check.
"""

import math
from functools import lru_cache


def simple_tokens(text):
    out = []
    word = ""
    for ch in text.lower():
        if ch.isalnum():
            word += ch
        else:
            if word:
                out.append(word)
            word = ""
    if word:
        out.append(word)
    return out


def bleu_oracle(candidate, reference, n):
    """Clipped n-gram precision BLEU with eps smoothing on zero precisions."""
    cand = simple_tokens(candidate)
    ref = simple_tokens(reference)
    if len(cand) == 0:
        return 0.0
    product = 1.0
    for k in range(1, n + 1):
        cand_grams = {}
        for i in range(len(cand) - k + 1):
            g = tuple(cand[i:i + k])
            cand_grams[g] = cand_grams.get(g, 0) + 1
        ref_grams = {}
        for i in range(len(ref) - k + 1):
            g = tuple(ref[i:i + k])
            ref_grams[g] = ref_grams.get(g, 0) + 1
        clipped = 0
        for g, c in cand_grams.items():
            clipped += min(c, ref_grams.get(g, 0))
        total = len(cand) - k + 1
        if total <= 0 or clipped == 0:
            p = 1e-9
        else:
            p = clipped / total
        product *= p
    score = product ** (1.0 / n)
    if len(cand) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * score


def lcs_oracle(a, b):
    """Recursive LCS length with memoization."""
    a = tuple(a)
    b = tuple(b)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def rouge_l_oracle(candidate, reference):
    cand = simple_tokens(candidate)
    ref = simple_tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_oracle(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 100.0 * (2.0 * p * r) / (p + r)


def meteor_identical_oracle(num_tokens):
    """Score of a text against itself: perfect alignment, one chunk."""
    penalty = 0.5 * (1.0 / num_tokens) ** 3
    return 100.0 * (1.0 - penalty)


def kl_oracle(gen_lengths, gt_lengths, bin_width=10):
    """Direct-summation KL over Laplace-smoothed shared histograms."""
    longest = max(max(gen_lengths), max(gt_lengths))
    n_bins = longest // bin_width + 1
    gen_counts = [0] * n_bins
    gt_counts = [0] * n_bins
    for l in gen_lengths:
        gen_counts[l // bin_width] += 1
    for l in gt_lengths:
        gt_counts[l // bin_width] += 1
    total = 0.0
    for b in range(n_bins):
        p = (gen_counts[b] + 1) / (len(gen_lengths) + n_bins)
        q = (gt_counts[b] + 1) / (len(gt_lengths) + n_bins)
        total += p * math.log(p / q)
    return total

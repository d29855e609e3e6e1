"""Text-generation and clinical-efficacy metrics.

NLG scores (BLEU-n, ROUGE-L, METEOR) are reported on a 0-100 scale and
averaged over report pairs at corpus level. Clinical-efficacy scores compare
abnormality label vectors extracted from generated vs reference reports,
micro-averaged over (sample, label) pairs on a 0-1 scale. Region recognition
scores per-area precision/recall/F1 of the predicted grounding prefixes, and
the length diagnostic is a smoothed KL divergence between token-length
histograms.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ValidationError
from .volume_io import LabelVector

BLEU_EPS = 1e-9
LENGTH_BIN_WIDTH = 10

_PUNCT_RE = re.compile(r"[^a-z0-9\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation to spaces, split on whitespace."""
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: str, reference: str, n: int = 4) -> float:
    """Geometric mean of clipped k-gram precisions (k<=n) times the brevity penalty."""
    if not 1 <= n <= 4:
        raise ValidationError(f"n must be in 1..4, got {n}")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        cand_counts = _ngram_counts(cand, k)
        ref_counts = _ngram_counts(ref, k)
        total = max(len(cand) - k + 1, 0)
        if total == 0:
            precision = BLEU_EPS
        else:
            clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            precision = clipped / total if clipped > 0 else BLEU_EPS
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / n)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * bp * geo_mean


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """F1 over the longest common subsequence of tokens."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 100.0 * 2.0 * p * r / (p + r)


_STEM_SUFFIXES = ("", "s", "es", "ies", "ed", "d", "ing", "y", "ly")


def _stem_match(a: str, b: str) -> bool:
    """Common prefix of >=4 chars with recognized suffix remainders on both sides."""
    if a == b:
        return True
    k = 0
    while k < min(len(a), len(b)) and a[k] == b[k]:
        k += 1
    if k < 4:
        return False
    return a[k:] in _STEM_SUFFIXES and b[k:] in _STEM_SUFFIXES


def meteor(candidate: str, reference: str, synonyms: dict[str, set[str]] | None = None) -> float:
    """Unigram alignment score with a fragmentation penalty.

    Matchers run in priority order: exact, suffix-stem, then an optional
    synonym table. F_mean = 10PR/(R+9P); penalty = 0.5*(chunks/matches)^3.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0

    cand_match = [-1] * len(cand)  # index into ref
    ref_taken = [False] * len(ref)

    def run_stage(match_fn):
        for i, w in enumerate(cand):
            if cand_match[i] >= 0:
                continue
            for j, r in enumerate(ref):
                if not ref_taken[j] and match_fn(w, r):
                    cand_match[i] = j
                    ref_taken[j] = True
                    break

    run_stage(lambda a, b: a == b)
    run_stage(_stem_match)
    if synonyms:
        run_stage(lambda a, b: b in synonyms.get(a, ()) or a in synonyms.get(b, ()))

    pairs = [(i, j) for i, j in enumerate(cand_match) if j >= 0]
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f_mean = 10.0 * p * r / (r + 9.0 * p)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return 100.0 * f_mean * (1.0 - penalty)


NEGATION_CUES = ("no", "not", "without", "negative for")
NEGATION_WINDOW = 4


class RuleBasedLabeler:
    """Keyword labeler with a 4-token same-sentence negation window.

    Stands in for a learned report classifier behind the same interface:
    ``vocabulary`` plus ``extract(text) -> LabelVector``.
    """

    def __init__(self, vocabulary: tuple[str, ...] | None = None):
        from .areas import DEFAULT_ABNORMALITIES

        self.vocabulary = tuple(vocabulary) if vocabulary else DEFAULT_ABNORMALITIES
        self._keywords = {name: tuple(tokenize(name)) for name in self.vocabulary}

    def extract(self, text: str) -> LabelVector:
        sentences = re.split(r"[.!?;]", text)
        flags = [False] * len(self.vocabulary)
        for sentence in sentences:
            tokens = tokenize(sentence)
            for li, name in enumerate(self.vocabulary):
                kw = self._keywords[name]
                for start in range(len(tokens) - len(kw) + 1):
                    if tuple(tokens[start : start + len(kw)]) != kw:
                        continue
                    window = tokens[max(0, start - NEGATION_WINDOW) : start]
                    negated = any(t in ("no", "not", "without") for t in window) or any(
                        a == "negative" and b == "for" for a, b in zip(window, window[1:])
                    )
                    if not negated:
                        flags[li] = True
                        break
        return LabelVector(tuple(flags), vocabulary_size=len(self.vocabulary))


def extract_labels(text: str, labeler: RuleBasedLabeler | None = None) -> LabelVector:
    return (labeler or RuleBasedLabeler()).extract(text)


def ce_metrics(pred: list[LabelVector], gt: list[LabelVector]) -> dict[str, float]:
    """Micro-averaged precision/recall/F1 over all (sample, label) pairs."""
    if len(pred) != len(gt):
        raise ValidationError(f"prediction count {len(pred)} != ground truth count {len(gt)}")
    tp = fp = fn = 0
    for pv, gv in zip(pred, gt):
        if len(pv) != len(gv):
            raise ValidationError("label vocabulary sizes differ")
        for p, g in zip(pv, gv):
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif g and not p:
                fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def region_recognition_metrics(pairs: list[tuple[str, str]]) -> dict[str, dict[str, float]]:
    """Per-area P/R/F1 from (true_area, predicted_area) slot pairs.

    Unknown or invalid predictions count as misses for their true area and
    never as hits for any area.
    """
    from .areas import AREA_VOCABULARY

    out = {}
    for area in AREA_VOCABULARY:
        tp = sum(1 for t, p in pairs if t == area and p == area)
        fp = sum(1 for t, p in pairs if t != area and p == area)
        fn = sum(1 for t, p in pairs if t == area and p != area)
        if tp + fp + fn == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[area] = {"precision": precision, "recall": recall, "f1": f1}
    return out


def length_histograms(gen_reports: list[str], gt_reports: list[str]):
    """Shared-bin token-length histograms with Laplace smoothing."""
    if not gen_reports or not gt_reports:
        raise ValidationError("length divergence needs nonempty corpora")
    gen_lens = [len(tokenize(t)) for t in gen_reports]
    gt_lens = [len(tokenize(t)) for t in gt_reports]
    n_bins = max(max(gen_lens), max(gt_lens)) // LENGTH_BIN_WIDTH + 1
    rows = []
    gen_total = len(gen_lens) + n_bins
    gt_total = len(gt_lens) + n_bins
    for b in range(n_bins):
        lo = b * LENGTH_BIN_WIDTH
        gen_count = sum(1 for l in gen_lens if lo <= l < lo + LENGTH_BIN_WIDTH)
        gt_count = sum(1 for l in gt_lens if lo <= l < lo + LENGTH_BIN_WIDTH)
        rows.append((lo, (gen_count + 1) / gen_total, (gt_count + 1) / gt_total))
    return rows


def length_divergence(gen_reports: list[str], gt_reports: list[str]) -> float:
    """KL(gen || gt) in nats over smoothed token-length histograms."""
    rows = length_histograms(gen_reports, gt_reports)
    return sum(p * math.log(p / q) for _, p, q in rows)


@dataclass
class MetricReport:
    bleu: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0, 0.0])
    meteor: float = 0.0
    rouge_l: float = 0.0
    ce: dict[str, float] = field(default_factory=dict)
    region_recognition: dict[str, dict[str, float]] = field(default_factory=dict)
    length_kl: float = 0.0

    def as_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
            "ce": self.ce,
            "region_recognition": self.region_recognition,
            "length_kl": self.length_kl,
        }


def evaluate_corpus(
    candidates: list[str],
    references: list[str],
    region_pairs: list[tuple[str, str]] | None = None,
    labeler: RuleBasedLabeler | None = None,
) -> MetricReport:
    """Corpus-level metric bundle; NLG scores are means of per-pair scores."""
    if len(candidates) != len(references) or not candidates:
        raise ValidationError("candidates and references must be nonempty and aligned")
    labeler = labeler or RuleBasedLabeler()
    n = len(candidates)
    bleu = [sum(bleu_n(c, r, k) for c, r in zip(candidates, references)) / n for k in range(1, 5)]
    report = MetricReport(
        bleu=bleu,
        meteor=sum(meteor(c, r) for c, r in zip(candidates, references)) / n,
        rouge_l=sum(rouge_l(c, r) for c, r in zip(candidates, references)) / n,
        ce=ce_metrics([labeler.extract(c) for c in candidates], [labeler.extract(r) for r in references]),
        region_recognition=region_recognition_metrics(region_pairs or []),
        length_kl=length_divergence(candidates, references),
    )
    return report

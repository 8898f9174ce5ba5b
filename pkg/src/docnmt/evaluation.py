"""BLEU (13a tokenization, exponential smoothing), d-BLEU, APT and paired bootstrap."""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

log = logging.getLogger(__name__)

NGRAM_ORDER = 4
BLEU_SIGNATURE = "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp"

_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


@lru_cache(maxsize=2**16)
def _tokenize_13a_str(line):
    line = line.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = line.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return " ".join(line.split())


def tokenize_13a(text):
    """mteval-v13a tokenization, returned as a token list."""
    out = _tokenize_13a_str(text)
    return out.split() if out else []


@dataclass(frozen=True)
class BleuConfig:
    tokenizer: str = "13a"
    smoothing: str = "exp"
    case: str = "mixed"
    effective_order: bool = False

    def signature(self):
        return BLEU_SIGNATURE


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hyp, ref):
    """Sufficient statistics ``[hyp_len, ref_len, correct_1..4, total_1..4]`` for one segment."""
    h = tokenize_13a(hyp.rstrip())
    r = tokenize_13a(ref.rstrip())
    correct, total = [], []
    for n in range(1, NGRAM_ORDER + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        correct.append(sum(min(c, rc[g]) for g, c in hc.items()))
        total.append(max(len(h) - n + 1, 0))
    return [len(h), len(r)] + correct + total


def bleu_from_stats(stats):
    """Corpus BLEU in [0, 100] from summed sufficient statistics."""
    sys_len, ref_len = int(stats[0]), int(stats[1])
    correct = [int(c) for c in stats[2 : 2 + NGRAM_ORDER]]
    total = [int(t) for t in stats[2 + NGRAM_ORDER :]]
    bp = 1.0
    if sys_len < ref_len:
        bp = math.exp(1 - ref_len / sys_len) if sys_len > 0 else 0.0
    if not any(correct):
        return 0.0
    precisions = [0.0] * NGRAM_ORDER
    smooth = 1.0
    for n in range(NGRAM_ORDER):
        if total[n] == 0:
            break
        if correct[n] == 0:
            smooth *= 2
            precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]
    log_sum = sum(math.log(p) if p > 0 else -9999999999 for p in precisions)
    # exp(log(100)) overshoots by an ulp; BLEU is bounded by 100
    return min(bp * math.exp(log_sum / NGRAM_ORDER), 100.0)


def corpus_stats(hyps, refs):
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    return np.array([sentence_stats(h, r) for h, r in zip(hyps, refs)], dtype=np.int64).reshape(-1, 2 + 2 * NGRAM_ORDER)


def corpus_bleu(hyps, refs, cfg=None):
    """Single-reference corpus BLEU (unrounded)."""
    if len(hyps) == 0:
        raise ValueError("empty corpus")
    return bleu_from_stats(corpus_stats(hyps, refs).sum(axis=0))


def join_documents(sentences, boundaries):
    if sum(boundaries) != len(sentences):
        raise ValueError(f"document sizes sum to {sum(boundaries)} but there are {len(sentences)} sentences")
    docs, start = [], 0
    for n in boundaries:
        docs.append(" ".join(sentences[start : start + n]))
        start += n
    return docs


def doc_bleu(hyps, refs, doc_boundaries, cfg=None):
    """BLEU after joining each document's sentences with single spaces."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    return corpus_bleu(join_documents(hyps, doc_boundaries), join_documents(refs, doc_boundaries), cfg)


def format_score(value, digits=1):
    return f"{value:.{digits}f}"


# ---------------------------------------------------------------------------
# APT


@dataclass
class PronounLists:
    source: set
    target: set | None = None
    classes: dict = field(default_factory=dict)  # surface -> equivalence class

    def __post_init__(self):
        self.source = {p.lower() for p in self.source}
        if not self.source:
            raise ValueError("source pronoun list is empty")
        if self.target is not None:
            self.target = {p.lower() for p in self.target}
        self.classes = {k.lower(): v.lower() for k, v in self.classes.items()}

    def cls(self, word):
        w = word.lower()
        return self.classes.get(w, w)

    @classmethod
    def from_files(cls, source_path, target_path=None, classes_path=None):
        def read(path):
            with open(path, encoding="utf-8") as fh:
                return {line.strip() for line in fh if line.strip()}

        classes = {}
        if classes_path:
            with open(classes_path, encoding="utf-8") as fh:
                for line in fh:
                    parts = line.split()
                    if len(parts) >= 2:
                        for w in parts[1:]:
                            classes[w] = parts[0]
        return cls(read(source_path), read(target_path) if target_path else None, classes)


def apt_window(position, n_source, n_target):
    """Target indices aligned to source token ``position`` by relative position.

    Centre ``c = (position + 0.5) / n_source * n_target - 0.5``; radius
    ``max(3, ceil(0.1 * n_target))``; the window is every index within
    the radius of ``c``.
    """
    if n_target == 0:
        return [], 0.0
    c = (position + 0.5) / n_source * n_target - 0.5
    radius = max(3, math.ceil(0.1 * n_target))
    lo = max(0, math.ceil(c - radius))
    hi = min(n_target - 1, math.floor(c + radius))
    return list(range(lo, hi + 1)), c


@dataclass
class AptResult:
    score: float | None
    correct: int
    total: int
    unaligned: int


def apt_details(src_sents, hyp_sents, ref_sents, lists):
    """Count APT matches.

    Each source pronoun occurrence is aligned to the reference word nearest
    the window centre that is a target pronoun (any word when no target list
    is given).  Occurrences with no such reference word are ``unaligned`` and
    left out of the denominator.  The hypothesis is correct when a word of
    the same equivalence class appears in its own window.
    """
    if not (len(src_sents) == len(hyp_sents) == len(ref_sents)):
        raise ValueError("source, hypothesis and reference counts differ")
    correct = total = unaligned = 0
    for src, hyp, ref in zip(src_sents, hyp_sents, ref_sents):
        s = [w.lower() for w in tokenize_13a(src)]
        h = [w.lower() for w in tokenize_13a(hyp)]
        r = [w.lower() for w in tokenize_13a(ref)]
        for i, w in enumerate(s):
            if w not in lists.source:
                continue
            window, c = apt_window(i, len(s), len(r))
            cands = [j for j in window if lists.target is None or r[j] in lists.target]
            if not cands:
                unaligned += 1
                continue
            j = min(cands, key=lambda j: (abs(j - c), j))
            want = lists.cls(r[j])
            total += 1
            hwin, _ = apt_window(i, len(s), len(h))
            if any(lists.cls(h[k]) == want for k in hwin):
                correct += 1
    score = 100.0 * correct / total if total else None
    return AptResult(score, correct, total, unaligned)


def apt_score(src_sents, hyp_sents, ref_sents, lists):
    """Accuracy of pronoun translation in [0, 100]; ``None`` when no pronoun occurs."""
    res = apt_details(src_sents, hyp_sents, ref_sents, lists)
    if res.score is None:
        log.warning("APT undefined: no aligned source pronoun occurrences")
    return res.score


# ---------------------------------------------------------------------------
# significance


def resample_indices(n_sentences, n_samples, sample_frac, seed):
    """The index stream used by :func:`paired_bootstrap`: one ``rng.integers`` draw per resample."""
    rng = np.random.default_rng(seed)
    k = max(1, int(round(sample_frac * n_sentences)))
    for _ in range(n_samples):
        yield rng.integers(0, n_sentences, size=k)


def paired_bootstrap(hyps_a, hyps_b, refs, n=1000, sample_frac=1.0, seed=12345):
    """Fraction of resamples in which system B's BLEU is >= system A's (ties count for B).

    A small value means A is significantly better than B.
    """
    if n < 1:
        raise ValueError("number of resamples must be >= 1")
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise ValueError("system outputs and references differ in length")
    if not refs:
        raise ValueError("empty corpus")
    sa = corpus_stats(hyps_a, refs)
    sb = corpus_stats(hyps_b, refs)
    wins_b = 0
    for idx in resample_indices(len(refs), n, sample_frac, seed):
        if bleu_from_stats(sb[idx].sum(axis=0)) >= bleu_from_stats(sa[idx].sum(axis=0)):
            wins_b += 1
    return wins_b / n


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    system: str
    metrics: dict = field(default_factory=dict)
    signature: str = BLEU_SIGNATURE
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

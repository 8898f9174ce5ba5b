"""Constructed corpora with known context dependence.

Words are symbols of a cyclic alphabet of size K.  In the *dependent*
corpus each document starts with a random source sentence ``c`` and every
following sentence is ``mix(c)`` of its predecessor::

    mix(c)[k] = c[k] + (c[k+1] mod 2)  (mod K),   mix(c)[-1] = c[-1]

so a sentence is a deterministic function of the second slot of its
P@2-SRC context.  The target is the word-by-word translation of the
*unmixed* sentence, ``translate(unmix(x))``.  ``unmix`` is well defined
(back-substitution from the last word), so the target is still a
deterministic function of the source; but the unmixed words are exactly
what the context shows, which makes context the cheap route to the
target.  The *independent* variant draws every source sentence at random
and translates it word by word, so context carries no information.
"""

from __future__ import annotations

import numpy as np

from .data import Document, ParallelDocumentCorpus

SOURCE_WORDS = ("ka", "mo", "ri", "tes", "vul", "ne", "sa", "po", "lim", "dor", "fe", "gu")
TARGET_WORDS = ("cat", "dog", "sun", "tree", "red", "big", "sea", "fox", "owl", "map", "ink", "joy")


def mix(sentence, words=SOURCE_WORDS):
    idx = {w: i for i, w in enumerate(words)}
    c = [idx[w] for w in sentence.split()]
    K = len(words)
    out = [(a + b % 2) % K for a, b in zip(c, c[1:])] + c[-1:]
    return " ".join(words[k] for k in out)


def unmix(sentence, words=SOURCE_WORDS):
    idx = {w: i for i, w in enumerate(words)}
    x = [idx[w] for w in sentence.split()]
    K = len(words)
    c = list(x)
    for k in range(len(x) - 2, -1, -1):
        c[k] = (x[k] - c[k + 1] % 2) % K
    return " ".join(words[k] for k in c)


def translate_words(sentence, src=SOURCE_WORDS, tgt=TARGET_WORDS):
    table = dict(zip(src, tgt))
    return " ".join(table[w] for w in sentence.split())


def _random_sentence(rng, min_len, max_len, words=SOURCE_WORDS):
    n = int(rng.integers(min_len, max_len + 1))
    return " ".join(words[int(k)] for k in rng.integers(0, len(words), size=n))


def context_dependent_corpus(n_docs, doc_len=5, seed=0, min_len=3, max_len=5):
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        src = [_random_sentence(rng, min_len, max_len)]
        for _ in range(doc_len - 1):
            src.append(mix(src[-1]))
        docs.append(Document(src, [translate_words(unmix(s)) for s in src], f"dep{d}"))
    return ParallelDocumentCorpus(docs)


def context_independent_corpus(n_docs, doc_len=5, seed=0, min_len=3, max_len=5):
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        src = [_random_sentence(rng, min_len, max_len) for _ in range(doc_len)]
        docs.append(Document(src, [translate_words(s) for s in src], f"ind{d}"))
    return ParallelDocumentCorpus(docs)


def copy_corpus(n_sentences, seed=0, doc_len=5, min_len=3, max_len=6):
    """Identity task: target == source."""
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(0, n_sentences, doc_len):
        src = [_random_sentence(rng, min_len, max_len) for _ in range(min(doc_len, n_sentences - d))]
        docs.append(Document(src, list(src), f"copy{d // doc_len}"))
    return ParallelDocumentCorpus(docs)


def drop_document_starts(triplets, first=1):
    """Keep triplets whose position in the document is at least ``first``."""
    return [t for t in triplets if t.position_in_doc >= first]

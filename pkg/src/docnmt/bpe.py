"""Joint byte-pair-encoding vocabulary.

Text is segmented SentencePiece-style: a single leading space is added,
spaces become ``▁`` and each piece starts at a ``▁``.  Special tokens such
as ``<break>`` are cut out before segmentation and always map to their fixed
ids, so merges never cross or create them.

Serialized format (UTF-8 text)::

    docnmt-bpe 1
    tokens <N>
    <JSON string>            # one line per token, line index == id
    merges <M>
    <JSON [left, right]>     # one line per merge, in priority order
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from pathlib import Path

log = logging.getLogger(__name__)

SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>", "<break>", "<concat>")
PAD, UNK, BOS, EOS, BREAK, CONCAT = range(len(SPECIALS))
WORD_MARK = "▁"
UNK_SURFACE = "�"
_SPECIAL_RE = re.compile("(" + "|".join(re.escape(s) for s in SPECIALS) + ")")


def split_specials(text):
    """Split ``text`` into plain segments and special tokens (in order)."""
    return [part for part in _SPECIAL_RE.split(text) if part]


def pretokenize(segment):
    """Pieces of a plain segment, each starting at a word mark (except possibly the first)."""
    marked = segment.replace(" ", WORD_MARK)
    return [p for p in re.split(f"(?={WORD_MARK})", marked) if p]


def apply_merges(symbols, ranks):
    """Replay merges on a symbol list: repeatedly merge the best-ranked adjacent pair, left to right."""
    symbols = list(symbols)
    while len(symbols) > 1:
        best = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and (best is None or r < best[0]):
                best = (r, pair)
        if best is None:
            break
        left, right = best[1]
        merged = []
        i = 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return symbols


class SubwordVocab:
    def __init__(self, tokens, merges):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.tokens = list(tokens)
        self.merges = [tuple(m) for m in merges]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.ranks = {m: i for i, m in enumerate(self.merges)}
        self._cache = {}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, SubwordVocab) and self.tokens == other.tokens and self.merges == other.merges

    def segment(self, text):
        """Subword pieces of ``text`` (specials kept whole)."""
        pieces = []
        for part in split_specials(" " + text):
            if part in SPECIALS:
                pieces.append(part)
                continue
            for word in pretokenize(part):
                cached = self._cache.get(word)
                if cached is None:
                    cached = apply_merges(word, self.ranks)
                    self._cache[word] = cached
                pieces.extend(cached)
        return pieces

    def encode(self, text):
        ids = []
        for piece in self.segment(text):
            i = self.index.get(piece)
            if i is None:
                # unseen merge result: fall back to characters
                ids.extend(self.index.get(ch, UNK) for ch in piece)
            else:
                ids.append(i)
        return ids

    def decode(self, ids):
        """Inverse of :meth:`encode`; pad/bos/eos are dropped, ``<unk>`` becomes U+FFFD."""
        out = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS):
                continue
            out.append(UNK_SURFACE if i == UNK else self.tokens[i])
        text = "".join(out).replace(WORD_MARK, " ")
        return text[1:] if text.startswith(" ") else text

    def save(self, path):
        lines = ["docnmt-bpe 1", f"tokens {len(self.tokens)}"]
        lines += [json.dumps(t, ensure_ascii=False) for t in self.tokens]
        lines.append(f"merges {len(self.merges)}")
        lines += [json.dumps(list(m), ensure_ascii=False) for m in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "docnmt-bpe 1":
            raise ValueError(f"{path}: not a docnmt-bpe vocabulary")
        n = int(lines[1].split()[1])
        tokens = [json.loads(x) for x in lines[2 : 2 + n]]
        m = int(lines[2 + n].split()[1])
        merges = [tuple(json.loads(x)) for x in lines[3 + n : 3 + n + m]]
        return cls(tokens, merges)


def bpe_train(texts, target_size):
    """Learn merges greedily by pair frequency until the vocabulary holds ``target_size`` tokens.

    Ties between equally frequent pairs go to the lexicographically smallest pair.
    """
    words = Counter()
    for text in texts:
        for part in split_specials(" " + text):
            if part not in SPECIALS:
                words.update(pretokenize(part))
    chars = sorted({ch for w in words for ch in w})
    tokens = list(SPECIALS) + chars
    if target_size <= len(tokens):
        raise ValueError(f"target size {target_size} must exceed {len(tokens)} (specials + characters)")

    seqs = {w: list(w) for w in words}
    known = set(tokens)
    merges = []
    while len(tokens) < target_size:
        pairs = Counter()
        for w, syms in seqs.items():
            f = words[w]
            for pair in zip(syms, syms[1:]):
                pairs[pair] += f
        if not pairs:
            log.warning("BPE stopped at %d tokens: no pairs left to merge (target %d)", len(tokens), target_size)
            break
        top = max(pairs.values())
        pair = min(p for p, c in pairs.items() if c == top)
        merges.append(pair)
        new = pair[0] + pair[1]
        if new not in known:
            known.add(new)
            tokens.append(new)
        rank = {pair: 0}
        for w, syms in seqs.items():
            if len(syms) > 1:
                seqs[w] = apply_merges(syms, rank)
    return SubwordVocab(tokens, merges)

"""Document-level corpora, context selection, triplets and batching."""

from __future__ import annotations

import enum
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bpe import BOS, CONCAT, EOS, PAD, SPECIALS

log = logging.getLogger(__name__)

BREAK_TOKEN = SPECIALS[4]
CONCAT_TOKEN = SPECIALS[5]


class CorpusError(ValueError):
    pass


class ContextMode(str, enum.Enum):
    P2_SRC = "P2_SRC"
    P2_TGT = "P2_TGT"
    PN_SRC = "PN_SRC"
    RANDOM = "RANDOM"
    SELF = "SELF"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("@", "").replace("-", "_")
        aliases = {"P2SRC": "P2_SRC", "P2TGT": "P2_TGT", "PNSRC": "PN_SRC", "P_N_SRC": "PN_SRC"}
        key = aliases.get(key.replace("_", ""), key)
        return cls(key)


@dataclass
class Document:
    source: list
    target: list
    doc_id: str = ""

    def __len__(self):
        return len(self.source)


@dataclass
class ParallelDocumentCorpus:
    documents: list

    def __post_init__(self):
        for doc in self.documents:
            if len(doc.source) != len(doc.target):
                raise CorpusError(f"document {doc.doc_id!r}: {len(doc.source)} source vs {len(doc.target)} target sentences")

    @property
    def num_sentences(self):
        return sum(len(d) for d in self.documents)

    def sentences(self, side="source"):
        return [s for d in self.documents for s in getattr(d, side)]

    def boundaries(self):
        return [len(d) for d in self.documents]


# ---------------------------------------------------------------------------
# loading


def _read_lines(path):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [unicodedata.normalize("NFC", line.rstrip("\r")) for line in lines]


def read_boundaries(path):
    sizes = []
    for lineno, line in enumerate(_read_lines(path), 1):
        line = line.strip()
        if not line:
            continue
        try:
            n = int(line)
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: expected a sentence count, got {line!r}") from None
        if n < 1:
            raise CorpusError(f"{path}:{lineno}: document size must be positive, got {n}")
        sizes.append(n)
    return sizes


def _split_blank(lines, path):
    docs, cur, starts = [], [], []
    for lineno, line in enumerate(lines, 1):
        if line.strip() == "":
            if cur:
                docs.append(cur)
                cur = []
            continue
        if not cur:
            starts.append(lineno)
        cur.append(line)
    if cur:
        docs.append(cur)
    return docs, starts


def load_corpus(src_path, tgt_path, boundaries_path=None):
    """Load an aligned corpus.

    With ``boundaries_path`` the source/target files hold one sentence per
    line and the boundary file one document size per line.  Without it,
    documents are separated by blank lines in both files.
    """
    src = _read_lines(src_path)
    tgt = _read_lines(tgt_path)
    if boundaries_path is None:
        sdocs, sstarts = _split_blank(src, src_path)
        tdocs, tstarts = _split_blank(tgt, tgt_path)
        if len(sdocs) != len(tdocs):
            raise CorpusError(f"{src_path} has {len(sdocs)} documents but {tgt_path} has {len(tdocs)}")
        for k, (a, b) in enumerate(zip(sdocs, tdocs)):
            if len(a) != len(b):
                raise CorpusError(
                    f"document {k}: {len(a)} source lines (from line {sstarts[k]}) vs "
                    f"{len(b)} target lines (from line {tstarts[k]})"
                )
        return ParallelDocumentCorpus([Document(a, b, str(k)) for k, (a, b) in enumerate(zip(sdocs, tdocs))])

    if len(src) != len(tgt):
        raise CorpusError(f"line counts differ: {src_path} has {len(src)} lines, {tgt_path} has {len(tgt)}")
    sizes = read_boundaries(boundaries_path)
    if sum(sizes) != len(src):
        raise CorpusError(f"{boundaries_path}: document sizes sum to {sum(sizes)} but corpus has {len(src)} lines")
    docs, start = [], 0
    for k, n in enumerate(sizes):
        docs.append(Document(src[start : start + n], tgt[start : start + n], str(k)))
        start += n
    return ParallelDocumentCorpus(docs)


def write_corpus(corpus, prefix):
    """Write ``<prefix>.src``, ``<prefix>.tgt`` and ``<prefix>.docs``."""
    prefix = str(prefix)
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    Path(prefix + ".src").write_text("".join(s + "\n" for s in corpus.sentences("source")), encoding="utf-8")
    Path(prefix + ".tgt").write_text("".join(s + "\n" for s in corpus.sentences("target")), encoding="utf-8")
    Path(prefix + ".docs").write_text("".join(f"{n}\n" for n in corpus.boundaries()), encoding="utf-8")


def load_corpus_prefix(prefix):
    prefix = str(prefix)
    docs = Path(prefix + ".docs")
    return load_corpus(prefix + ".src", prefix + ".tgt", docs if docs.exists() else None)


# ---------------------------------------------------------------------------
# context selection


def join_context(first, second):
    return f"{first} {BREAK_TOKEN} {second}"


def select_context(doc, i, mode):
    """Context text for sentence ``i`` of ``doc``.

    Missing neighbours at document edges become empty strings; the
    ``<break>`` separator is always present.
    """
    mode = ContextMode.parse(mode)
    n = len(doc)
    if not 0 <= i < n:
        raise IndexError(f"sentence index {i} out of range for document of {n} sentences")

    def get(side, j):
        return getattr(doc, side)[j] if 0 <= j < n else ""

    if mode is ContextMode.P2_SRC:
        return join_context(get("source", i - 2), get("source", i - 1))
    if mode is ContextMode.P2_TGT:
        return join_context(get("target", i - 2), get("target", i - 1))
    if mode is ContextMode.PN_SRC:
        return join_context(get("source", i - 1), get("source", i + 1))
    if mode is ContextMode.SELF:
        return doc.source[i]
    raise ValueError("RANDOM context needs the whole corpus; use make_random_context")


def make_random_context(corpus, rng, current=None):
    """Two source sentences drawn uniformly (with replacement) from the corpus, joined by ``<break>``.

    ``current`` is a ``(doc_index, sentence_index)`` pair; that sentence and
    any sentence with identical text are never drawn.  ``rng`` is a seed or a
    ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    pool = corpus.sentences("source")
    if current is not None:
        d, i = current
        flat = sum(len(doc) for doc in corpus.documents[:d]) + i
        banned = pool[flat]
        eligible = [k for k, s in enumerate(pool) if k != flat and s != banned]
    else:
        eligible = list(range(len(pool)))
    if not eligible or (current is None and len(pool) < 2):
        raise ValueError("no eligible random context")
    a, b = rng.integers(0, len(eligible), size=2)
    return join_context(pool[eligible[a]], pool[eligible[b]])


# ---------------------------------------------------------------------------
# triplets


@dataclass
class Triplet:
    context: list
    source: list
    target: list
    doc_id: str
    position_in_doc: int
    doc_index: int = 0


@dataclass
class TruncationStats:
    context: int = 0
    source: int = 0
    target: int = 0
    concat: int = 0

    @property
    def total(self):
        return self.context + self.source + self.target + self.concat


def truncate_right(ids, max_len):
    """Keep the first ``max_len - 1`` ids and the trailing ``<eos>``."""
    if len(ids) <= max_len:
        return ids, False
    return ids[: max_len - 1] + [EOS], True


def truncate_left(ids, max_len):
    if len(ids) <= max_len:
        return ids, False
    return ids[len(ids) - max_len :], True


def build_triplets(corpus, mode, vocab, max_src=140, max_concat=160, seed=0, stats=None):
    """Encode every sentence of ``corpus`` as a Triplet with its selected context.

    Context keeps its most recent tokens (truncated from the left); source and
    target are cut from the right and keep ``<eos>``.  Counts of truncated
    fields are accumulated into ``stats`` when given and logged.
    """
    mode = ContextMode.parse(mode)
    stats = stats if stats is not None else TruncationStats()
    rng = np.random.default_rng(seed)
    out = []
    for d, doc in enumerate(corpus.documents):
        for i in range(len(doc)):
            if mode is ContextMode.RANDOM:
                ctx_text = make_random_context(corpus, rng, current=(d, i))
            else:
                ctx_text = select_context(doc, i, mode)
            ctx, cut = truncate_left(vocab.encode(ctx_text), max_src - 1)
            stats.context += cut
            src, cut = truncate_right(vocab.encode(doc.source[i]) + [EOS], max_src)
            stats.source += cut
            tgt, cut = truncate_right(vocab.encode(doc.target[i]) + [EOS], max_src)
            stats.target += cut
            out.append(Triplet(ctx + [EOS], src, tgt, doc.doc_id, i, d))
    if stats.total:
        log.warning("truncated %d fields while building triplets: %s", stats.total, stats)
    return out


def with_context(triplets, contexts):
    """Copies of ``triplets`` with their context ids replaced (already ``<eos>``-terminated)."""
    return [Triplet(list(c), t.source, t.target, t.doc_id, t.position_in_doc, t.doc_index) for t, c in zip(triplets, contexts)]


def concat_input(context, source, max_len=160):
    """``context <concat> source`` with the context's ``<eos>`` dropped and oldest context tokens trimmed."""
    ctx = list(context)
    if ctx and ctx[-1] == EOS:
        ctx = ctx[:-1]
    room = max_len - len(source) - 1
    if room < 0:
        raise ValueError(f"source of length {len(source)} does not fit in {max_len}")
    ctx, _ = truncate_left(ctx, room)
    return ctx + [CONCAT] + list(source)


# ---------------------------------------------------------------------------
# batching


def pad_rows(rows, pad=PAD):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad, dtype=np.int64)
    for k, r in enumerate(rows):
        out[k, : len(r)] = r
    return out


def shift_right(seq):
    """Decoder input for ``seq``: ``<bos>`` prepended, final (``<eos>``) position dropped."""
    seq = np.asarray(seq)
    out = np.full_like(seq, PAD)
    out[:, 0] = BOS
    out[:, 1:] = np.where(seq[:, 1:] != PAD, seq[:, :-1], PAD)
    return out


@dataclass
class Batch:
    triplets: list
    context: np.ndarray
    source: np.ndarray
    target: np.ndarray
    concat: np.ndarray
    indices: list = field(default_factory=list)

    shift_right = staticmethod(shift_right)

    @property
    def target_in(self):
        return shift_right(self.target)

    @property
    def source_in(self):
        return shift_right(self.source)

    def __len__(self):
        return len(self.triplets)


def make_batch(triplets, max_concat=160, indices=None):
    triplets = list(triplets)
    return Batch(
        triplets,
        pad_rows([t.context for t in triplets]),
        pad_rows([t.source for t in triplets]),
        pad_rows([t.target for t in triplets]),
        pad_rows([concat_input(t.context, t.source, max_concat) for t in triplets]),
        list(indices) if indices is not None else list(range(len(triplets))),
    )


def batch(triplets, batch_size, shuffle_seed=None, max_concat=160):
    """Split into fixed-count batches (last may be smaller), optionally shuffled by seed."""
    order = np.arange(len(triplets))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(triplets))
    return [
        make_batch([triplets[i] for i in order[s : s + batch_size]], max_concat, order[s : s + batch_size].tolist())
        for s in range(0, len(triplets), batch_size)
    ]

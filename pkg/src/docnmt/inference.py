"""Beam search with GNMT length penalty and greedy decoders."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bpe import BOS, EOS
from .data import make_batch
from .models import UnsupportedOperation, output_projection
from .blocks import decoder_stack, padding_mask

log = logging.getLogger(__name__)


@dataclass
class Hypothesis:
    tokens: list
    logprob: float
    finished: bool = False

    def penalized(self, p):
        return self.logprob / length_penalty(max(len(self.tokens), 1), p)


def length_penalty(length, p=0.6):
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** p


def default_max_len(source_len):
    return 2 * source_len + 10


def _log_softmax_rows(logits):
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def beam_search_core(step_logprobs, beam=4, p=0.6, max_len=20, eos=EOS):
    """Generic beam search.

    ``step_logprobs(prefixes)`` receives a list of token-id prefixes (without
    ``<bos>``) and returns a ``[len(prefixes), V]`` array of next-token
    log-probabilities.  Candidates are ranked by raw log-probability, ties
    going to the lower hypothesis index and then the lower token id.  An
    ``<eos>`` candidate among the top ``beam`` is retired; the search stops
    once ``beam`` hypotheses are retired.  Hypotheses still running at
    ``max_len`` are cut there and compete with the retired ones.  The
    result is the retired hypothesis with the best penalized score.
    """
    alive = [Hypothesis([], 0.0)]
    retired = []
    for step in range(1, max_len + 1):
        lp = np.asarray(step_logprobs([h.tokens for h in alive]), dtype=np.float64)
        V = lp.shape[1]
        scores = (np.array([h.logprob for h in alive])[:, None] + lp).reshape(-1)
        order = np.argsort(-scores, kind="stable")
        last = step == max_len
        new_alive = []
        for rank, flat in enumerate(order):
            hyp_idx, tok = divmod(int(flat), V)
            cand = Hypothesis(alive[hyp_idx].tokens + [tok], float(scores[flat]), finished=tok == eos)
            if last:
                retired.append(cand)
            elif cand.finished:
                if rank < beam:
                    retired.append(cand)
            elif len(new_alive) < beam:
                new_alive.append(cand)
            if not last and len(new_alive) >= beam and rank >= beam - 1:
                break
        alive = new_alive
        if sum(h.finished for h in retired) >= beam or not alive:
            break
    best = retired[0]
    for h in retired[1:]:
        if h.penalized(p) > best.penalized(p):
            best = h
    if not best.finished:
        log.warning("best hypothesis did not finish within max_len=%d; returning it truncated", max_len)
    return best


def _prepare(model, context, source):
    """Single-example batch and its decode state."""
    from .data import Triplet

    t = Triplet(list(context), list(source), [EOS], "", 0)
    b = make_batch([t])
    return model.encode(b)


def beam_search(model, context, source, beam=4, p=0.6, max_len=None):
    """Translate one sentence (``context``/``source`` are ``<eos>``-terminated id lists).

    Returns the token ids of the best hypothesis without ``<bos>``/``<eos>``.
    """
    if max_len is None:
        max_len = default_max_len(len(source))
    with ad.no_grad():
        state = _prepare(model, context, source)
        cache = {}

        def step(prefixes):
            n = len(prefixes)
            if n not in cache:
                cache[n] = state.repeat(n)
            tgt = np.array([[BOS] + pfx for pfx in prefixes], dtype=np.int64)
            logits = model.decode_logits(cache[n], tgt).data[:, -1, :]
            return _log_softmax_rows(logits)

        best = beam_search_core(step, beam, p, max_len)
    return [t for t in best.tokens if t != EOS]


def greedy_decode(model, context, source, max_len=None):
    """Argmax translation (lowest token id wins ties)."""
    if max_len is None:
        max_len = default_max_len(len(source))
    out = []
    with ad.no_grad():
        state = _prepare(model, context, source)
        for _ in range(max_len):
            tgt = np.array([[BOS] + out], dtype=np.int64)
            tok = int(np.argmax(model.decode_logits(state, tgt).data[0, -1]))
            if tok == EOS:
                break
            out.append(tok)
    return out


def greedy_reconstruct(model, context, max_len=None):
    """Greedy decoding on the intermediate decoder, conditioned on the encoded context only.

    Under the Re-Cntx objective the encoder input is the source, so pass the
    source sentence as ``context`` in that case.
    """
    if not model.config.is_cascade:
        raise UnsupportedOperation(f"{model.config.arch} has no intermediate decoder to reconstruct from")
    if max_len is None:
        max_len = default_max_len(len(context))
    from .blocks import encoder_stack

    p, cfg = model.params, model.cfg
    enc_in = np.array([list(context)], dtype=np.int64)
    out = []
    with ad.no_grad():
        enc = encoder_stack(enc_in, p, "enc", cfg)
        mem = [("cross", enc, padding_mask(enc_in))]
        for _ in range(max_len):
            inp = np.array([[BOS] + out], dtype=np.int64)
            h = decoder_stack(inp, mem, p, "inter", cfg)
            tok = int(np.argmax(output_projection(h, p, "inter_out").data[0, -1]))
            if tok == EOS:
                break
            out.append(tok)
    return out


def translate(model, triplets, beam=4, p=0.6, max_len=None):
    """Decode every triplet in order; beam 1 uses the greedy path."""
    hyps = []
    for t in triplets:
        if beam == 1:
            hyps.append(greedy_decode(model, t.context, t.source, max_len))
        else:
            hyps.append(beam_search(model, t.context, t.source, beam, p, max_len))
    return hyps


def reconstruct(model, triplets, max_len=None):
    hyps = []
    for t in triplets:
        enc_in, _ = model.cascade_inputs(t.context, t.source)
        hyps.append(greedy_reconstruct(model, enc_in, max_len))
    return hyps

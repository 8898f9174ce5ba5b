import itertools
import logging

import numpy as np
import pytest

from docnmt.bpe import EOS
from docnmt.inference import (
    Hypothesis,
    beam_search,
    beam_search_core,
    default_max_len,
    greedy_decode,
    greedy_reconstruct,
    length_penalty,
    reconstruct,
    translate,
)
from conftest import random_triplets, tiny_model


def table_model(tables):
    """Step function whose log-probs depend only on the prefix, read from ``tables``."""

    def step(prefixes):
        return np.stack([tables[tuple(p)] for p in prefixes])

    return step


def log_norm(x):
    x = np.asarray(x, dtype=np.float64)
    return x - np.log(np.exp(x).sum())


class TestLengthPenalty:
    def test_value(self):
        assert length_penalty(7) == pytest.approx(1.51572, abs=1e-5)

    def test_length_one(self):
        assert length_penalty(1, 0.6) == pytest.approx(1.0)

    def test_zero_exponent(self):
        assert length_penalty(30, 0.0) == 1.0

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            length_penalty(0)

    def test_default_max_len(self):
        assert default_max_len(5) == 20


class TestBeamCore:
    def test_prefers_penalized_best(self):
        # vocab {0: x, 1: y, EOS=3}: short "eos" vs longer path
        V = 4
        rng = np.random.default_rng(0)
        tables = {}
        for n in range(3):
            for pfx in itertools.product(range(V), repeat=n):
                tables[pfx] = log_norm(rng.normal(size=V))
        best = beam_search_core(table_model(tables), beam=4, p=0.6, max_len=2)
        assert isinstance(best, Hypothesis)

    def test_ties_go_to_lower_token(self):
        tables = {(): log_norm([0.0, 0.0, -50, 0.0]), (0,): log_norm([-50, -50, -50, 0.0]), (1,): log_norm([-50, -50, -50, 0.0])}
        best = beam_search_core(table_model(tables), beam=1, p=0.0, max_len=2)
        assert best.tokens == [0, EOS]

    def test_warns_when_nothing_finishes(self, caplog):
        row = log_norm([5.0, 0, 0, -50])
        with caplog.at_level(logging.WARNING):
            best = beam_search_core(lambda prefixes: np.stack([row] * len(prefixes)), beam=2, p=0.6, max_len=2)
        assert not best.finished
        assert "did not finish" in caplog.text

    def test_stops_after_beam_finished(self):
        calls = []
        tables = {(): log_norm([0, 0, 0, 5.0])}

        def step(prefixes):
            calls.append(len(prefixes))
            return np.stack([tables.get(tuple(p), log_norm([0, 0, 0, 5.0])) for p in prefixes])

        best = beam_search_core(step, beam=1, p=0.6, max_len=10)
        assert best.tokens == [EOS] and calls == [1]


class TestModelDecoding:
    def test_beam_one_equals_greedy(self):
        m = tiny_model("cascade_mtl", dtype=np.float32, seed=3)
        for t in random_triplets(4, seed=1):
            assert beam_search(m, t.context, t.source, beam=1, max_len=6) == greedy_decode(m, t.context, t.source, max_len=6)

    def test_outputs_exclude_eos(self):
        m = tiny_model("inside_context", dtype=np.float32)
        for hyp in translate(m, random_triplets(3), beam=3, max_len=5):
            assert EOS not in hyp and len(hyp) <= 5

    def test_translate_greedy_path(self):
        m = tiny_model("vanilla_sent", dtype=np.float32)
        ts = random_triplets(2)
        assert translate(m, ts, beam=1, max_len=4) == [greedy_decode(m, t.context, t.source, 4) for t in ts]

    def test_reconstruct_uses_context_only(self):
        m = tiny_model("cascade_residual", dtype=np.float32)
        t1, t2 = random_triplets(2, seed=4)
        t2.context = list(t1.context)
        a, b = reconstruct(m, [t1, t2], max_len=5)
        assert a == b

    def test_greedy_reconstruct_max_len(self):
        m = tiny_model("cascade_mtl", dtype=np.float32)
        assert len(greedy_reconstruct(m, [6, 7, EOS], max_len=3)) <= 3

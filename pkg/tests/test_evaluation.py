import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docnmt.evaluation import (
    BLEU_SIGNATURE,
    PronounLists,
    apt_details,
    apt_score,
    apt_window,
    corpus_bleu,
    doc_bleu,
    format_score,
    join_documents,
    paired_bootstrap,
    resample_indices,
    sentence_stats,
    tokenize_13a,
)

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "bleu_fixtures.json").read_text(encoding="utf-8"))["cases"]


class TestTokenizer:
    def test_punctuation_split(self):
        assert tokenize_13a("Hello, world!") == ["Hello", ",", "world", "!"]

    def test_numbers_keep_separators(self):
        assert tokenize_13a("1,000.5 items.") == ["1,000.5", "items", "."]

    def test_entities_unescaped(self):
        assert tokenize_13a("a &amp; b") == ["a", "&", "b"]

    def test_empty(self):
        assert tokenize_13a("") == []


class TestBleu:
    @pytest.mark.parametrize("case", FIXTURES, ids=[c["name"] for c in FIXTURES])
    def test_frozen_fixture(self, case):
        assert corpus_bleu(case["hyps"], case["refs"]) == pytest.approx(case["bleu"], abs=0.01)
        assert doc_bleu(case["hyps"], case["refs"], case["docs"]) == pytest.approx(case["doc_bleu"], abs=0.01)

    def test_enough_fixtures(self):
        assert len(FIXTURES) >= 20

    def test_identity_is_100(self):
        refs = ["the cat sat on the mat .", "a dog ran home quickly today"]
        assert corpus_bleu(refs, refs) == 100.0

    def test_no_match_is_zero(self):
        assert corpus_bleu(["x y z w"], ["a b c d"]) == 0.0

    def test_signature(self):
        assert "tok:13a" in BLEU_SIGNATURE and "smooth:exp" in BLEU_SIGNATURE

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty corpus"):
            corpus_bleu([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            corpus_bleu(["a"], ["a", "b"])

    def test_sentence_stats_layout(self):
        st_ = sentence_stats("a b c d", "a b c e")
        assert st_ == [4, 4, 3, 2, 1, 0, 4, 3, 2, 1]

    def test_doc_join(self):
        assert join_documents(["a", "b", "c"], [2, 1]) == ["a b", "c"]
        with pytest.raises(ValueError, match="sum to 2"):
            join_documents(["a", "b", "c"], [1, 1])

    def test_format(self):
        assert format_score(27.456) == "27.5"


class TestAgainstSacrebleu:
    sacrebleu = pytest.importorskip("sacrebleu")

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.text(alphabet="abc .,!-'0123", max_size=30),
                st.text(alphabet="abc .,!-'0123", max_size=30),
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_random_corpora(self, pairs):
        hyps = [h for h, _ in pairs]
        refs = [r for _, r in pairs]
        want = self.sacrebleu.corpus_bleu(hyps, [refs]).score
        assert corpus_bleu(hyps, refs) == pytest.approx(want, abs=0.01)


class TestApt:
    @pytest.fixture
    def lists(self):
        return PronounLists({"il", "elle"}, {"he", "she", "it"}, {"she": "she", "he": "he"})

    def test_window(self):
        window, c = apt_window(0, 4, 4)
        assert c == pytest.approx(0.0) and window == [0, 1, 2, 3]

    def test_perfect(self, lists):
        src = ["il dort", "elle mange"]
        ref = ["he sleeps", "she eats"]
        assert apt_score(src, ref, ref, lists) == 100.0

    def test_dropped(self, lists):
        assert apt_score(["il dort"], ["sleeps"], ["he sleeps"], lists) == 0.0

    def test_wrong_pronoun(self, lists):
        assert apt_score(["il dort"], ["she sleeps"], ["he sleeps"], lists) == 0.0

    def test_case_insensitive(self, lists):
        assert apt_score(["Il dort"], ["He sleeps"], ["he sleeps"], lists) == 100.0

    def test_undefined_without_pronouns(self, lists, caplog):
        assert apt_score(["le chat"], ["the cat"], ["the cat"], lists) is None
        assert "undefined" in caplog.text

    def test_unaligned_occurrence_excluded(self, lists):
        res = apt_details(["il dort"], ["sleeps"], ["sleeps"], lists)
        assert (res.total, res.unaligned, res.score) == (0, 1, None)

    def test_equivalence_class(self):
        lists = PronounLists({"vous"}, {"you", "ye"}, {"ye": "you"})
        assert apt_score(["vous"], ["ye"], ["you"], lists) == 100.0

    def test_empty_list(self):
        with pytest.raises(ValueError):
            PronounLists(set())

    def test_from_files(self, tmp_path):
        (tmp_path / "s").write_text("il\nelle\n")
        (tmp_path / "t").write_text("he\nshe\n")
        (tmp_path / "c").write_text("you you ye\n")
        pl = PronounLists.from_files(tmp_path / "s", tmp_path / "t", tmp_path / "c")
        assert pl.source == {"il", "elle"} and pl.cls("ye") == "you"


class TestBootstrap:
    refs = ["the cat sat on the mat today", "a dog ran home fast now", "it was a big red fox", "the fox ran on the mat"]

    def test_dominant_system(self):
        bad = ["x y z w v u", "q r s t u v", "m n o p q r", "k l m n o p"]
        assert paired_bootstrap(self.refs, bad, self.refs, n=200, seed=1) == 0.0

    def test_identical_systems_tie_to_b(self):
        assert paired_bootstrap(self.refs, self.refs, self.refs, n=50) == 1.0

    def test_deterministic(self):
        half = ["the cat sat on a mat today", "a dog ran away fast", "it was red", "the fox ran on the mat"]
        a = paired_bootstrap(self.refs, half, self.refs, n=100, seed=3)
        assert a == paired_bootstrap(self.refs, half, self.refs, n=100, seed=3)

    def test_resample_indices_stream(self):
        rng = np.random.default_rng(9)
        for idx in resample_indices(10, 3, 1.0, 9):
            np.testing.assert_array_equal(idx, rng.integers(0, 10, size=10))

    def test_sample_fraction(self):
        assert all(len(i) == 5 for i in resample_indices(10, 4, 0.5, 0))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            paired_bootstrap(["a"], ["a"], ["a"], n=0)
        with pytest.raises(ValueError):
            paired_bootstrap(["a"], ["a", "b"], ["a"])

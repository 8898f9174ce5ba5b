import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docnmt.bpe import BREAK, CONCAT, EOS, SPECIALS, UNK, SubwordVocab, apply_merges, bpe_train, split_specials


@pytest.fixture(scope="module")
def vocab():
    texts = ["the cat sat on the mat", "the dog sat on the log", "a cat and a dog", "Über café"]
    return bpe_train(texts, 45)


class TestTraining:
    def test_first_merge_is_most_frequent_pair(self):
        v = bpe_train(["aaab aaab"], 12)
        assert v.merges[0] == ("a", "a")

    def test_tie_goes_to_smallest_pair(self):
        v = bpe_train(["ab cd"], 12)
        # every pair occurs once; ('a','b') < ('c','d') < ('▁','a') ...
        assert v.merges[0] == ("a", "b")

    def test_specials_have_fixed_ids(self, vocab):
        assert vocab.tokens[: len(SPECIALS)] == list(SPECIALS)
        assert (vocab.index["<eos>"], vocab.index["<break>"], vocab.index["<concat>"]) == (EOS, BREAK, CONCAT)

    def test_reaches_target_size(self, vocab):
        assert len(vocab) == 45

    def test_target_too_small(self):
        with pytest.raises(ValueError, match="must exceed"):
            bpe_train(["abc"], 8)

    def test_stops_early_with_warning(self, caplog):
        v = bpe_train(["ab"], 100)
        assert len(v) < 100
        assert "stopped" in caplog.text

    def test_deterministic(self):
        texts = ["one two three", "two three four", "three four five"]
        assert bpe_train(texts, 40) == bpe_train(texts, 40)


class TestApplyMerges:
    def test_example(self):
        assert apply_merges(["a", "a", "a", "b"], {("a", "a"): 0}) == ["aa", "a", "b"]

    def test_rank_order(self):
        ranks = {("b", "c"): 0, ("a", "b"): 1}
        assert apply_merges(list("abc"), ranks) == ["a", "bc"]

    def test_no_merges(self):
        assert apply_merges(list("xyz"), {}) == ["x", "y", "z"]


class TestEncoding:
    def test_round_trip(self, vocab):
        for text in ["the cat sat on the log", "a dog", "Über café"]:
            assert vocab.decode(vocab.encode(text)) == text

    def test_break_token_is_atomic(self, vocab):
        ids = vocab.encode("the cat <break> a dog")
        assert ids.count(BREAK) == 1
        assert vocab.decode(ids) == "the cat <break> a dog"

    def test_empty_context_sides(self, vocab):
        assert vocab.decode(vocab.encode(" <break> ")) == " <break> "

    def test_split_specials(self):
        assert split_specials("a<break>b") == ["a", "<break>", "b"]

    def test_unknown_character(self, vocab):
        ids = vocab.encode("zebra")
        assert UNK in ids
        assert "�" in vocab.decode(ids)

    def test_decode_drops_control_ids(self, vocab):
        ids = [2] + vocab.encode("the cat") + [EOS, 0, 0]
        assert vocab.decode(ids) == "the cat"

    def test_save_load(self, vocab, tmp_path):
        vocab.save(tmp_path / "v.bpe")
        again = SubwordVocab.load(tmp_path / "v.bpe")
        assert again == vocab
        assert again.encode("the mat") == vocab.encode("the mat")

    def test_load_rejects_other_format(self, tmp_path):
        (tmp_path / "v.txt").write_text("hello\n")
        with pytest.raises(ValueError):
            SubwordVocab.load(tmp_path / "v.txt")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["the", "cat", "dog", "sat", "on", "mat", "log", "a", "and"]), min_size=1, max_size=8))
def test_round_trip_property(words):
    v = _shared_vocab()
    text = " ".join(words)
    assert v.decode(v.encode(text)) == text


_VOCAB = []


def _shared_vocab():
    if not _VOCAB:
        _VOCAB.append(bpe_train(["the cat sat on the mat", "the dog sat on the log", "a cat and a dog"], 50))
    return _VOCAB[0]

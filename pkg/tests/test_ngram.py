import logging
import math

import numpy as np
import pytest

from ngram import BOS, EOS, UNK, NGramError, NGramLM, load_arpa, read_arpa, save_arpa, train_kn, write_arpa

TOY = ["a b", "a b", "a c"]


def random_corpus(rng):
    vocab = [f"w{i}" for i in range(int(rng.integers(3, 31)))]
    corpus = [
        " ".join(rng.choice(vocab, size=int(rng.integers(2, 9))))
        for _ in range(int(rng.integers(1, 21)))
    ]
    return corpus, vocab


def assert_normalized(lm, tol=1e-6):
    words = lm.predictable_words
    for history in lm.histories():
        mass = sum(10.0 ** lm.logprob(w, history) for w in words)
        assert mass == pytest.approx(1.0, abs=tol), history


class TestTrainKN:
    def test_toy_bigram_matches_hand_computation(self):
        lm = train_kn(TOY, 2, {"a", "b", "c"})
        # D2 = 1/3, D1 = 3/5; continuation unigram p(b) = 0.4/5 + 0.48/5 = 0.176
        assert 10 ** lm.logprob("b") == pytest.approx(0.176, abs=1e-9)
        expected = (2 - 1 / 3) / 3 + (2 / 9) * 0.176
        assert 10 ** lm.logprob("b", ["a"]) == pytest.approx(expected, abs=1e-9)
        assert 10 ** lm.bows[1][("a",)] == pytest.approx(2 / 9, abs=1e-12)

    def test_unigram_normalization(self):
        lm = train_kn(["a a a"], 1, {"a", UNK, BOS, EOS})
        assert sum(10 ** lm.logprob(w) for w in lm.predictable_words) == pytest.approx(1.0, abs=1e-9)
        assert 10 ** lm.logprob(UNK) > 0

    def test_normalization_random_corpora(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            corpus, vocab = random_corpus(rng)
            lm = train_kn(corpus, int(rng.integers(1, 5)), vocab)
            assert_normalized(lm)

    def test_probabilities_in_range(self):
        lm = train_kn(TOY, 3, {"a", "b", "c"})
        for k in range(1, lm.order + 1):
            for ngram, logp in lm.probs[k].items():
                if ngram != (BOS,):
                    assert logp <= 0.0
                    assert math.isfinite(logp)
            assert all(math.isfinite(b) for b in lm.bows[k].values())

    def test_order_out_of_range(self):
        with pytest.raises(NGramError, match="order"):
            train_kn(TOY, 6, {"a"})
        with pytest.raises(NGramError, match="order"):
            train_kn(TOY, 0, {"a"})

    def test_empty_corpus(self):
        with pytest.raises(NGramError, match="empty"):
            train_kn([], 2, {"a"})

    def test_order_without_ngrams(self):
        with pytest.raises(NGramError, match="No 4-grams"):
            train_kn(["a"], 4, {"a"})

    def test_degenerate_discount_falls_back(self, caplog):
        with caplog.at_level(logging.WARNING, logger="ngram"):
            lm = train_kn(["a b", "a b"], 2, {"a", "b"})
        assert "D=0.5" in caplog.text
        assert_normalized(lm)


class TestLogprob:
    def test_stored_entry(self):
        lm = train_kn(TOY, 2, {"a", "b", "c"})
        assert lm.logprob("b", ["a"]) == lm.probs[2][("a", "b")]

    def test_unseen_backs_off(self):
        lm = train_kn(TOY, 2, {"a", "b", "c", "d"})
        value = lm.logprob("d", ["c"])
        assert math.isfinite(value)
        assert value == pytest.approx(lm.bows[1].get(("c",), 0.0) + lm.probs[1][("d",)])

    def test_oov_maps_to_unk(self):
        lm = train_kn(TOY, 2, {"a", "b", "c"})
        assert lm.logprob("zebra", ["a"]) == lm.logprob(UNK, ["a"])

    def test_long_history_truncated(self):
        lm = train_kn(TOY, 2, {"a", "b", "c"})
        assert lm.logprob("b", ["c", "c", "a"]) == lm.logprob("b", ["a"])

    def test_training_sentence_beats_shuffle(self):
        lm = train_kn(TOY, 2, {"a", "b", "c"})
        assert lm.sentence_logprob(["a", "b"]) >= lm.sentence_logprob(["b", "a"])

    def test_held_in_perplexity_below_shuffled(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            vocab = [f"w{i}" for i in range(12)]
            successor = {w: rng.choice(vocab, size=2) for w in vocab}
            corpus = []
            for _ in range(30):
                word = str(rng.choice(vocab))
                sentence = [word]
                for _ in range(int(rng.integers(3, 8))):
                    word = str(rng.choice(successor[word]))
                    sentence.append(word)
                corpus.append(sentence)
            shuffled = [list(rng.permutation(s)) for s in corpus]
            lm = train_kn(corpus, 3, vocab)
            assert lm.perplexity(corpus) <= lm.perplexity(shuffled)


class TestArpa:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        for _ in range(10):
            corpus, vocab = random_corpus(rng)
            lm = train_kn(corpus, int(rng.integers(1, 5)), vocab)
            path = tmp_path / "lm.arpa"
            save_arpa(lm, path)
            again = load_arpa(path)
            assert again.order == lm.order
            assert again.vocab == lm.vocab
            for k in range(1, lm.order + 1):
                assert again.probs[k].keys() == lm.probs[k].keys()
                assert again.bows[k].keys() == lm.bows[k].keys()
                for ngram, value in lm.probs[k].items():
                    assert again.probs[k][ngram] == pytest.approx(value, abs=1e-6)
                for ngram, value in lm.bows[k].items():
                    assert again.bows[k][ngram] == pytest.approx(value, abs=1e-6)
            assert write_arpa(again) == write_arpa(lm)

    def test_layout(self):
        text = write_arpa(train_kn(TOY, 2, {"a", "b", "c"}))
        assert text.startswith("\\data\\\nngram 1=6\nngram 2=")
        assert "\n\\1-grams:\n" in text
        assert "\n\\2-grams:\n" in text
        assert text.endswith("\\end\\\n")
        assert "-99.000000\t<s>\t" in text

    def test_count_mismatch(self):
        body = "\n".join(f"-0.5\tw{i}" for i in range(3))
        pairs = "\n".join(f"-0.2\tw0 w{i}" for i in range(4))
        text = f"\\data\\\nngram 1=3\nngram 2=5\n\n\\1-grams:\n{body}\n\n\\2-grams:\n{pairs}\n\n\\end\\\n"
        with pytest.raises(NGramError, match="declares 5 2-grams but the body lists 4"):
            read_arpa(text)

    def test_minimal(self):
        lm = read_arpa("\\data\\\nngram 1=1\n\n\\1-grams:\n0.000000\thello\n\n\\end\\\n")
        assert isinstance(lm, NGramLM)
        assert lm.order == 1
        assert lm.logprob("hello") == 0.0

    @pytest.mark.parametrize(
        "text",
        [
            "ngram 1=1\n\\1-grams:\n0.0\thello\n\\end\\\n",
            "\\data\\\nngram 1=1\n\\2-grams:\n0.0\thello\n\\end\\\n",
            "\\data\\\nngram 1=1\n\\1-grams:\n0.0\thello\n",
            "\\data\\\nngram one=1\n\\1-grams:\n0.0\thello\n\\end\\\n",
            "\\data\\\nngram 1=1\n\\1-grams:\nabc\thello\n\\end\\\n",
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(NGramError):
            read_arpa(text)

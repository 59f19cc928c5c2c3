from pathlib import Path

import numpy as np
import pytest

from augment import (
    AugmentationError,
    AugmentationPlan,
    augment_embeddings,
    build_plans,
    format_plans,
    parse_candidate_map,
    read_candidate_map,
    select_candidates,
    write_candidate_map,
)
from evaluation import NEInventory
from neural_lm import init_model, train, zero_model
from settings import NeuralLMConfig

TOY_CORPUS = Path(__file__).resolve().parent.parent / "data" / "toy_corpus.txt"
VOCAB = ("</s>", "<s>", "<unk>", "a", "b", "c", "t")


def model_with_rows(rows):
    lm = zero_model(VOCAB, NeuralLMConfig(dim=2))
    for word, row in rows.items():
        lm.E[lm.index(word)] = row
    return lm


@pytest.fixture
def inventory():
    counts = {"bedok": 2, "tampines": 0}
    return NEInventory(frozenset({"bedok"}), frozenset({"tampines"}), 10, counts)


class TestBuildPlans:
    def test_thetas_by_class(self, inventory):
        cmap = {"bedok": list("abcde"), "tampines": list("vwxyz")}
        plans = {p.target: p for p in build_plans(inventory, cmap)}
        assert plans["bedok"].theta == 0.09
        assert plans["tampines"].theta == 0.01
        assert len(plans["bedok"].candidates) == 5

    def test_first_k_taken(self, inventory):
        cmap = {"bedok": list("abcdefg"), "tampines": list("vwxyz")}
        plans = build_plans(inventory, cmap, k=3)
        assert plans[0].candidates == ("a", "b", "c")

    def test_too_few_candidates(self, inventory):
        cmap = {"bedok": list("abcd"), "tampines": list("vwxyz")}
        with pytest.raises(AugmentationError, match="4 candidates"):
            build_plans(inventory, cmap)

    def test_candidate_outside_vocab(self, inventory):
        cmap = {"bedok": list("abcde"), "tampines": list("abcde")}
        with pytest.raises(AugmentationError, match="vocabulary"):
            build_plans(inventory, cmap, vocab={"a", "b", "c", "d"})

    def test_plan_invariants(self):
        with pytest.raises(AugmentationError):
            AugmentationPlan("a", (), 0.1)
        with pytest.raises(AugmentationError):
            AugmentationPlan("a", ("a", "b"), 0.1)
        with pytest.raises(AugmentationError):
            AugmentationPlan("a", ("b",), -0.1)


class TestAugmentEmbeddings:
    def test_unit_theta_zero_candidate_is_identity(self):
        lm = model_with_rows({"t": [0.3, -0.7], "a": [0.0, 0.0]})
        out = augment_embeddings(lm, [AugmentationPlan("t", ("a",), 1.0)])
        np.testing.assert_array_equal(out.E[out.index("t")], [0.3, -0.7])

    def test_zero_theta_is_candidate_mean(self):
        lm = model_with_rows({"t": [5.0, 5.0], "a": [1.0, 0.0], "b": [0.0, 1.0]})
        out = augment_embeddings(lm, [AugmentationPlan("t", ("a", "b"), 0.0)])
        np.testing.assert_allclose(out.E[out.index("t")], [0.5, 0.5], atol=1e-12)

    def test_hand_computed_update(self):
        lm = model_with_rows({"t": [1.0, 1.0], "a": [2.0, 0.0]})
        out = augment_embeddings(lm, [AugmentationPlan("t", ("a",), 0.09)])
        np.testing.assert_allclose(out.E[out.index("t")], [2.09, 0.09], atol=1e-12)

    def test_locality_and_input_untouched(self):
        lm = init_model(VOCAB, NeuralLMConfig(dim=3, seed=2))
        before = {name: value.copy() for name, value in lm.parameters().items()}
        out = augment_embeddings(lm, [AugmentationPlan("t", ("a", "b"), 0.09)])
        for name, value in lm.parameters().items():
            np.testing.assert_array_equal(value, before[name])
        others = [i for i, w in enumerate(VOCAB) if w != "t"]
        np.testing.assert_array_equal(out.E[others], lm.E[others])
        for name in ("W_x", "W_h", "b_h", "b_o"):
            np.testing.assert_array_equal(getattr(out, name), getattr(lm, name))

    def test_order_independent(self):
        lm = init_model(VOCAB, NeuralLMConfig(dim=3, seed=3))
        plans = [AugmentationPlan("t", ("a", "b"), 0.09), AugmentationPlan("a", ("t", "c"), 0.01)]
        forward = augment_embeddings(lm, plans)
        backward = augment_embeddings(lm, plans[::-1])
        np.testing.assert_array_equal(forward.E, backward.E)
        # Snapshot: the row of "a" is built from the pre-augmentation row of "t"
        expected = 0.01 * lm.E[lm.index("a")] + (lm.E[lm.index("t")] + lm.E[lm.index("c")]) / 2
        np.testing.assert_allclose(forward.E[forward.index("a")], expected, atol=1e-15)

    def test_oov_target_appended(self):
        lm = init_model(VOCAB, NeuralLMConfig(dim=3, seed=4))
        out = augment_embeddings(lm, [AugmentationPlan("new", ("a", "b"), 0.01)])
        assert out.vocab == VOCAB + ("new",)
        mean = (lm.E[lm.index("a")] + lm.E[lm.index("b")]) / 2
        np.testing.assert_allclose(out.E[out.index("new")], mean, atol=1e-15)

    def test_duplicate_targets(self):
        lm = zero_model(VOCAB, NeuralLMConfig(dim=2))
        plans = [AugmentationPlan("t", ("a",), 0.1), AugmentationPlan("t", ("b",), 0.1)]
        with pytest.raises(AugmentationError, match="Duplicate"):
            augment_embeddings(lm, plans)

    def test_missing_candidate(self):
        lm = zero_model(VOCAB, NeuralLMConfig(dim=2))
        with pytest.raises(AugmentationError, match="vocabulary"):
            augment_embeddings(lm, [AugmentationPlan("t", ("zzz",), 0.1)])

    def test_place_context_raises_probability(self):
        corpus = [line.split() for line in TOY_CORPUS.read_text(encoding="utf-8").splitlines() if line.strip()]
        lm = train(corpus, NeuralLMConfig(dim=16, epochs=10, seed=1), extra_words=["pasir_ris"])
        context = "please take me to".split()
        plan = AugmentationPlan("pasir_ris", ("bedok", "jurong", "tampines", "clementi"), 0.01)
        out = augment_embeddings(lm, [plan])

        def prob_after_context(model):
            hidden, logdist = model.start()
            for word in context:
                hidden, logdist = model.step(hidden, word)
            return logdist[model.index("pasir_ris")]

        assert prob_after_context(out) >= prob_after_context(lm)


class TestCandidates:
    def test_frequent_strategy(self):
        counts = {"a": 5, "b": 9, "c": 9, "d": 1, "e": 0}
        mapping = select_candidates({"x": "place"}, {"place": list("abcde")}, counts, k=3)
        assert mapping == {"x": ["b", "c", "a"]}

    def test_random_strategy_is_seeded(self):
        counts = {w: 20 for w in "abcdefgh"}
        args = ({"x": "place"}, {"place": list("abcdefgh")}, counts)
        first = select_candidates(*args, k=3, strategy="random", seed=5)
        assert first == select_candidates(*args, k=3, strategy="random", seed=5)
        assert len(set(first["x"])) == 3

    def test_excludes_self_and_requires_k(self):
        counts = {"a": 3, "x": 50}
        with pytest.raises(AugmentationError, match="1 candidates"):
            select_candidates({"x": "place"}, {"place": ["a", "x"]}, counts, k=2)

    def test_candidate_map_file(self, tmp_path):
        path = tmp_path / "candidates.txt"
        write_candidate_map({"bedok": ["a", "b"], "boon_lay": ["c"]}, path)
        assert path.read_text().splitlines()[0] == "bedok\ta b"
        assert read_candidate_map(path) == {"bedok": ["a", "b"], "boon_lay": ["c"]}

    def test_malformed_candidate_map(self):
        with pytest.raises(AugmentationError, match="line 2"):
            parse_candidate_map("a\tb c\nbroken line\n")

    def test_plan_dump(self):
        text = format_plans([AugmentationPlan("bedok", ("a", "b"), 0.09, "rare")])
        assert "bedok\trare\t0.09\ta b" in text.splitlines()

import numpy as np
import pytest

from spkeval.errors import InputError
from spkeval.io import PairRow
from spkeval.lm import ngram_train
from spkeval.zeroshot import (
    ModelScorer,
    Score,
    TableScorer,
    evaluate,
    pair_accuracy,
    pair_credit,
    read_scores,
    write_scores,
)


def _pairs(n, rng):
    return [PairRow(f"p{i}", f"w{i}", f"n{i}", "a" if rng.random() < 0.5 else "b", bool(i % 3)) for i in range(n)]


class TestHarness:
    def test_credit(self):
        assert (pair_credit(1.0, 0.0), pair_credit(0.0, 0.0), pair_credit(-1.0, 0.0)) == (1.0, 0.5, 0.0)

    def test_oracle_scorer(self):
        pairs = _pairs(50, np.random.default_rng(0))
        truth = {p.true_member for p in pairs}
        assert pair_accuracy(lambda ref: 0.0 if ref in truth else -5.0, pairs)["accuracy"] == 1.0

    def test_constant_scorer(self):
        pairs = _pairs(37, np.random.default_rng(1))
        assert pair_accuracy(lambda ref: -2.0, pairs)["accuracy"] == 0.5

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pairs = _pairs(30, rng)
            # coarse values so ties occur
            raw = {r: float(rng.integers(-5, 5)) for p in pairs for r in (p.member_a, p.member_b)}
            base = pair_accuracy(raw.get, pairs)["accuracy"]
            for f in (lambda v: 3 * v + 1, np.exp, lambda v: v ** 3):
                assert pair_accuracy(lambda r: f(raw[r]), pairs)["accuracy"] == base

    def test_swap_invariance(self):
        rng = np.random.default_rng(3)
        pairs = _pairs(40, rng)
        raw = {r: float(rng.standard_normal()) for p in pairs for r in (p.member_a, p.member_b)}
        swapped = [PairRow(p.pair_id, p.member_b, p.member_a, "b" if p.correct == "a" else "a", p.in_vocab) for p in pairs]
        assert pair_accuracy(raw.get, pairs)["accuracy"] == pair_accuracy(raw.get, swapped)["accuracy"]

    def test_filters_and_normalisation(self):
        pairs = [PairRow("p1", "a", "b", "a", True), PairRow("p2", "c", "d", "a", False)]
        scores = {"a": Score(-4.0, 4), "b": Score(-3.0, 1), "c": Score(-1.0, 1), "d": Score(-2.0, 1)}
        rows = evaluate(TableScorer(scores), pairs)
        assert rows == [
            {"condition": "all", "n_pairs": 2, "accuracy_raw": 0.5, "accuracy_per_token": 1.0},
            {"condition": "in-vocab", "n_pairs": 1, "accuracy_raw": 0.0, "accuracy_per_token": 1.0},
        ]

    def test_per_token_needs_counts(self):
        pairs = [PairRow("p1", "a", "b", "a", True)]
        with pytest.raises(InputError):
            pair_accuracy(lambda r: -1.0, pairs, normalize="per-token")
        assert evaluate(lambda r: -1.0, pairs)[0]["accuracy_per_token"] is None

    def test_missing_score(self):
        with pytest.raises(InputError):
            TableScorer({})("x")


class TestModelScorer:
    def test_prefers_training_pattern(self):
        model = ngram_train([[0, 1, 2, 3]] * 20 + [[3, 2]], order=3)
        seqs = {"real": [0, 0, 1, 2, 3], "fake": [2, 0, 3, 1]}
        scorer = ModelScorer(model, seqs)
        assert scorer("real").n_tokens == 5  # deduplicated, plus EOS
        assert pair_accuracy(scorer, [PairRow("p", "real", "fake", "a", True)])["accuracy"] == 1.0

    def test_unknown_reference(self):
        with pytest.raises(InputError):
            ModelScorer(ngram_train([[0]], order=1), {})("x")


class TestScoreFile:
    def test_round_trip(self, tmp_path):
        scores = {"a": Score(-1.25, 3), "b": Score(-0.5)}
        write_scores(scores, tmp_path / "s.tsv")
        assert read_scores(tmp_path / "s.tsv") == scores

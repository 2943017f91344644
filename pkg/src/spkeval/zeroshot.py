"""Paired zero-shot evaluation (spot-the-word / grammatical-vs-ungrammatical).

A pair is won when the true member scores strictly higher than the other,
half-won on an exact tie.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from . import lm
from .errors import FormatError, InputError
from .io import PairRow, _split_tsv
from .quantize import dedup

NORMALIZATIONS = ("none", "per-token")
FILTERS = ("all", "in-vocab")


@dataclass(frozen=True)
class Score:
    logprob: float
    n_tokens: Optional[int] = None

    def normalized(self, how: str) -> Optional[float]:
        if how == "none":
            return self.logprob
        if self.n_tokens is None:
            return None
        return self.logprob / self.n_tokens


def pair_credit(true_score: float, other_score: float) -> float:
    if true_score > other_score:
        return 1.0
    if true_score == other_score:
        return 0.5
    return 0.0


def pair_accuracy(scorer: Callable[[str], Score], pairs: Sequence[PairRow], normalize: str = "none",
                  filter: str = "all") -> dict:
    """Accuracy of ``scorer`` on ``pairs`` plus a per-pair breakdown.

    ``scorer`` maps a sequence reference to a :class:`Score` (or a bare float
    log-probability, usable only with ``normalize="none"``).
    """
    if normalize not in NORMALIZATIONS:
        raise InputError(f"normalize must be one of {NORMALIZATIONS}, got {normalize!r}")
    if filter not in FILTERS:
        raise InputError(f"filter must be one of {FILTERS}, got {filter!r}")
    selected = [p for p in pairs if filter == "all" or p.in_vocab]
    per_pair = []
    for p in selected:
        s_true = _as_score(scorer(p.true_member)).normalized(normalize)
        s_false = _as_score(scorer(p.false_member)).normalized(normalize)
        if s_true is None or s_false is None:
            raise InputError(f"pair {p.pair_id}: per-token normalisation needs token counts")
        per_pair.append({"pair_id": p.pair_id, "true": s_true, "other": s_false, "credit": pair_credit(s_true, s_false)})
    accuracy = sum(r["credit"] for r in per_pair) / len(per_pair) if per_pair else None
    return {"accuracy": accuracy, "n_pairs": len(per_pair), "pairs": per_pair}


def _as_score(value) -> Score:
    return value if isinstance(value, Score) else Score(float(value))


def evaluate(scorer: Callable[[str], Score], pairs: Sequence[PairRow]) -> List[dict]:
    """Both filters, both normalisations side by side."""
    out = []
    for flt in FILTERS:
        raw = pair_accuracy(scorer, pairs, "none", flt)
        try:
            per_tok = pair_accuracy(scorer, pairs, "per-token", flt)["accuracy"]
        except InputError:
            per_tok = None
        out.append({"condition": flt, "n_pairs": raw["n_pairs"], "accuracy_raw": raw["accuracy"],
                    "accuracy_per_token": per_tok})
    return out


class TableScorer:
    """Scorer backed by precomputed log-probabilities."""

    def __init__(self, scores: Mapping[str, Score]):
        self.scores = dict(scores)

    def __call__(self, ref: str) -> Score:
        try:
            return self.scores[ref]
        except KeyError:
            raise InputError(f"no score for sequence {ref!r}") from None


class ModelScorer:
    """Scores referenced unit sequences with an n-gram model."""

    def __init__(self, model: lm.NGramModel, sequences: Mapping, dedup_units: bool = True):
        self.dedup_units = dedup_units
        self.model = model
        self.sequences = sequences
        self._cache: Dict[str, Score] = {}

    def __call__(self, ref: str) -> Score:
        hit = self._cache.get(ref)
        if hit is None:
            seq = self.sequences.get(ref)
            if seq is None:
                raise InputError(f"unresolvable sequence reference {ref!r}")
            toks = lm._tokens(seq)
            if self.dedup_units:
                toks = dedup(toks)
            hit = Score(lm.sequence_logprob(self.model, toks), lm.n_scored_tokens(toks))
            self._cache[ref] = hit
        return hit


def read_scores(path) -> Dict[str, Score]:
    """TSV of ``sequence_id, logprob[, n_tokens]``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"score file not found: {path}")
    out = {}
    for lineno, cols in _split_tsv(path):
        if len(cols) not in (2, 3):
            raise FormatError(f"line {lineno}: expected 2 or 3 columns, got {len(cols)}", path=path)
        try:
            score = Score(float(cols[1]), int(cols[2]) if len(cols) == 3 else None)
        except ValueError:
            raise FormatError(f"line {lineno}: unparsable score", path=path) from None
        if cols[0] in out:
            raise FormatError(f"line {lineno}: duplicate id {cols[0]!r}", path=path)
        out[cols[0]] = score
    return out


def write_scores(scores: Mapping[str, Score], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ref in sorted(scores):
            s = scores[ref]
            tail = "" if s.n_tokens is None else f"\t{s.n_tokens}"
            f.write(f"{ref}\t{s.logprob!r}{tail}\n")

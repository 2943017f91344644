"""Interpolated absolute-discounting n-gram model over integer unit sequences.

    p_m(w | h) = max(c(h, w) - D, 0) / c(h) + D * N1+(h) / c(h) * p_{m-1}(w | h')

where ``h'`` drops the oldest unit of ``h``, ``N1+(h)`` counts distinct
successors of ``h`` and the recursion bottoms out in a uniform distribution
over the vocabulary. Histories never seen in training defer to the lower
order. Sequences are padded with ``order - 1`` BOS symbols and one EOS.
"""

from __future__ import annotations

import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import FormatError, InputError
from .quantize import UnitSequence, dedup

BOS = -1
EOS = -2
LM_MAGIC = b"SPKL"
LM_VERSION = 1
_LM_HEADER = struct.Struct("<4sIIdI")


def _tokens(seq) -> List[int]:
    if isinstance(seq, UnitSequence):
        return seq.units.tolist()
    return [int(t) for t in seq]


@dataclass
class NGramModel:
    order: int
    discount: float
    vocab: Tuple[int, ...]
    # counts[m - 1][history of length m - 1][unit] for m = 1..order
    counts: List[Dict[Tuple[int, ...], Dict[int, int]]]
    _totals: List[Dict[Tuple[int, ...], Tuple[int, int]]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise InputError(f"order must be >= 1, got {self.order}")
        if not 0.0 < self.discount < 1.0:
            raise InputError(f"discount must lie in (0, 1), got {self.discount}")
        self._totals = [
            {h: (sum(nxt.values()), len(nxt)) for h, nxt in level.items()} for level in self.counts
        ]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def prob(self, unit: int, history: Sequence[int] = ()) -> float:
        """p(unit | history); ``history`` is left-padded with BOS as needed."""
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        h = (BOS,) * (self.order - 1 - len(h)) + h
        p = 1.0 / len(self.vocab)
        d = self.discount
        for m in range(1, self.order + 1):
            ctx = h[len(h) - (m - 1):] if m > 1 else ()
            nxt = self.counts[m - 1].get(ctx)
            if nxt is None:
                continue
            total, types = self._totals[m - 1][ctx]
            p = max(nxt.get(unit, 0) - d, 0.0) / total + d * types / total * p
        return p

    def histories(self) -> List[Tuple[int, ...]]:
        """Every full-order history seen in training."""
        return sorted(self.counts[self.order - 1])


def ngram_train(corpus: Iterable, order: int = 5, discount: float = 0.75, dedup_units: bool = True,
                vocab: Iterable[int] = ()) -> NGramModel:
    """Count n-grams of every order up to ``order`` over the padded corpus."""
    seqs = [_tokens(s) for s in corpus]
    if not seqs:
        raise InputError("empty corpus")
    if dedup_units:
        seqs = [dedup(s) for s in seqs]
    counts: List[Dict] = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
    symbols = set(int(v) for v in vocab)
    symbols.add(EOS)
    for s in seqs:
        symbols.update(s)
        padded = [BOS] * (order - 1) + s + [EOS]
        for i in range(order - 1, len(padded)):
            w = padded[i]
            for m in range(1, order + 1):
                counts[m - 1][tuple(padded[i - m + 1:i])][w] += 1
    if min(symbols - {EOS}, default=0) < 0:
        raise InputError("unit ids must be non-negative (negative ids are reserved for BOS/EOS)")
    frozen = [{h: dict(sorted(nxt.items())) for h, nxt in sorted(level.items())} for level in counts]
    return NGramModel(order, float(discount), tuple(sorted(symbols)), frozen)


def sequence_logprob(m: NGramModel, seq) -> float:
    """Natural-log probability of ``seq`` followed by EOS."""
    toks = _tokens(seq) + [EOS]
    hist = [BOS] * (m.order - 1)
    total = 0.0
    for w in toks:
        total += math.log(m.prob(w, hist))
        if m.order > 1:
            hist = hist[1:] + [w]
    return total


def n_scored_tokens(seq) -> int:
    return len(_tokens(seq)) + 1


def perplexity(m: NGramModel, corpus: Iterable, dedup_units: bool = False) -> float:
    seqs = [_tokens(s) for s in corpus]
    if not seqs:
        raise InputError("empty corpus")
    if dedup_units:
        seqs = [dedup(s) for s in seqs]
    total = sum(sequence_logprob(m, s) for s in seqs)
    n = sum(len(s) + 1 for s in seqs)
    return math.exp(-total / n)


def save_model(m: NGramModel, path) -> None:
    with open(path, "wb") as f:
        f.write(_LM_HEADER.pack(LM_MAGIC, LM_VERSION, m.order, m.discount, len(m.vocab)))
        f.write(np.asarray(m.vocab, dtype="<i8").tobytes())
        for level, table in enumerate(m.counts, start=1):
            rows = [h + (w, c) for h, nxt in sorted(table.items()) for w, c in sorted(nxt.items())]
            arr = np.asarray(rows, dtype="<i8").reshape(len(rows), level + 1)
            f.write(struct.pack("<Q", len(rows)))
            f.write(arr.tobytes())


def load_model(path) -> NGramModel:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"model file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != LM_MAGIC:
        raise FormatError("bad magic, expected b'SPKL'", offset=0, path=path)
    if len(raw) < _LM_HEADER.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    _, version, order, discount, v = _LM_HEADER.unpack_from(raw)
    if version != LM_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    pos = _LM_HEADER.size

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise FormatError("truncated model file", offset=len(raw), path=path)
        chunk = raw[pos:pos + nbytes]
        pos += nbytes
        return chunk

    vocab = tuple(np.frombuffer(take(8 * v), dtype="<i8").tolist())
    counts = []
    for level in range(1, order + 1):
        (n,) = struct.unpack("<Q", take(8))
        arr = np.frombuffer(take(8 * n * (level + 1)), dtype="<i8").reshape(n, level + 1)
        table: Dict[Tuple[int, ...], Dict[int, int]] = {}
        for row in arr.tolist():
            table.setdefault(tuple(row[:level - 1]), {})[row[level - 1]] = row[level]
        counts.append(table)
    if pos != len(raw):
        raise FormatError("trailing bytes after count tables", offset=pos, path=path)
    return NGramModel(order, discount, vocab, counts)


def dump_text(m: NGramModel) -> str:
    """Human-readable listing of all counts."""
    lines = [f"order\t{m.order}", f"discount\t{m.discount!r}", f"vocab\t{' '.join(map(str, m.vocab))}"]
    for level, table in enumerate(m.counts, start=1):
        for h, nxt in sorted(table.items()):
            for w, c in sorted(nxt.items()):
                lines.append(f"{level}\t{' '.join(map(str, h))}\t{w}\t{c}")
    return "\n".join(lines) + "\n"

"""Unit quality (PNMI, cluster/phone purity) and classifier quality (frame accuracy, PER)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from .errors import InputError
from .io import AlignmentTable, _to_frames
from .quantize import UnitSequence, dedup


@dataclass(frozen=True)
class JointTable:
    """Co-occurrence counts of units (rows) and gold phones (columns)."""

    counts: np.ndarray
    units: tuple = ()
    phones: tuple = ()

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2:
            raise InputError(f"joint table must be 2-D, got shape {c.shape}")
        if (c < 0).any():
            raise InputError("joint counts must be non-negative")
        if c.sum() < 1:
            raise InputError("joint table is empty")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        if not self.units:
            object.__setattr__(self, "units", tuple(range(c.shape[0])))
        if not self.phones:
            object.__setattr__(self, "phones", tuple(range(c.shape[1])))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def joint(self) -> np.ndarray:
        return self.counts / self.total


def frame_phones(n_frames: int, frame_rate: float, segments) -> List[str]:
    """Gold phone of every frame: frame i takes the segment in which i/frame_rate falls.

    Sub-frame segments own no frame here. Frames not covered by any segment are an error.
    """
    labels: List = [None] * n_frames
    for seg in segments:
        start = math.ceil(_to_frames(seg.onset, frame_rate))
        stop = min(math.ceil(_to_frames(seg.offset, frame_rate)), n_frames)
        for i in range(start, stop):
            labels[i] = seg.phone
    missing = [i for i, lab in enumerate(labels) if lab is None]
    if missing:
        raise InputError(f"frame {missing[0]} ({missing[0] / frame_rate:.3f}s) lies outside every aligned segment")
    return labels


def joint_counts(units: Iterable[UnitSequence], align: AlignmentTable) -> JointTable:
    """Count (unit, gold phone) frame co-occurrences over all utterances."""
    pairs = {}
    for seq in sorted(units, key=lambda s: s.utterance_id):
        segs = align.get(seq.utterance_id)
        if segs is None:
            raise InputError(f"utterance {seq.utterance_id!r} missing from alignment")
        try:
            phones = frame_phones(len(seq), seq.frame_rate, segs)
        except InputError as exc:
            raise InputError(f"{seq.utterance_id}: {exc}") from None
        for u, p in zip(seq.units.tolist(), phones):
            pairs[(u, p)] = pairs.get((u, p), 0) + 1
    if not pairs:
        raise InputError("no frames to count")
    unit_ids = sorted({u for u, _ in pairs})
    phone_ids = sorted({p for _, p in pairs})
    ui = {u: i for i, u in enumerate(unit_ids)}
    pi = {p: i for i, p in enumerate(phone_ids)}
    counts = np.zeros((len(unit_ids), len(phone_ids)), dtype=np.int64)
    for (u, p), n in pairs.items():
        counts[ui[u], pi[p]] = n
    return JointTable(counts, tuple(unit_ids), tuple(phone_ids))


def phone_purity(t: JointTable) -> float:
    """Expected probability of the majority phone within a unit."""
    return float(t.counts.max(axis=1).sum() / t.total)


def cluster_purity(t: JointTable) -> float:
    """Expected probability of the majority unit within a phone."""
    return float(t.counts.max(axis=0).sum() / t.total)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def pnmi(t: JointTable) -> float:
    """Mutual information between units and phones divided by the phone entropy."""
    pxy = t.joint
    h_phone = _entropy(pxy.sum(axis=0))
    if h_phone == 0.0:
        raise InputError("PNMI undefined: phone entropy is zero (single phone)")
    h_unit = _entropy(pxy.sum(axis=1))
    h_joint = _entropy(pxy.ravel())
    mi = h_unit + h_phone - h_joint
    # clamp rounding noise at the ends of the range
    return float(min(max(mi / h_phone, 0.0), 1.0))


def frame_accuracy(pred: Sequence, gold: Sequence) -> float:
    pred, gold = list(pred), list(gold)
    if len(pred) != len(gold):
        raise InputError(f"length mismatch: {len(pred)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise InputError("empty label sequences")
    return sum(p == g for p, g in zip(pred, gold)) / len(gold)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def phone_error_rate(pred: Sequence, gold: Sequence, collapse_gold: bool = True) -> float:
    """Edit distance between collapsed predictions and gold, over gold length."""
    gold = dedup(list(gold)) if collapse_gold else list(gold)
    if not gold:
        raise InputError("gold sequence is empty")
    return edit_distance(dedup(list(pred)), gold) / len(gold)


def corpus_per(pairs: Iterable[tuple], collapse_gold: bool = True) -> dict:
    """Total edits over total reference length across (pred, gold) pairs."""
    edits = ref = 0
    for pred, gold in pairs:
        g = dedup(list(gold)) if collapse_gold else list(gold)
        if not g:
            raise InputError("gold sequence is empty")
        edits += edit_distance(dedup(list(pred)), g)
        ref += len(g)
    if ref == 0:
        raise InputError("no sequences")
    return {"per": edits / ref, "edits": edits, "ref_length": ref}


def metrics_report(t: JointTable) -> List[dict]:
    common = {"n_frames": t.total, "n_units": len(t.units), "n_phones": len(t.phones)}
    return [
        {"metric": "pnmi", "value": pnmi(t), **common},
        {"metric": "cluster_purity", "value": cluster_purity(t), **common},
        {"metric": "phone_purity", "value": phone_purity(t), **common},
    ]

"""ABX discriminability: items, condition cells, cell scores and error-rate reports.

Four task conditions are supported:

``triphone-within-spk``
    tokens are triphones; A, B and X share a speaker and A/B differ only in
    the central phone.
``triphone-across-spk``
    as above, but X comes from a speaker other than the one of A and B.
``phone-within-ctx``
    tokens are single phones sharing their preceding and following phone.
``phone-any-ctx``
    tokens are single phones, context unconstrained.

Phone tasks are scored with X both from the A/B speaker and from other
speakers; the condition score is the mean of the two.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import distance
from .errors import FormatError, InputError
from .io import AlignmentTable, FeatureSequence, _split_tsv, segment_frame_range

BOUNDARY = "#"
TASKS = ("triphone-within-spk", "triphone-across-spk", "phone-within-ctx", "phone-any-ctx")
DEFAULT_CELL_CAP = 20

_SPEAKER_MODES = {
    "triphone-within-spk": ("within",),
    "triphone-across-spk": ("across",),
    "phone-within-ctx": ("within", "across"),
    "phone-any-ctx": ("within", "across"),
}


def task_span(task: str) -> str:
    check_task(task)
    return "triphone" if task.startswith("triphone") else "phone"


def check_task(task: str) -> None:
    if task not in TASKS:
        raise InputError(f"unknown ABX task {task!r}; expected one of {', '.join(TASKS)}")


@dataclass(frozen=True, order=True)
class Item:
    utterance_id: str
    onset: float
    offset: float
    center: str
    prev: str
    next: str
    speaker: str
    span: str = "phone"

    @property
    def context(self) -> Tuple[str, str]:
        return (self.prev, self.next)


def extract_items(align: AlignmentTable, span: str = "triphone") -> List[Item]:
    """One item per phone occurrence, or per interior phone for triphone spans."""
    if span not in ("phone", "triphone"):
        raise InputError(f"span must be 'phone' or 'triphone', got {span!r}")
    items = []
    for utt in sorted(align):
        segs = align[utt]
        for i, seg in enumerate(segs):
            prev = segs[i - 1].phone if i > 0 else BOUNDARY
            nxt = segs[i + 1].phone if i + 1 < len(segs) else BOUNDARY
            if span == "phone":
                items.append(Item(utt, seg.onset, seg.offset, seg.phone, prev, nxt, seg.speaker, "phone"))
            elif 0 < i < len(segs) - 1:
                items.append(
                    Item(utt, segs[i - 1].onset, segs[i + 1].offset, seg.phone, prev, nxt, seg.speaker, "triphone")
                )
    return items


def read_items(path, span: str = "triphone") -> List[Item]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"item file not found: {path}")
    items = []
    for lineno, cols in _split_tsv(path):
        if len(cols) != 7:
            raise FormatError(f"line {lineno}: expected 7 columns, got {len(cols)}", path=path)
        utt, onset, offset, center, prev, nxt, spk = cols
        try:
            onset_f, offset_f = float(onset), float(offset)
        except ValueError:
            raise FormatError(f"line {lineno}: onset/offset are not numbers", path=path) from None
        if not offset_f > onset_f:
            raise FormatError(f"line {lineno}: offset <= onset", path=path)
        items.append(Item(utt, onset_f, offset_f, center, prev, nxt, spk, span))
    return items


def write_items(items: Iterable[Item], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for it in items:
            f.write(f"{it.utterance_id}\t{it.onset!r}\t{it.offset!r}\t{it.center}\t{it.prev}\t{it.next}\t{it.speaker}\n")


@dataclass(frozen=True)
class Cell:
    task: str
    speaker_mode: str
    label_a: str
    label_b: str
    context: Tuple[str, ...]
    speaker: str
    tokens_a: Tuple[Item, ...]
    tokens_b: Tuple[Item, ...]
    tokens_x: Tuple[Item, ...]

    @property
    def contrast(self) -> Tuple:
        """Unordered contrast this cell belongs to."""
        pair = tuple(sorted((self.label_a, self.label_b)))
        if self.task.startswith("triphone"):
            return self.context + pair
        return pair

    @property
    def shared_key(self) -> Tuple:
        if self.task == "phone-within-ctx":
            return self.context + (self.speaker,)
        return (self.speaker,)

    @property
    def key(self) -> Tuple:
        return (self.speaker_mode, self.contrast, self.shared_key, self.label_a, self.label_b)

    def describe(self) -> str:
        ctx = "-".join(self.context) if self.context else "*"
        return f"{self.speaker_mode}|{ctx}|{self.label_a}|{self.label_b}|{self.speaker}"


class CellList(list):
    """List of cells that also remembers how many candidate cells were skipped."""

    def __init__(self, cells=(), n_skipped=None):
        super().__init__(cells)
        self.n_skipped = dict(n_skipped or {})


def _subsample(tokens: List[Item], cap: Optional[int], seed: int, tag: str) -> Tuple[Item, ...]:
    tokens = sorted(tokens)
    if cap is None or len(tokens) <= cap:
        return tuple(tokens)
    digest = hashlib.sha256(f"{seed}|{tag}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    keep = np.sort(rng.choice(len(tokens), size=cap, replace=False))
    return tuple(tokens[i] for i in keep)


def build_cells(items: Sequence[Item], task: str, cap: Optional[int] = DEFAULT_CELL_CAP, seed: int = 0) -> CellList:
    """Enumerate every ABX cell of ``task`` over ``items``, in deterministic order.

    Token lists longer than ``cap`` are subsampled with an RNG keyed on the
    global seed and the cell identity, so results do not depend on item order.
    """
    check_task(task)
    span = task_span(task)
    use_context = task != "phone-any-ctx"
    # (context, center, speaker) -> tokens
    groups: Dict[Tuple, List[Item]] = defaultdict(list)
    for it in items:
        if span == "triphone" and (it.prev == BOUNDARY or it.next == BOUNDARY):
            continue
        ctx = it.context if use_context else ()
        groups[(ctx, it.center, it.speaker)].append(it)

    by_context: Dict[Tuple, Dict[str, Dict[str, List[Item]]]] = defaultdict(lambda: defaultdict(dict))
    for (ctx, center, spk), toks in groups.items():
        by_context[ctx][center][spk] = toks

    cells = []
    skipped = {m: 0 for m in _SPEAKER_MODES[task]}
    for ctx in sorted(by_context):
        centers = by_context[ctx]
        for ca, cb in permutations(sorted(centers), 2):
            if span == "triphone":
                label_a, label_b = f"{ctx[0]}-{ca}-{ctx[1]}", f"{ctx[0]}-{cb}-{ctx[1]}"
            else:
                label_a, label_b = ca, cb
            speakers = sorted(set(centers[ca]) | set(centers[cb]))
            for mode in _SPEAKER_MODES[task]:
                for spk in speakers:
                    a = centers[ca].get(spk, [])
                    b = centers[cb].get(spk, [])
                    if mode == "within":
                        ok = len(a) >= 2 and len(b) >= 1
                        x = None
                    else:
                        x = [t for s, toks in centers[ca].items() if s != spk for t in toks]
                        ok = len(a) >= 1 and len(b) >= 1 and len(x) >= 1
                    if not ok:
                        skipped[mode] += 1
                        continue
                    tag = f"{task}|{mode}|{'/'.join(ctx)}|{ca}|{cb}|{spk}"
                    ta = _subsample(a, cap, seed, tag + "|A")
                    tb = _subsample(b, cap, seed, tag + "|B")
                    tx = ta if x is None else _subsample(x, cap, seed, tag + "|X")
                    cells.append(Cell(task, mode, label_a, label_b, ctx, spk, ta, tb, tx))
    cells.sort(key=lambda c: c.key)
    return CellList(cells, skipped)


class TokenFrames:
    """Resolves items to unit-normalised frame matrices, caching per token."""

    def __init__(self, features: Mapping[str, FeatureSequence]):
        self.features = features
        self._cache: Dict[Item, np.ndarray] = {}

    def raw(self, item: Item) -> FeatureSequence:
        seq = self.features.get(item.utterance_id)
        if seq is None:
            raise InputError(f"no features for token {item.utterance_id}:{item.onset}-{item.offset} ({item.center})")
        try:
            start, stop = segment_frame_range(seq.n_frames, seq.frame_rate, item.onset, item.offset)
        except InputError as exc:
            raise InputError(f"token {item.utterance_id}:{item.onset}-{item.offset}: {exc}") from None
        return FeatureSequence(seq.data[start:stop], seq.frame_rate, seq.utterance_id)

    def normalized(self, item: Item) -> np.ndarray:
        out = self._cache.get(item)
        if out is None:
            frames = np.asarray(self.raw(item).data, dtype=np.float64)
            out, bad = distance._normalize_rows(frames)
            if bad >= 0:
                raise InputError(
                    f"zero-norm frame in token {item.utterance_id}:{item.onset}-{item.offset} ({item.center})"
                )
            self._cache[item] = out
        return out

    def prefetch(self, items: Iterable[Item]) -> None:
        for it in items:
            self.normalized(it)


def _pair_distance(frames: TokenFrames, dist, u: Item, v: Item) -> float:
    if dist is None:
        return float(distance.dtw_mean_cost(distance._angular_cost(frames.normalized(u), frames.normalized(v))))
    return float(dist(frames.raw(u), frames.raw(v)))


def score_cell(cell: Cell, features, dist: Optional[Callable] = None) -> float:
    """Fraction of (a, b, x) triplets where x is closer to a than to b; ties count 0.5.

    ``features`` maps utterance ids to sequences (or is a :class:`TokenFrames`).
    ``dist`` defaults to the DTW-aligned angular distance.
    """
    frames = features if isinstance(features, TokenFrames) else TokenFrames(features)
    xs, as_, bs = cell.tokens_x, cell.tokens_a, cell.tokens_b
    d_xa = np.array([[_pair_distance(frames, dist, x, a) for a in as_] for x in xs])
    d_xb = np.array([[_pair_distance(frames, dist, x, b) for b in bs] for x in xs])
    # per (x, a, b): 1 if closer to a, 0.5 on tie
    wins = (d_xa[:, :, None] < d_xb[:, None, :]).astype(np.float64)
    wins += 0.5 * (d_xa[:, :, None] == d_xb[:, None, :])
    if cell.speaker_mode == "within":
        # X is A; drop x == a
        mask = ~np.eye(len(xs), dtype=bool)
        total = wins.sum(axis=2)[mask].sum()
        n = mask.sum() * len(bs)
    else:
        total = wins.sum()
        n = wins.size
    return float(total / n)


def score_cells(cells: Sequence[Cell], features, dist=None, threads: int = 1) -> List[float]:
    """Score cells, optionally on a thread pool; output order always follows ``cells``."""
    frames = features if isinstance(features, TokenFrames) else TokenFrames(features)
    # fill the cache up front so worker threads only read it
    if dist is None:
        frames.prefetch(t for c in cells for t in (*c.tokens_a, *c.tokens_b, *c.tokens_x))
    if threads <= 1 or len(cells) < 2:
        return [score_cell(c, frames, dist) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: score_cell(c, frames, dist), cells))


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


@dataclass
class ModeResult:
    speaker_mode: str
    score: float
    n_cells: int
    n_skipped: int
    contrast_scores: Dict[str, float]
    cell_scores: Dict[str, float]

    @property
    def error(self) -> float:
        return 1.0 - self.score


@dataclass
class TaskResult:
    task: str
    score: float
    modes: Dict[str, ModeResult]
    n_items: int = 0

    @property
    def error(self) -> float:
        return 1.0 - self.score

    @property
    def n_cells(self) -> int:
        return sum(m.n_cells for m in self.modes.values())

    def to_dict(self, include_cells: bool = True) -> dict:
        out = {
            "task": self.task,
            "error": self.error,
            "score": self.score,
            "n_items": self.n_items,
            "n_cells": self.n_cells,
            "speaker_modes": {},
        }
        for name, m in self.modes.items():
            entry = {
                "error": m.error,
                "score": m.score,
                "n_cells": m.n_cells,
                "n_skipped": m.n_skipped,
                "n_contrasts": len(m.contrast_scores),
                "contrasts": m.contrast_scores,
            }
            if include_cells:
                entry["cells"] = m.cell_scores
            out["speaker_modes"][name] = entry
        return out


def _contrast_name(contrast: Tuple) -> str:
    return "|".join(contrast)


def abx_error_rate(cells: Sequence[Cell], scores: Sequence[float], n_skipped: Optional[Mapping[str, int]] = None,
                   n_items: int = 0) -> TaskResult:
    """Aggregate cell scores: ordered cells -> symmetrised contrast per shared key
    -> unordered contrast -> speaker mode -> condition. All means are unweighted."""
    if len(cells) != len(scores):
        raise InputError(f"{len(cells)} cells but {len(scores)} scores")
    if not cells:
        raise InputError("no cells: nothing to score for this task (check items and minimum counts)")
    tasks = {c.task for c in cells}
    if len(tasks) != 1:
        raise InputError(f"cells from several tasks: {sorted(tasks)}")
    task = tasks.pop()
    n_skipped = n_skipped or {}

    per_mode: Dict[str, Dict] = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    cell_scores: Dict[str, Dict[str, float]] = defaultdict(dict)
    for cell, s in sorted(zip(cells, scores), key=lambda cs: cs[0].key):
        per_mode[cell.speaker_mode][cell.contrast][cell.shared_key].append(s)
        cell_scores[cell.speaker_mode][cell.describe()] = s

    modes = {}
    for mode in _SPEAKER_MODES[task]:
        contrasts = per_mode.get(mode)
        if not contrasts:
            continue
        contrast_scores = {}
        for contrast in sorted(contrasts):
            shared = contrasts[contrast]
            contrast_scores[_contrast_name(contrast)] = _mean([_mean(shared[k]) for k in sorted(shared)])
        modes[mode] = ModeResult(
            mode,
            _mean([contrast_scores[k] for k in contrast_scores]),
            sum(len(v) for sh in contrasts.values() for v in sh.values()),
            n_skipped.get(mode, 0),
            contrast_scores,
            cell_scores[mode],
        )
    score = _mean([m.score for m in modes.values()])
    return TaskResult(task, score, modes, n_items)


def evaluate_task(items: Sequence[Item], features, task: str, cap: Optional[int] = DEFAULT_CELL_CAP,
                  seed: int = 0, threads: int = 1, dist=None) -> TaskResult:
    """extract -> build cells -> score -> aggregate for one task on one dataset."""
    cells = build_cells(items, task, cap=cap, seed=seed)
    scores = score_cells(cells, features, dist=dist, threads=threads)
    return abx_error_rate(cells, scores, cells.n_skipped, n_items=len(items))


@dataclass
class ABXReport:
    """Per-dataset task results plus the unweighted cross-dataset average."""

    datasets: Dict[str, Dict[str, TaskResult]] = field(default_factory=dict)

    def add(self, dataset: str, result: TaskResult) -> None:
        self.datasets.setdefault(dataset, {})[result.task] = result

    def average(self) -> Dict[str, dict]:
        out = {}
        tasks = sorted({t for res in self.datasets.values() for t in res})
        for task in tasks:
            present = [self.datasets[d][task] for d in sorted(self.datasets) if task in self.datasets[d]]
            score = _mean([r.score for r in present])
            out[task] = {"error": 1.0 - score, "score": score, "n_datasets": len(present)}
        triphone = [out[t]["score"] for t in ("triphone-within-spk", "triphone-across-spk") if t in out]
        if len(triphone) == 2:
            out["triphone"] = {"error": 1.0 - _mean(triphone), "score": _mean(triphone), "n_datasets": None}
        return out

    def to_dict(self, include_cells: bool = True) -> dict:
        return {
            "datasets": {
                d: {t: r.to_dict(include_cells) for t, r in sorted(res.items())}
                for d, res in sorted(self.datasets.items())
            },
            "average": self.average(),
        }

    def rows(self) -> List[dict]:
        """Flat rows, one per aggregation node, for CSV output."""
        rows = []
        for d in sorted(self.datasets):
            for t in sorted(self.datasets[d]):
                r = self.datasets[d][t]
                for mname, m in r.modes.items():
                    for k, s in m.cell_scores.items():
                        rows.append(dict(level="cell", dataset=d, task=t, speaker_mode=mname, node=k, score=s, error=1.0 - s))
                    for k, s in m.contrast_scores.items():
                        rows.append(dict(level="contrast", dataset=d, task=t, speaker_mode=mname, node=k, score=s, error=1.0 - s))
                    rows.append(dict(level="speaker_mode", dataset=d, task=t, speaker_mode=mname, node=mname, score=m.score, error=m.error))
                rows.append(dict(level="task", dataset=d, task=t, speaker_mode="", node=t, score=r.score, error=r.error))
        for t, v in self.average().items():
            rows.append(dict(level="average", dataset="", task=t, speaker_mode="", node=t, score=v["score"], error=v["error"]))
        return rows


CSV_FIELDS = ("level", "dataset", "task", "speaker_mode", "node", "score", "error")

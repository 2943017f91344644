"""k-means codebooks, unit assignment and the centroid / one-hot representations.

Assignment uses exact squared-Euclidean distances (no ``|x|^2 - 2x.c + |c|^2``
expansion) so ties resolve to the lowest index and zero distances stay zero.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numba as nb
import numpy as np

from .errors import FormatError, InputError, InvariantError
from .io import FeatureSequence, _split_tsv

log = logging.getLogger(__name__)

CODEBOOK_MAGIC = b"SPKC"
CODEBOOK_VERSION = 1
_CB_HEADER = struct.Struct("<4sIIIQd")

# fixed so that results do not depend on the number of threads
ASSIGN_CHUNK = 4096


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    seed: int = 0
    final_inertia: float = 0.0
    iterations_run: int = 0
    inertia_history: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise InputError(f"centroids must be a non-empty k x dim matrix, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("non-finite centroid")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @classmethod
    def identity(cls, dim: int) -> "Codebook":
        """One centroid per basis direction; assigning logits to it labels frames by class."""
        return cls(np.eye(dim))


@dataclass(frozen=True)
class UnitSequence:
    units: np.ndarray
    frame_rate: float = 50.0
    utterance_id: str = ""

    def __post_init__(self):
        u = np.array(self.units, dtype=np.int64).ravel()
        u.flags.writeable = False
        object.__setattr__(self, "units", u)

    def __len__(self):
        return self.units.shape[0]

    def tolist(self) -> List[int]:
        return self.units.tolist()


@nb.njit(nogil=True, cache=True)
def _assign_block(x, c, labels, dists):
    n, d = x.shape
    k = c.shape[0]
    for i in range(n):
        best = np.inf
        best_j = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - c[j, t]
                s += diff * diff
            if s < best:
                best = s
                best_j = j
        labels[i] = best_j
        dists[i] = best


@nb.njit(nogil=True, cache=True)
def _cluster_sums(x, labels, k):
    n, d = x.shape
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    # sequential in sample order: bit-reproducible
    for i in range(n):
        j = labels[i]
        counts[j] += 1
        for t in range(d):
            sums[j, t] += x[i, t]
    return sums, counts


def _assign(x: np.ndarray, c: np.ndarray, threads: int = 1):
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    bounds = [(s, min(s + ASSIGN_CHUNK, n)) for s in range(0, n, ASSIGN_CHUNK)]

    def run(b):
        _assign_block(x[b[0]:b[1]], c, labels[b[0]:b[1]], dists[b[0]:b[1]])

    if threads <= 1 or len(bounds) == 1:
        for b in bounds:
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, bounds))
    return labels, dists


def _check_samples(samples) -> np.ndarray:
    x = np.ascontiguousarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.size == 0:
        raise InputError(f"samples must be a non-empty 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite values in k-means samples")
    return x


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator, threads: int) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    _, closest = _assign(x, x[chosen], threads)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # fewer distinct points than clusters
            idx = int(rng.integers(n))
        chosen.append(idx)
        _, d_new = _assign(x, x[idx:idx + 1], threads)
        np.minimum(closest, d_new, out=closest)
    return x[chosen].copy()


def kmeans_fit(samples, k: int, seed: int = 0, max_iter: int = 300, rel_tol: float = 1e-6,
               threads: int = 1) -> Codebook:
    """k-means++ initialisation followed by Lloyd iterations.

    Stops after ``max_iter`` iterations or when the relative inertia
    improvement drops below ``rel_tol``. An emptied cluster is moved onto the
    sample farthest from its current centroid.
    """
    x = _check_samples(samples)
    n = x.shape[0]
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if n < k:
        raise InputError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng, threads)

    labels, dists = _assign(x, centroids, threads)
    inertia = float(dists.sum())
    history = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        sums, counts = _cluster_sums(x, labels, k)
        new = centroids.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # farthest points from their centroids, one per empty cluster
            order = np.argsort(-dists, kind="stable")
            for j, idx in zip(empty, order):
                new[j] = x[idx]
                dists[idx] = 0.0
        centroids = new
        labels, dists = _assign(x, centroids, threads)
        new_inertia = float(dists.sum())
        if new_inertia > inertia * (1 + 1e-12):
            raise InvariantError(f"k-means inertia increased at iteration {it}: {inertia} -> {new_inertia}")
        history.append(new_inertia)
        improvement = inertia - new_inertia
        inertia = new_inertia
        if inertia == 0.0 or improvement <= rel_tol * history[-2]:
            break
    log.info("k-means k=%d converged after %d iterations, inertia %.6g", k, it, inertia)
    return Codebook(centroids, seed=seed, final_inertia=inertia, iterations_run=it, inertia_history=tuple(history))


def assign(cb: Codebook, seq, threads: int = 1) -> UnitSequence:
    """Nearest-centroid unit of every frame (ties go to the lowest index)."""
    data = seq.data if isinstance(seq, FeatureSequence) else seq
    x = _check_samples(data)
    if x.shape[1] != cb.dim:
        raise InputError(f"dimension mismatch: features have {x.shape[1]}, codebook has {cb.dim}")
    labels, _ = _assign(x, np.ascontiguousarray(cb.centroids), threads)
    if isinstance(seq, FeatureSequence):
        return UnitSequence(labels, seq.frame_rate, seq.utterance_id)
    return UnitSequence(labels)


def argmax_units(seq: FeatureSequence) -> UnitSequence:
    """Label each frame with its highest-scoring dimension (logit features)."""
    return UnitSequence(np.argmax(seq.data, axis=1), seq.frame_rate, seq.utterance_id)


def _check_units(units: UnitSequence, k: int) -> np.ndarray:
    u = units.units
    if u.size and (u.min() < 0 or u.max() >= k):
        bad = int(u[(u < 0) | (u >= k)][0])
        raise InputError(f"unit {bad} out of range for k={k}")
    return u


def centroid_features(cb: Codebook, units: UnitSequence) -> FeatureSequence:
    u = _check_units(units, cb.k)
    return FeatureSequence(cb.centroids[u], units.frame_rate, units.utterance_id)


def one_hot_features(units: UnitSequence, k: int) -> FeatureSequence:
    u = _check_units(units, k)
    out = np.zeros((u.shape[0], k), dtype=np.float32)
    out[np.arange(u.shape[0]), u] = 1.0
    return FeatureSequence(out, units.frame_rate, units.utterance_id)


def dedup(units):
    """Collapse runs of identical consecutive labels. Works on UnitSequence or any sequence."""
    if isinstance(units, UnitSequence):
        u = units.units
        if u.size == 0:
            return units
        keep = np.ones(u.shape[0], dtype=bool)
        keep[1:] = u[1:] != u[:-1]
        return UnitSequence(u[keep], units.frame_rate, units.utterance_id)
    out = []
    for lab in units:
        if not out or out[-1] != lab:
            out.append(lab)
    return out


def write_codebook(cb: Codebook, path) -> None:
    header = _CB_HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, cb.k, cb.dim, cb.seed, cb.final_inertia)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def read_codebook(path) -> Codebook:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"codebook not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != CODEBOOK_MAGIC:
        raise FormatError("bad magic, expected b'SPKC'", offset=0, path=path)
    if len(raw) < _CB_HEADER.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    _, version, k, dim, seed, inertia = _CB_HEADER.unpack_from(raw)
    if version != CODEBOOK_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    expected = _CB_HEADER.size + 4 * k * dim
    if len(raw) != expected:
        raise FormatError(f"payload size {len(raw) - _CB_HEADER.size}, expected {4 * k * dim}",
                          offset=min(len(raw), expected), path=path)
    c = np.frombuffer(raw, dtype="<f4", offset=_CB_HEADER.size).reshape(k, dim)
    return Codebook(c.astype(np.float64), seed=seed, final_inertia=inertia)


def write_units(seqs: Iterable[UnitSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sorted(seqs, key=lambda s: s.utterance_id):
            f.write(f"{s.utterance_id}\t{' '.join(map(str, s.units.tolist()))}\n")


def read_units(path, frame_rate: float = 50.0) -> Dict[str, UnitSequence]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"unit file not found: {path}")
    out = {}
    for lineno, cols in _split_tsv(path):
        if len(cols) not in (1, 2):
            raise FormatError(f"line {lineno}: expected 2 columns, got {len(cols)}", path=path)
        utt = cols[0]
        body = cols[1] if len(cols) == 2 else ""
        try:
            units = [int(t) for t in body.split()]
        except ValueError:
            raise FormatError(f"line {lineno}: units must be integers", path=path) from None
        if utt in out:
            raise FormatError(f"line {lineno}: duplicate id {utt!r}", path=path)
        out[utt] = UnitSequence(units, frame_rate, utt)
    return out


def stack_features(seqs: Sequence[FeatureSequence]) -> np.ndarray:
    if not seqs:
        raise InputError("no feature sequences to stack")
    dims = {s.dim for s in seqs}
    if len(dims) != 1:
        raise InputError(f"feature dimensions differ across utterances: {sorted(dims)}")
    return np.concatenate([np.asarray(s.data, dtype=np.float64) for s in seqs], axis=0)

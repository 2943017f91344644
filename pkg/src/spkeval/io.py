"""Readers and writers for feature files, alignments, manifests and pair lists.

Feature file layout (little-endian)::

    offset  size  field
    0       4     magic b"SPKF"
    4       4     u32 version (= 1)
    8       4     u32 n_frames
    12      4     u32 dim
    16      8     f64 frame_rate (Hz)
    24      4*n*d f32 payload, row-major

Alignment, manifest and pair files are tab-separated text without header.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple

import numpy as np

from .errors import FormatError, InputError

FEATURE_MAGIC = b"SPKF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIIId")
MANIFEST_NAME = "manifest.tsv"

# Alignment times are decimal strings; absorb float noise before rounding to frames.
_TIME_DECIMALS = 6


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major frame matrix of one utterance, stored as read-only float32."""

    data: np.ndarray
    frame_rate: float
    utterance_id: str = ""

    def __post_init__(self):
        with np.errstate(over="ignore"):
            data = np.array(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise InputError(f"feature matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InputError(f"feature matrix must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError(f"non-finite values in features of {self.utterance_id!r}")
        if not (math.isfinite(self.frame_rate) and self.frame_rate > 0):
            raise InputError(f"frame_rate must be positive, got {self.frame_rate}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def with_data(self, data) -> "FeatureSequence":
        return FeatureSequence(data, self.frame_rate, self.utterance_id)


def write_feature_file(seq: FeatureSequence, path) -> None:
    data = np.asarray(seq.data)
    if data.size == 0:
        raise InputError("cannot write an empty feature matrix")
    if not np.all(np.isfinite(data)):
        raise InputError(f"{seq.utterance_id!r}: refusing to write non-finite values")
    payload = np.ascontiguousarray(data, dtype="<f4")
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, data.shape[0], data.shape[1], seq.frame_rate)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes(order="C"))


def read_feature_file(path, utterance_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise FormatError("bad magic, expected b'SPKF'", offset=0, path=path)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    _, version, n_frames, dim, frame_rate = _HEADER.unpack_from(raw, 0)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4, path=path)
    if n_frames < 1:
        raise FormatError("n_frames must be >= 1", offset=8, path=path)
    if dim < 1:
        raise FormatError("dim must be >= 1", offset=12, path=path)
    if not (math.isfinite(frame_rate) and frame_rate > 0):
        raise FormatError(f"invalid frame_rate {frame_rate}", offset=16, path=path)
    expected = _HEADER.size + 4 * n_frames * dim
    if len(raw) < expected:
        # offset of the first frame that is not fully present
        row_bytes = 4 * dim
        complete_rows = (len(raw) - _HEADER.size) // row_bytes
        raise FormatError(
            f"truncated payload: header declares {n_frames}x{dim} but file has {len(raw)} of {expected} bytes",
            offset=_HEADER.size + complete_rows * row_bytes,
            path=path,
        )
    if len(raw) > expected:
        raise FormatError(
            f"{len(raw) - expected} trailing bytes after {n_frames}x{dim} payload (dim mismatch with header?)",
            offset=expected,
            path=path,
        )
    data = np.frombuffer(raw, dtype="<f4", count=n_frames * dim, offset=_HEADER.size).reshape(n_frames, dim)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError("non-finite value in payload", offset=_HEADER.size + 4 * int(bad[0]), path=path)
    if utterance_id is None:
        utterance_id = path.stem
    return FeatureSequence(data, frame_rate, utterance_id)


def _split_tsv(path) -> Iterable[tuple[int, List[str]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_manifest(path) -> Dict[str, Path]:
    """Map utterance ids to feature file paths (resolved against the manifest's directory)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    out: Dict[str, Path] = {}
    for lineno, cols in _split_tsv(path):
        if len(cols) != 2:
            raise FormatError(f"line {lineno}: expected 2 columns, got {len(cols)}", path=path)
        utt, rel = cols
        if utt in out:
            raise FormatError(f"line {lineno}: duplicate utterance id {utt!r}", path=path)
        out[utt] = path.parent / rel
    return out


def write_manifest(entries: Dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(entries):
            f.write(f"{utt}\t{entries[utt]}\n")


def load_feature_dir(directory) -> Dict[str, FeatureSequence]:
    """Load every sequence listed in ``directory/manifest.tsv``."""
    directory = Path(directory)
    manifest = read_manifest(directory / MANIFEST_NAME)
    out = {}
    for utt, fpath in manifest.items():
        if not fpath.is_file():
            raise InputError(f"feature file for {utt!r} not found: {fpath}")
        out[utt] = read_feature_file(fpath, utterance_id=utt)
    return out


def save_feature_dir(seqs: Iterable[FeatureSequence], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for seq in seqs:
        rel = f"{seq.utterance_id}.spkf"
        write_feature_file(seq, directory / rel)
        entries[seq.utterance_id] = rel
    write_manifest(entries, directory / MANIFEST_NAME)


class Segment(NamedTuple):
    utterance_id: str
    onset: float
    offset: float
    phone: str
    speaker: str


class AlignmentTable(dict):
    """Utterance id -> onset-sorted list of non-overlapping :class:`Segment`."""

    @classmethod
    def from_rows(cls, rows: Iterable[Segment]) -> "AlignmentTable":
        table = cls()
        for row in rows:
            if not row.offset > row.onset:
                raise InputError(
                    f"{row.utterance_id}: offset {row.offset} <= onset {row.onset} for phone {row.phone!r}"
                )
            table.setdefault(row.utterance_id, []).append(row)
        for utt, segs in table.items():
            # stable: equal onsets keep file order
            segs.sort(key=lambda s: s.onset)
            for prev, cur in zip(segs, segs[1:]):
                if cur.onset < prev.offset:
                    raise InputError(
                        f"{utt}: overlapping segments {prev.onset}-{prev.offset} and {cur.onset}-{cur.offset}"
                    )
        return table

    def rows(self) -> List[Segment]:
        return [s for utt in self for s in self[utt]]

    @property
    def phones(self) -> List[str]:
        return sorted({s.phone for segs in self.values() for s in segs})


def read_alignment(path) -> AlignmentTable:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"alignment file not found: {path}")
    rows = []
    for lineno, cols in _split_tsv(path):
        if len(cols) != 5:
            raise FormatError(f"line {lineno}: expected 5 columns, got {len(cols)}", path=path)
        utt, onset, offset, phone, speaker = cols
        try:
            rows.append(Segment(utt, float(onset), float(offset), phone, speaker))
        except ValueError:
            raise FormatError(f"line {lineno}: onset/offset are not numbers", path=path) from None
    return AlignmentTable.from_rows(rows)


def write_alignment(table: AlignmentTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in table.rows():
            f.write(f"{s.utterance_id}\t{s.onset!r}\t{s.offset!r}\t{s.phone}\t{s.speaker}\n")


def _to_frames(t: float, frame_rate: float) -> float:
    return round(t * frame_rate, _TIME_DECIMALS)


def segment_frame_range(n_frames: int, frame_rate: float, onset: float, offset: float, snap: bool = True):
    """Half-open frame index range ``[start, stop)`` of frames starting inside the segment.

    Frame ``i`` covers ``[i/r, (i+1)/r)``. A segment containing no frame start is
    snapped to the frame holding its midpoint, or rejected when ``snap`` is off.
    Offsets past the end of the sequence are clipped.
    """
    if not (onset >= 0 and offset > onset):
        raise InputError(f"invalid segment {onset}-{offset}")
    if _to_frames(onset, frame_rate) >= n_frames:
        raise InputError(f"segment {onset}-{offset} starts after the last frame ({n_frames} frames)")
    start = math.ceil(_to_frames(onset, frame_rate))
    stop = min(math.ceil(_to_frames(offset, frame_rate)), n_frames)
    if stop > start:
        return start, stop
    if not snap:
        raise InputError(f"segment {onset}-{offset} covers no frame at {frame_rate} Hz")
    mid = min(math.floor(_to_frames(0.5 * (onset + offset), frame_rate)), n_frames - 1)
    return mid, mid + 1


def frames_for_segment(seq: FeatureSequence, onset: float, offset: float, snap: bool = True) -> FeatureSequence:
    start, stop = segment_frame_range(seq.n_frames, seq.frame_rate, onset, offset, snap)
    return FeatureSequence(seq.data[start:stop], seq.frame_rate, seq.utterance_id)


class PairRow(NamedTuple):
    pair_id: str
    member_a: str
    member_b: str
    correct: str  # "a" or "b"
    in_vocab: bool

    @property
    def true_member(self) -> str:
        return self.member_a if self.correct == "a" else self.member_b

    @property
    def false_member(self) -> str:
        return self.member_b if self.correct == "a" else self.member_a


def read_pair_manifest(path) -> List[PairRow]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"pair manifest not found: {path}")
    rows, seen = [], set()
    for lineno, cols in _split_tsv(path):
        if len(cols) != 5:
            raise FormatError(f"line {lineno}: expected 5 columns, got {len(cols)}", path=path)
        pair_id, a, b, correct, in_vocab = cols
        if correct not in ("a", "b"):
            raise FormatError(f"line {lineno}: correct must be 'a' or 'b', got {correct!r}", path=path)
        if in_vocab not in ("0", "1"):
            raise FormatError(f"line {lineno}: in_vocab must be 0 or 1, got {in_vocab!r}", path=path)
        if pair_id in seen:
            raise FormatError(f"line {lineno}: duplicate pair id {pair_id!r}", path=path)
        seen.add(pair_id)
        rows.append(PairRow(pair_id, a, b, correct, in_vocab == "1"))
    return rows


def write_pair_manifest(rows: Iterable[PairRow], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(f"{r.pair_id}\t{r.member_a}\t{r.member_b}\t{r.correct}\t{int(r.in_vocab)}\n")

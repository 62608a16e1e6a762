"""Time-span call annotations: TSV parsing, class vocabularies, and
rasterization to per-frame label tracks.

Index 0 always means non-call. A frame belongs to a span when its midpoint
(t*0.02 + 0.01 s) lies in [start, end), so touching spans never fight over
a frame and boundary rounding is stable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_ingest import FRAME_SEC, FrameGrid
from .errors import (
    BadMagic,
    FormatError,
    NegativeSpan,
    OverlapError,
    ParseError,
    SpanPastEnd,
)

TSV_HEADER = ["clip_id", "start", "end", "label"]

APEL_MAGIC = b"APEL"
APEL_VERSION = 1


@dataclass(frozen=True)
class AnnotationUnit:
    clip_id: str
    start: float
    end: float
    call_type: str


@dataclass(frozen=True)
class ClassVocab:
    """Call-type names in index order; names[i] has class index i + 1."""

    names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index_of(self, call_type: str) -> int:
        return self.names.index(call_type) + 1

    def name_of(self, index: int) -> str:
        if index == 0:
            return "none"
        return self.names[index - 1]

    def to_dict(self) -> dict[str, int]:
        d = {"none": 0}
        for i, name in enumerate(self.names):
            d[name] = i + 1
        return d


BINARY_VOCAB = ClassVocab(("call",))


@dataclass(frozen=True)
class LabelTrack:
    clip_id: str
    labels: np.ndarray  # length T, ints in [0, C]
    vocab: ClassVocab

    @property
    def num_frames(self) -> int:
        return len(self.labels)


def parse_annotations(path: str | Path) -> list[AnnotationUnit]:
    """Parse a TSV of call spans, one `clip_id start end label` row each.

    Rows keep file order. Raises ParseError with the offending line number,
    NegativeSpan when end <= start, and OverlapError when two spans on the
    same clip overlap (touching is fine).
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].split("\t") != TSV_HEADER:
        raise ParseError(f"{path}:1: expected header clip_id/start/end/label")
    units = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 tab-separated columns")
        clip_id, start_s, end_s, label = (c.strip() for c in cols)
        try:
            start, end = float(start_s), float(end_s)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad number in start/end") from None
        if not clip_id:
            raise ParseError(f"{path}:{lineno}: empty clip_id")
        if not label:
            raise ParseError(f"{path}:{lineno}: empty label")
        if label == "none":
            raise ParseError(f"{path}:{lineno}: 'none' is reserved for non-call")
        if start < 0:
            raise ParseError(f"{path}:{lineno}: negative start time")
        if end <= start:
            raise NegativeSpan(f"{path}:{lineno}: span [{start}, {end}] has end <= start")
        units.append(AnnotationUnit(clip_id, start, end, label))
    _check_overlaps(units, str(path))
    return units


def _check_overlaps(units: list[AnnotationUnit], origin: str) -> None:
    by_clip: dict[str, list[AnnotationUnit]] = {}
    for u in units:
        by_clip.setdefault(u.clip_id, []).append(u)
    for clip_id, clip_units in by_clip.items():
        clip_units = sorted(clip_units, key=lambda u: u.start)
        for a, b in zip(clip_units, clip_units[1:]):
            if b.start < a.end:
                raise OverlapError(
                    f"{origin}: clip {clip_id}: spans [{a.start}, {a.end}] and "
                    f"[{b.start}, {b.end}] overlap"
                )


def build_vocab(units: list[AnnotationUnit]) -> ClassVocab:
    """Assign indices 1..C to call types in lexicographic order."""
    return ClassVocab(tuple(sorted({u.call_type for u in units})))


def rasterize(units: list[AnnotationUnit], grid: FrameGrid, vocab: ClassVocab) -> LabelTrack:
    """Paint each unit's class over the frames whose midpoints it covers."""
    t = grid.num_frames
    labels = np.zeros(t, dtype=np.int64)
    midpoints = FRAME_SEC * np.arange(t) + FRAME_SEC / 2
    clip_end = t * FRAME_SEC
    for u in units:
        if u.end > clip_end + FRAME_SEC:
            raise SpanPastEnd(
                f"clip {grid.clip_id}: span ends at {u.end} s but clip has "
                f"{t} frames ({clip_end} s); clip/annotation mismatch?"
            )
        labels[(midpoints >= u.start) & (midpoints < u.end)] = vocab.index_of(u.call_type)
    return LabelTrack(grid.clip_id, labels, vocab)


def to_binary(track: LabelTrack) -> LabelTrack:
    """Collapse every positive class to 1 (call vs. non-call)."""
    return LabelTrack(track.clip_id, (track.labels > 0).astype(np.int64), BINARY_VOCAB)


def write_vocab(path: str | Path, vocab: ClassVocab) -> None:
    Path(path).write_text(json.dumps(vocab.to_dict(), indent=2) + "\n")


def read_vocab(path: str | Path) -> ClassVocab:
    d = json.loads(Path(path).read_text())
    if d.get("none") != 0:
        raise FormatError(f"{path}: vocab must map 'none' to 0")
    names = [None] * (len(d) - 1)
    for name, idx in d.items():
        if name == "none":
            continue
        if not isinstance(idx, int) or not (1 <= idx <= len(names)):
            raise FormatError(f"{path}: class index {idx!r} out of range")
        if names[idx - 1] is not None:
            raise FormatError(f"{path}: duplicate class index {idx}")
        names[idx - 1] = name
    return ClassVocab(tuple(names))


def write_apel(path: str | Path, track: LabelTrack) -> None:
    """Serialize a label track: magic "APEL", version u32, num_frames u32,
    C u32, then num_frames uint16 class indices, all little-endian."""
    labels = np.ascontiguousarray(track.labels, dtype="<u2")
    hdr = APEL_MAGIC + struct.pack("<III", APEL_VERSION, len(labels), track.vocab.num_classes)
    Path(path).write_bytes(hdr + labels.tobytes())


def read_apel(path: str | Path) -> tuple[np.ndarray, int]:
    """Read an APEL file; returns (labels, C)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != APEL_MAGIC:
        raise BadMagic(f"{path}: not an APEL file")
    version, n, c = struct.unpack_from("<III", raw, 4)
    if version != APEL_VERSION:
        raise FormatError(f"{path}: unsupported APEL version {version}")
    need = 16 + 2 * n
    if len(raw) < need:
        raise FormatError(f"{path}: payload shorter than header promises")
    labels = np.frombuffer(raw[16:need], dtype="<u2").astype(np.int64)
    if labels.size and labels.max() > c:
        raise FormatError(f"{path}: label {labels.max()} exceeds class count {c}")
    return labels, c

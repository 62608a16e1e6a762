"""Corpus inventory, seeded 80/10/10 splits, and feature/label pairing.

Splits must be reproducible across platforms and numpy versions, so the
shuffle uses a self-contained PCG32 generator rather than any library RNG.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import ClassVocab, LabelTrack, read_apel, read_vocab
from .errors import (
    AlignmentError,
    ClassArityMismatch,
    DimMismatch,
    FeatureKindMismatch,
    FormatError,
    MissingFile,
    TooFewClips,
)
from .featurize import FEATURE_DIMS, FrameMatrix, read_apef

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    wav: Path
    apef: Path
    apel: Path


@dataclass(frozen=True)
class Corpus:
    name: str
    feature_kind: str
    vocab: ClassVocab
    entries: tuple[ClipEntry, ...]

    @property
    def clip_ids(self) -> list[str]:
        return [e.clip_id for e in self.entries]

    def entry(self, clip_id: str) -> ClipEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise MissingFile(f"clip {clip_id} not in corpus {self.name}")


@dataclass(frozen=True)
class Split:
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


class _Pcg32:
    """Minimal PCG32 (XSH-RR output, 64-bit LCG state).

    state' = state * 6364136223846793005 + inc (mod 2^64);
    output = rotr32(((state >> 18) ^ state) >> 27, state >> 59) on the
    pre-step state. Seeding follows the reference pcg32_srandom.
    """

    MULT = 6364136223846793005

    def __init__(self, initstate: int, initseq: int):
        self.state = 0
        self.inc = ((initseq << 1) | 1) & _MASK64
        self._step()
        self.state = (self.state + initstate) & _MASK64
        self._step()

    def _step(self) -> None:
        self.state = (self.state * self.MULT + self.inc) & _MASK64

    def next_u32(self) -> int:
        old = self.state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def bounded(self, n: int) -> int:
        """Uniform integer in [0, n) by threshold rejection."""
        threshold = (1 << 32) % n
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % n


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def seeded_shuffle(items: list, seed: int) -> list:
    """Fisher-Yates shuffle driven by PCG32, seeded via SplitMix64.

    Two SplitMix64 draws from the seed become PCG32's (initstate, initseq).
    Pure-integer arithmetic, so the permutation for a given (items, seed)
    is identical on every platform.
    """
    sm = seed & _MASK64
    sm, s1 = _splitmix64(sm)
    sm, s2 = _splitmix64(sm)
    rng = _Pcg32(s1, s2)
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.bounded(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def make_split(corpus: Corpus, seed: int) -> Split:
    """Shuffle clip ids by seed and cut 80/10/10 (test takes the remainder)."""
    ids = sorted(corpus.clip_ids)
    n = len(ids)
    if n < 3:
        raise TooFewClips(f"need at least 3 clips to split, got {n}")
    shuffled = seeded_shuffle(ids, seed)
    n_train = (8 * n) // 10
    n_val = n // 10
    return Split(
        seed=seed,
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train:n_train + n_val]),
        test=tuple(shuffled[n_train + n_val:]),
    )


def load_pairs(corpus: Corpus, ids: list[str]) -> list[tuple[FrameMatrix, LabelTrack]]:
    """Load aligned (features, labels) pairs for the given clip ids."""
    pairs = []
    for clip_id in ids:
        e = corpus.entry(clip_id)
        if not e.apef.exists():
            raise MissingFile(f"clip {clip_id}: feature file {e.apef} not found")
        if not e.apel.exists():
            raise MissingFile(f"clip {clip_id}: label file {e.apel} not found")
        kind, values = read_apef(e.apef)
        if kind != corpus.feature_kind:
            raise FeatureKindMismatch(
                f"clip {clip_id}: features are {kind}, corpus is {corpus.feature_kind}"
            )
        if values.shape[1] != FEATURE_DIMS[kind]:
            raise DimMismatch(
                f"clip {clip_id}: dim {values.shape[1]}, expected {FEATURE_DIMS[kind]}"
            )
        labels, c = read_apel(e.apel)
        if c != corpus.vocab.num_classes:
            raise ClassArityMismatch(
                f"clip {clip_id}: label track has {c} classes, vocab has "
                f"{corpus.vocab.num_classes}"
            )
        if values.shape[0] != len(labels):
            raise AlignmentError(
                f"clip {clip_id}: {values.shape[0]} feature rows vs {len(labels)} labels"
            )
        pairs.append((
            FrameMatrix(clip_id, kind, values),
            LabelTrack(clip_id, labels, corpus.vocab),
        ))
    return pairs


def class_occurrences(pairs: list[tuple[FrameMatrix, LabelTrack]]) -> np.ndarray:
    """Frame counts per class index 0..C across the given pairs."""
    if not pairs:
        raise ValueError("no pairs given")
    c = pairs[0][1].vocab.num_classes
    counts = np.zeros(c + 1, dtype=np.int64)
    for _, track in pairs:
        counts += np.bincount(track.labels, minlength=c + 1)
    return counts


def write_manifest(path: str | Path, corpus: Corpus, vocab_path: str | Path) -> None:
    """Write a corpus manifest; all paths stored relative to the manifest dir."""
    path = Path(path)
    base = path.resolve().parent

    def rel(p):
        return os.path.relpath(Path(p).resolve(), base)

    doc = {
        "name": corpus.name,
        "feature_kind": corpus.feature_kind,
        "vocab_path": rel(vocab_path),
        "clips": [
            {"id": e.clip_id, "wav": rel(e.wav), "apef": rel(e.apef), "apel": rel(e.apel)}
            for e in corpus.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path: str | Path) -> Corpus:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON ({err})") from None
    for key in ("name", "feature_kind", "vocab_path", "clips"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing key {key!r}")
    if doc["feature_kind"] not in FEATURE_DIMS:
        raise FormatError(f"{path}: unknown feature kind {doc['feature_kind']!r}")
    base = path.resolve().parent
    vocab = read_vocab(base / doc["vocab_path"])
    entries = []
    seen = set()
    for clip in doc["clips"]:
        cid = clip["id"]
        if cid in seen:
            raise FormatError(f"{path}: duplicate clip id {cid!r}")
        seen.add(cid)
        entries.append(ClipEntry(
            clip_id=cid,
            wav=base / clip["wav"],
            apef=base / clip["apef"],
            apel=base / clip["apel"],
        ))
    return Corpus(doc["name"], doc["feature_kind"], vocab, tuple(entries))


def write_split(path: str | Path, split: Split) -> None:
    doc = {
        "seed": split.seed,
        "train": list(split.train),
        "val": list(split.val),
        "test": list(split.test),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_split(path: str | Path) -> Split:
    doc = json.loads(Path(path).read_text())
    return Split(
        seed=int(doc["seed"]),
        train=tuple(doc["train"]),
        val=tuple(doc["val"]),
        test=tuple(doc["test"]),
    )

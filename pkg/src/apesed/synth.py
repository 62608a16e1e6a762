"""Synthetic test corpora: noise-floor clips with amplitude-modulated
tones standing in for call units.

Class k is rendered at (500 + 700*k) Hz, so classes sit well apart on the
spectrogram's 40 Hz bin grid. Tone amplitudes stay low (peak power well
under the window's saturation range) and every unit span lands on frame
boundaries, so rasterizing the written annotations recovers the inserted
labels exactly. A fixed seed reproduces the corpus byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_ingest import CANONICAL_RATE, FRAME_LEN, FRAME_SEC, AudioClip, write_wav
from .annotations import AnnotationUnit

NOISE_SIGMA = 0.005
MIN_GAP_FRAMES = 3
MIN_CLIP_FRAMES = 150   # 3 s
MAX_CLIP_FRAMES = 500   # 10 s
MIN_UNIT_FRAMES = 15    # 0.3 s
MAX_UNIT_FRAMES = 60    # 1.2 s


@dataclass(frozen=True)
class SynthClip:
    clip_id: str
    samples: np.ndarray
    units: list[AnnotationUnit]


def class_tone_hz(k: int) -> float:
    return 500.0 + 700.0 * k


def _render_clip(clip_id: str, rng: np.random.Generator,
                 num_classes: int) -> SynthClip:
    t_frames = int(rng.integers(MIN_CLIP_FRAMES, MAX_CLIP_FRAMES + 1))
    n = t_frames * FRAME_LEN
    x = rng.normal(0.0, NOISE_SIGMA, n)

    units = []
    cursor = int(rng.integers(MIN_GAP_FRAMES, 30))
    while True:
        dur = int(rng.integers(MIN_UNIT_FRAMES, MAX_UNIT_FRAMES + 1))
        if cursor + dur > t_frames - MIN_GAP_FRAMES:
            break
        k = int(rng.integers(1, num_classes + 1))
        a0, a1 = cursor * FRAME_LEN, (cursor + dur) * FRAME_LEN
        amp = rng.uniform(0.05, 0.09)
        env_hz = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        tt = np.arange(a0, a1) / CANONICAL_RATE
        env = 0.7 + 0.3 * np.sin(2.0 * np.pi * env_hz * tt + phase[0])
        x[a0:a1] += amp * env * np.sin(2.0 * np.pi * class_tone_hz(k) * tt + phase[1])
        units.append(AnnotationUnit(
            clip_id, cursor * FRAME_SEC, (cursor + dur) * FRAME_SEC, f"call{k}"
        ))
        cursor += dur + int(rng.integers(MIN_GAP_FRAMES, 41))
    return SynthClip(clip_id, x, units)


def generate(seed: int, num_clips: int, num_classes: int) -> list[SynthClip]:
    """Build the corpus in memory; same arguments, same samples and spans."""
    if not 1 <= num_classes <= 8:
        raise ValueError(f"num_classes must be in [1, 8], got {num_classes}")
    if num_clips < 5:
        raise ValueError(f"num_clips must be >= 5, got {num_clips}")
    rng = np.random.default_rng(seed)
    width = max(4, len(str(num_clips)))
    clips = []
    for i in range(num_clips):
        clip_id = f"clip{i + 1:0{width}d}"
        clips.append(_render_clip(clip_id, rng, num_classes))
    return clips


def write_corpus(out_dir: str | Path, clips: list[SynthClip]) -> tuple[Path, Path]:
    """Write wav/<id>.wav files and annotations.tsv; returns their paths."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rows = ["clip_id\tstart\tend\tlabel"]
    for clip in clips:
        write_wav(wav_dir / f"{clip.clip_id}.wav",
                  AudioClip(clip.clip_id, CANONICAL_RATE, clip.samples))
        for u in clip.units:
            rows.append(f"{u.clip_id}\t{u.start:.2f}\t{u.end:.2f}\t{u.call_type}")
    tsv = out_dir / "annotations.tsv"
    tsv.write_text("\n".join(rows) + "\n")
    return wav_dir, tsv


def synth_corpus(out_dir: str | Path, seed: int, num_clips: int,
                 num_classes: int) -> tuple[Path, Path]:
    return write_corpus(out_dir, generate(seed, num_clips, num_classes))


def jitter_units(units: list[AnnotationUnit], rng: np.random.Generator,
                 max_frames: int = 2) -> list[AnnotationUnit]:
    """Shift span boundaries by up to max_frames frames either way.

    Corrupts supervision near boundaries without touching the audio.
    Spans are clamped so each stays at least one frame long and never
    crosses the previous span of its clip (units must arrive in time
    order per clip, as the generator writes them).
    """
    out = []
    prev_end: dict[str, float] = {}
    for u in units:
        ds = int(rng.integers(-max_frames, max_frames + 1)) * FRAME_SEC
        de = int(rng.integers(-max_frames, max_frames + 1)) * FRAME_SEC
        start = round(max(prev_end.get(u.clip_id, 0.0), u.start + ds), 2)
        end = round(max(start + FRAME_SEC, u.end + de), 2)
        prev_end[u.clip_id] = end
        out.append(AnnotationUnit(u.clip_id, start, end, u.call_type))
    return out

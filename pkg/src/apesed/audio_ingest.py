"""Loading, validation, resampling, and framing of raw audio.

All downstream processing assumes the canonical representation produced
here: mono PCM at 16 kHz, segmented into non-overlapping 20 ms frames
(320 samples), with the final partial frame zero-padded by consumers.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import CorruptFile, EmptyAudio, UnsupportedFormat

CANONICAL_RATE = 16000
FRAME_LEN = 320  # 20 ms at 16 kHz
FRAME_SEC = FRAME_LEN / CANONICAL_RATE

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Identified mono signal; amplitudes in [-1, 1]."""

    clip_id: str
    sample_rate: int
    samples: np.ndarray
    source_path: str = ""

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    """Non-overlapping 20 ms frame layout of a canonical clip."""

    clip_id: str
    num_frames: int
    frame_len: int = FRAME_LEN
    hop: int = FRAME_LEN


def load_wav(path: str | Path) -> AudioClip:
    """Read a PCM WAV file into a mono clip scaled to [-1, 1].

    Supports 8/16/24/32-bit integer and 32-bit float samples, 1 or 2
    channels. Multi-channel audio is averaged down to mono. The original
    sample rate is preserved; call :func:`resample` to canonicalize.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptFile(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise CorruptFile(f"{path}: data chunk shorter than declared")
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        # sub-format GUID starts with the ordinary format tag
        raise UnsupportedFormat(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    if audio_format not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        raise UnsupportedFormat(f"{path}: compressed or non-PCM format {audio_format}")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{path}: {channels} channels, expected 1 or 2")
    if rate <= 0:
        raise CorruptFile(f"{path}: nonsensical sample rate {rate}")

    if audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedFormat(f"{path}: {bits}-bit float samples")
        x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4").astype(np.float64)
    elif bits == 8:
        x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        usable = len(data) - len(data) % 3
        b = np.frombuffer(data[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float64) / float(1 << 23)
    elif bits == 32:
        x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise UnsupportedFormat(f"{path}: {bits}-bit integer samples")

    if channels == 2:
        x = x[:len(x) - len(x) % 2].reshape(-1, 2).mean(axis=1)
    if len(x) == 0:
        raise EmptyAudio(f"{path}: zero-length data chunk")
    if not np.all(np.isfinite(x)):
        raise CorruptFile(f"{path}: non-finite sample values")
    return AudioClip(clip_id=path.stem, sample_rate=rate, samples=x, source_path=str(path))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM mono WAV."""
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
        _WAVE_FORMAT_PCM, 1, clip.sample_rate,
        clip.sample_rate * 2, 2, 16, b"data", len(pcm),
    )
    Path(path).write_bytes(hdr + pcm)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling to ``target_rate``.

    When the rates already match the clip is returned unchanged
    (bit-exact pass-through). Output length is round(len * target / source),
    half rounded up. The anti-aliasing filter is a Kaiser-windowed sinc
    (beta 14.77) with 64 zero crossings per side at the lower rate.
    Amplitudes are clipped back into [-1, 1] after filter ringing.
    """
    if target_rate < 8000:
        raise ValueError(f"target_rate {target_rate} below 8000 Hz")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    half_width = 64 * max(up, down)
    taps = firwin(2 * half_width + 1, min(1.0 / up, 1.0 / down), window=("kaiser", 14.77))
    # resample_poly scales the supplied taps by `up` itself, so these are
    # handed over with unity DC gain.
    y = resample_poly(clip.samples, up, down, window=taps)
    n_out = int(math.floor(len(clip.samples) * target_rate / clip.sample_rate + 0.5))
    n_out = max(n_out, 1)
    if len(y) < n_out:
        y = np.concatenate([y, np.zeros(n_out - len(y))])
    y = np.clip(y[:n_out], -1.0, 1.0)
    return replace(clip, sample_rate=target_rate, samples=y)


def canonicalize(clip: AudioClip) -> AudioClip:
    return resample(clip, CANONICAL_RATE)


def frame_grid(clip: AudioClip) -> FrameGrid:
    """20 ms frame layout: T = ceil(len / 320), last frame zero-padded.

    Clips shorter than one frame still get T = 1 rather than being dropped.
    """
    if clip.sample_rate != CANONICAL_RATE:
        raise ValueError(f"clip {clip.clip_id} not canonicalized: rate {clip.sample_rate}")
    n = max(len(clip.samples), 1)
    return FrameGrid(clip_id=clip.clip_id, num_frames=-(-n // FRAME_LEN))


def num_frames_for(num_samples: int) -> int:
    return -(-max(num_samples, 1) // FRAME_LEN)

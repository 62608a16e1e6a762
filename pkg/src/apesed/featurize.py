"""Frame-level feature extraction: waveform slices, power spectrogram, or
imported external embeddings.

Whatever the kind, a clip of T frames always yields a T x D matrix whose
rows are index-aligned with the label track. External embeddings arrive in
APEF files (see ``read_apef``) and are aligned to the frame grid with a
small tolerance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_ingest import FRAME_LEN, AudioClip, FrameGrid
from .errors import BadMagic, DimMismatch, FormatError, FrameCountMismatch

SPEC_NFFT = 400
SPEC_BINS = SPEC_NFFT // 2 + 1  # 201

FEATURE_DIMS = {"waveform": FRAME_LEN, "spectrogram": SPEC_BINS, "external": 768}
KIND_CODES = {"waveform": 0, "spectrogram": 1, "external": 2}
_CODE_KINDS = {v: k for k, v in KIND_CODES.items()}

APEF_MAGIC = b"APEF"
APEF_VERSION = 1

# wav2vec-style extractors emit slightly fewer rows than ceil(len/320);
# anything further off signals a wrong file/clip pairing.
ALIGN_TOLERANCE = 2


def feature_dim(kind: str) -> int:
    if kind not in FEATURE_DIMS:
        raise ValueError(f"unknown feature kind {kind!r}")
    return FEATURE_DIMS[kind]


@dataclass(frozen=True)
class FrameMatrix:
    """Per-frame feature sequence, one row per 20 ms frame."""

    clip_id: str
    kind: str
    values: np.ndarray  # T x D float32

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


def waveform_features(clip: AudioClip, grid: FrameGrid) -> FrameMatrix:
    """Row t holds samples [320*t, 320*(t+1)), zero-padded in the last row."""
    t = grid.num_frames
    x = np.zeros(t * FRAME_LEN, dtype=np.float32)
    x[:len(clip.samples)] = clip.samples
    return FrameMatrix(clip.clip_id, "waveform", x.reshape(t, FRAME_LEN))


def spectrogram_features(clip: AudioClip, grid: FrameGrid) -> FrameMatrix:
    """Power spectrogram with one 201-bin column per 20 ms frame.

    STFT with n_fft 400, hop 320, periodic Hann window, centered via
    reflect padding, magnitude squared. The column count is trimmed or
    edge-replicated to exactly T rows.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if len(x) == 0:
        x = np.zeros(1)
    pad = SPEC_NFFT // 2
    if len(x) > 1:
        xp = np.pad(x, pad, mode="reflect")
    else:
        xp = np.pad(x, pad, mode="edge")
    window = np.hanning(SPEC_NFFT + 1)[:-1]  # periodic Hann
    n_cols = 1 + (len(x)) // FRAME_LEN
    idx = np.arange(SPEC_NFFT)[None, :] + FRAME_LEN * np.arange(n_cols)[:, None]
    frames = xp[idx] * window[None, :]
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2

    t = grid.num_frames
    if spec.shape[0] >= t:
        spec = spec[:t]
    else:
        spec = np.concatenate([spec, np.repeat(spec[-1:], t - spec.shape[0], axis=0)])
    return FrameMatrix(clip.clip_id, "spectrogram", spec.astype(np.float32))


def write_apef(path: str | Path, kind: str, values: np.ndarray) -> None:
    """Serialize a feature matrix to the APEF binary format.

    Layout (little-endian): magic "APEF", version u32, kind u8,
    3 reserved bytes, num_frames u32, dim u32, then num_frames*dim
    float32 values row-major.
    """
    values = np.ascontiguousarray(values, dtype="<f4")
    n, d = values.shape
    hdr = APEF_MAGIC + struct.pack("<IB3xII", APEF_VERSION, KIND_CODES[kind], n, d)
    Path(path).write_bytes(hdr + values.tobytes())


def read_apef(path: str | Path) -> tuple[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != APEF_MAGIC:
        raise BadMagic(f"{path}: not an APEF file")
    version, code, n, d = struct.unpack_from("<IB3xII", raw, 4)
    if version != APEF_VERSION:
        raise FormatError(f"{path}: unsupported APEF version {version}")
    if code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown feature kind code {code}")
    need = 20 + 4 * n * d
    if len(raw) < need:
        raise FormatError(f"{path}: payload shorter than header promises")
    values = np.frombuffer(raw[20:need], dtype="<f4").reshape(n, d)
    return _CODE_KINDS[code], values


def align_rows(values: np.ndarray, num_frames: int, origin: str = "") -> np.ndarray:
    """Align a feature matrix to the frame grid within +-2 rows.

    Shorter inputs edge-replicate the last row; longer ones are truncated.
    """
    got = values.shape[0]
    if abs(got - num_frames) > ALIGN_TOLERANCE:
        raise FrameCountMismatch(
            f"{origin}: {got} rows vs {num_frames} frames; wrong file/clip pairing?"
        )
    if got > num_frames:
        return values[:num_frames]
    if got < num_frames:
        return np.concatenate([values, np.repeat(values[-1:], num_frames - got, axis=0)])
    return values


def load_external_features(path: str | Path, grid: FrameGrid) -> FrameMatrix:
    """Load a 768-dim APEF file and align it to the clip's frame grid."""
    kind, values = read_apef(path)
    if values.shape[1] != FEATURE_DIMS["external"]:
        raise DimMismatch(f"{path}: dim {values.shape[1]}, expected 768")
    values = align_rows(values, grid.num_frames, origin=str(path))
    return FrameMatrix(grid.clip_id, "external", np.ascontiguousarray(values))


def featurize_clip(clip: AudioClip, grid: FrameGrid, kind: str) -> FrameMatrix:
    if kind == "waveform":
        return waveform_features(clip, grid)
    if kind == "spectrogram":
        return spectrogram_features(clip, grid)
    raise ValueError(f"cannot compute {kind!r} features locally; import an APEF file")

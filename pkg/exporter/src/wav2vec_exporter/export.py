"""Run a frozen wav2vec 2.0 model over canonical WAVs, one APEF per clip."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .apef import write_external
from .errors import InputNotCanonical, ModelLoadFailure

CANONICAL_RATE = 16000
# conv stack: kernels 10,3,3,3,3,2,2 with strides 5,2,2,2,2,2,2; anything
# shorter than one receptive field produces no frames at all
MIN_SAMPLES = 400

DEFAULT_TAG = "facebook/wav2vec2-base"
UNTRAINED_TAG = "untrained-base"


@dataclass(frozen=True)
class ExportJob:
    input_dir: str
    output_dir: str
    device: str = "cpu"
    model_tag: str = DEFAULT_TAG

    def __post_init__(self):
        if self.device != "cpu":
            raise ValueError(f"only cpu inference is supported, got {self.device!r}")


def read_canonical_wav(path) -> np.ndarray:
    """16 kHz mono 16-bit PCM in, float waveform in [-1, 1] out."""
    try:
        with wave.open(str(path), "rb") as w:
            rate = w.getframerate()
            channels = w.getnchannels()
            width = w.getsampwidth()
            if rate != CANONICAL_RATE or channels != 1:
                raise InputNotCanonical(
                    f"{path}: {rate} Hz / {channels} channel(s); need 16000 Hz mono"
                )
            if width != 2:
                raise InputNotCanonical(f"{path}: {8 * width}-bit; need 16-bit PCM")
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise InputNotCanonical(f"{path}: {e}") from e
    x = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if len(x) < MIN_SAMPLES:
        raise InputNotCanonical(
            f"{path}: {len(x)} samples, below the {MIN_SAMPLES}-sample minimum"
        )
    return x


def load_model(tag: str):
    """A frozen Wav2Vec2 instance in eval mode.

    The tag "untrained-base" builds the base architecture with seed-0
    random weights and needs no downloads; any other tag goes through
    the usual pretrained-weight resolution.
    """
    try:
        import torch
        from transformers import Wav2Vec2Config, Wav2Vec2Model
    except Exception as e:
        raise ModelLoadFailure(f"torch/transformers unavailable: {e}") from e
    torch.set_num_threads(1)  # keeps repeated exports bit-identical
    if tag == UNTRAINED_TAG:
        torch.manual_seed(0)
        model = Wav2Vec2Model(Wav2Vec2Config())
    else:
        try:
            model = Wav2Vec2Model.from_pretrained(tag)
        except Exception as e:
            raise ModelLoadFailure(f"cannot load {tag!r}: {e}") from e
    model.eval()
    return model


def embed_clip(model, samples: np.ndarray) -> np.ndarray:
    """Final-layer hidden states for one clip, T x 768 float32."""
    import torch

    x = np.asarray(samples, dtype=np.float64)
    x = (x - x.mean()) / np.sqrt(x.var() + 1e-7)  # per-clip normalization
    with torch.no_grad():
        out = model(torch.from_numpy(x.astype(np.float32))[None, :])
    return out.last_hidden_state[0].numpy().astype(np.float32)


def export_features(job: ExportJob) -> dict:
    """Write one APEF per input WAV, same stem, under output_dir.

    Returns {"files": N, "frames": {stem: num_frames}}.
    """
    in_dir = Path(job.input_dir)
    out_dir = Path(job.output_dir)
    wavs = sorted(in_dir.glob("*.wav"))
    if not wavs:
        raise InputNotCanonical(f"no .wav files under {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model(job.model_tag)
    frames = {}
    for wav in wavs:
        vec = embed_clip(model, read_canonical_wav(wav))
        if not np.isfinite(vec).all():
            raise ModelLoadFailure(f"{wav.stem}: model produced non-finite values")
        write_external(out_dir / f"{wav.stem}.apef", vec)
        frames[wav.stem] = int(vec.shape[0])
    return {"files": len(frames), "frames": frames}

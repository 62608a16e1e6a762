"""Shared fixtures: a small on-disk corpus assembled through the library."""

from __future__ import annotations

import numpy as np
import pytest

from apesed import audio_ingest, synth
from apesed.annotations import build_vocab, rasterize, write_apel, write_vocab
from apesed.dataset import ClipEntry, Corpus, write_manifest
from apesed.featurize import featurize_clip, write_apef


def build_corpus_dir(root, seed=1, num_clips=12, num_classes=2,
                     kind="spectrogram", units_override=None):
    """Render a synthetic corpus and featurize it, all in-process.

    Returns (corpus, manifest_path). `units_override` replaces the
    generated annotation units (same clips, different supervision).
    """
    clips = synth.generate(seed, num_clips, num_classes)
    wav_dir = root / "wav"
    label_dir = root / "labels"
    feat_dir = root / "features" / kind
    wav_dir.mkdir(parents=True, exist_ok=True)
    label_dir.mkdir(parents=True, exist_ok=True)
    feat_dir.mkdir(parents=True, exist_ok=True)

    all_units = []
    for clip in clips:
        all_units.extend(clip.units)
    if units_override is not None:
        all_units = units_override
    by_clip = {}
    for u in all_units:
        by_clip.setdefault(u.clip_id, []).append(u)
    vocab = build_vocab(all_units)
    vocab_path = root / "vocab.json"
    write_vocab(vocab_path, vocab)

    entries = []
    for sc in clips:
        clip = audio_ingest.AudioClip(sc.clip_id, audio_ingest.CANONICAL_RATE,
                                      sc.samples)
        wav_path = wav_dir / f"{sc.clip_id}.wav"
        audio_ingest.write_wav(wav_path, clip)
        grid = audio_ingest.frame_grid(clip)
        track = rasterize(by_clip.get(sc.clip_id, []), grid, vocab)
        apel_path = label_dir / f"{sc.clip_id}.apel"
        write_apel(apel_path, track)
        fm = featurize_clip(clip, grid, kind)
        apef_path = feat_dir / f"{sc.clip_id}.apef"
        write_apef(apef_path, kind, fm.values)
        entries.append(ClipEntry(sc.clip_id, wav_path, apef_path, apel_path))

    corpus = Corpus(root.name, kind, vocab, tuple(entries))
    manifest_path = root / "manifest.json"
    write_manifest(manifest_path, corpus, vocab_path)
    return corpus, manifest_path


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    corpus, manifest = build_corpus_dir(root, seed=1, num_clips=12, num_classes=2)
    return corpus, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(42)

"""Corpus splits, the portable shuffle RNG, and pair loading."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apesed import dataset as ds
from apesed.annotations import ClassVocab, LabelTrack, read_apel, write_apel
from apesed.errors import (AlignmentError, ClassArityMismatch, DimMismatch,
                           FeatureKindMismatch, FormatError, MissingFile,
                           TooFewClips)
from apesed.featurize import write_apef
from conftest import build_corpus_dir


class TestPcg32:
    def test_reference_stream(self):
        """First outputs of the (42, 54) stream, pinned to the published
        reference implementation's demo output."""
        rng = ds._Pcg32(42, 54)
        got = [rng.next_u32() for _ in range(6)]
        assert got == [0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293,
                       0xBFA4784B, 0xCBED606E]

    def test_splitmix_reference_stream(self):
        """SplitMix64 from state 0, pinned to its published test vector."""
        s, outs = 0, []
        for _ in range(3):
            s, v = ds._splitmix64(s)
            outs.append(v)
        assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                        0x06C45D188009454F]

    def test_bounded_range(self):
        rng = ds._Pcg32(1, 1)
        for n in (1, 2, 3, 7, 100):
            vals = [rng.bounded(n) for _ in range(200)]
            assert all(0 <= v < n for v in vals)
        assert all(ds._Pcg32(5, 9).bounded(1) == 0 for _ in range(3))


class TestShuffle:
    def test_deterministic(self):
        items = [f"c{i}" for i in range(40)]
        assert ds.seeded_shuffle(items, 7) == ds.seeded_shuffle(items, 7)

    def test_is_permutation(self):
        items = [f"c{i}" for i in range(40)]
        out = ds.seeded_shuffle(items, 3)
        assert sorted(out) == sorted(items)
        assert out != items  # astronomically unlikely to be identity

    def test_seed_changes_order(self):
        items = [f"c{i}" for i in range(40)]
        assert ds.seeded_shuffle(items, 0) != ds.seeded_shuffle(items, 1)

    def test_input_not_mutated(self):
        items = ["a", "b", "c", "d"]
        snapshot = list(items)
        ds.seeded_shuffle(items, 0)
        assert items == snapshot


def corpus_of(n):
    entries = tuple(
        ds.ClipEntry(f"clip{i:04d}", None, None, None) for i in range(n))
    return ds.Corpus("t", "spectrogram", ClassVocab(("a",)), entries)


class TestMakeSplit:
    def test_sizes_10(self):
        s = ds.make_split(corpus_of(10), 0)
        assert (len(s.train), len(s.val), len(s.test)) == (8, 1, 1)

    def test_sizes_235(self):
        s = ds.make_split(corpus_of(235), 0)
        assert (len(s.train), len(s.val), len(s.test)) == (188, 23, 24)

    def test_sizes_12(self):
        s = ds.make_split(corpus_of(12), 0)
        assert (len(s.train), len(s.val), len(s.test)) == (9, 1, 2)

    def test_too_few(self):
        with pytest.raises(TooFewClips):
            ds.make_split(corpus_of(2), 0)

    def test_deterministic(self):
        assert ds.make_split(corpus_of(50), 11) == ds.make_split(corpus_of(50), 11)

    def test_input_order_irrelevant(self):
        fwd = corpus_of(20)
        rev = ds.Corpus("t", "spectrogram", fwd.vocab, tuple(reversed(fwd.entries)))
        assert ds.make_split(fwd, 5) == ds.make_split(rev, 5)

    def test_seed_matters(self):
        assert ds.make_split(corpus_of(50), 0) != ds.make_split(corpus_of(50), 1)

    @given(st.integers(min_value=3, max_value=200),
           st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=80, deadline=None)
    def test_partition_property(self, n, seed):
        s = ds.make_split(corpus_of(n), seed)
        parts = list(s.train) + list(s.val) + list(s.test)
        assert sorted(parts) == sorted(f"clip{i:04d}" for i in range(n))
        assert len(s.train) == (8 * n) // 10
        assert len(s.val) == n // 10


class TestLoadPairs:
    def test_happy_path(self, small_corpus):
        corpus, _ = small_corpus
        pairs = ds.load_pairs(corpus, corpus.clip_ids[:3])
        assert len(pairs) == 3
        for fm, track in pairs:
            assert fm.values.shape == (track.num_frames, 201)
            assert fm.clip_id == track.clip_id

    def test_unknown_clip(self, small_corpus):
        corpus, _ = small_corpus
        with pytest.raises(MissingFile):
            ds.load_pairs(corpus, ["nope"])

    def test_missing_feature_file(self, tmp_path):
        corpus, _ = build_corpus_dir(tmp_path, num_clips=5)
        corpus.entries[0].apef.unlink()
        with pytest.raises(MissingFile):
            ds.load_pairs(corpus, [corpus.clip_ids[0]])

    def test_kind_mismatch(self, tmp_path):
        corpus, _ = build_corpus_dir(tmp_path, num_clips=5)
        e = corpus.entries[0]
        rows = np.zeros((10, 320), dtype=np.float32)
        write_apef(e.apef, "waveform", rows)
        with pytest.raises(FeatureKindMismatch):
            ds.load_pairs(corpus, [e.clip_id])

    def test_dim_mismatch(self, tmp_path):
        corpus, _ = build_corpus_dir(tmp_path, num_clips=5)
        e = corpus.entries[0]
        write_apef(e.apef, "spectrogram", np.zeros((10, 100), dtype=np.float32))
        with pytest.raises(DimMismatch):
            ds.load_pairs(corpus, [e.clip_id])

    def test_arity_mismatch(self, tmp_path):
        corpus, _ = build_corpus_dir(tmp_path, num_clips=5)
        e = corpus.entries[0]
        labels, _ = read_apel(e.apel)
        other = ClassVocab(("a", "b", "cc", "d", "e"))
        write_apel(e.apel, LabelTrack(e.clip_id, labels, other))
        with pytest.raises(ClassArityMismatch):
            ds.load_pairs(corpus, [e.clip_id])

    def test_alignment_error(self, tmp_path):
        corpus, _ = build_corpus_dir(tmp_path, num_clips=5)
        e = corpus.entries[0]
        write_apef(e.apef, "spectrogram", np.zeros((7, 201), dtype=np.float32))
        with pytest.raises(AlignmentError):
            ds.load_pairs(corpus, [e.clip_id])


class TestClassOccurrences:
    def test_counts(self):
        vocab = ClassVocab(("a", "b"))
        t1 = LabelTrack("x", np.array([0, 0, 1, 2, 2]), vocab)
        t2 = LabelTrack("y", np.array([1, 1, 0]), vocab)
        counts = ds.class_occurrences([(None, t1), (None, t2)])
        np.testing.assert_array_equal(counts, [3, 3, 2])

    def test_absent_class_zero(self):
        vocab = ClassVocab(("a", "b", "c"))
        t = LabelTrack("x", np.array([0, 1, 1]), vocab)
        counts = ds.class_occurrences([(None, t)])
        np.testing.assert_array_equal(counts, [1, 2, 0, 0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ds.class_occurrences([])


class TestManifest:
    def test_round_trip(self, small_corpus):
        corpus, manifest_path = small_corpus
        back = ds.read_manifest(manifest_path)
        assert back.name == corpus.name
        assert back.feature_kind == corpus.feature_kind
        assert back.vocab.names == corpus.vocab.names
        assert back.clip_ids == corpus.clip_ids
        for a, b in zip(back.entries, corpus.entries):
            assert a.wav.resolve() == b.wav.resolve()
            assert a.apef.resolve() == b.apef.resolve()
            assert a.apel.resolve() == b.apel.resolve()

    def test_paths_stored_relative(self, small_corpus):
        _, manifest_path = small_corpus
        doc = json.loads(manifest_path.read_text())
        for clip in doc["clips"]:
            for key in ("wav", "apef", "apel"):
                assert not clip[key].startswith("/"), clip[key]
        assert not doc["vocab_path"].startswith("/")

    def test_missing_key(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"name": "x", "clips": []}))
        with pytest.raises(FormatError):
            ds.read_manifest(path)

    def test_bad_kind(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({
            "name": "x", "feature_kind": "mfcc", "vocab_path": "v.json",
            "clips": []}))
        with pytest.raises(FormatError):
            ds.read_manifest(path)

    def test_duplicate_ids(self, tmp_path, small_corpus):
        _, manifest_path = small_corpus
        doc = json.loads(manifest_path.read_text())
        doc["clips"].append(dict(doc["clips"][0]))
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        # vocab_path was relative to the original manifest dir
        import os
        doc["vocab_path"] = os.path.relpath(
            manifest_path.parent / doc["vocab_path"], tmp_path)
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            ds.read_manifest(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            ds.read_manifest(path)


class TestSplitIo:
    def test_round_trip(self, tmp_path):
        split = ds.make_split(corpus_of(20), 3)
        path = tmp_path / "split.json"
        ds.write_split(path, split)
        assert ds.read_split(path) == split

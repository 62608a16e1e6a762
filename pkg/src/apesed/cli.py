"""Command-line entry point: the full pipeline as subcommands.

Exit codes: 0 success, 2 usage, 3 bad data, 4 numeric divergence, 5 I/O.
Failures print a single machine-parseable line to stderr. Every command
that produces files also drops a `<command>.run.json` record (flags,
seeds, content digests of inputs and outputs, wall time) next to its
outputs; the record itself is the one output excluded from the
byte-identical idempotence guarantee, since it embeds wall time.

`APESED_THREADS` caps worker threads for the per-clip stages.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, audio_ingest, featurize, metrics, synth
from .annotations import (
    BINARY_VOCAB,
    build_vocab,
    parse_annotations,
    rasterize,
    read_apel,
    read_vocab,
    to_binary,
    write_apel,
    write_vocab,
)
from .dataset import (
    ClipEntry,
    Corpus,
    load_pairs,
    make_split,
    read_manifest,
    read_split,
    write_manifest,
    write_split,
)
from .errors import (
    ApesedError,
    ClassArityMismatch,
    FeatureKindMismatch,
    MissingFile,
    UnsupportedFormat,
)
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.model import ModelConfig, forward
from .training import TrainConfig, resume, train
from .transfer import TransferJob, transfer_eval


def _max_workers() -> int:
    env = os.environ.get("APESED_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_run_manifest(dest: Path, command: str, args: argparse.Namespace,
                        inputs: list[Path], outputs: list[Path],
                        started: float) -> None:
    flags = {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": command,
        "flags": flags,
        "version": __version__,
        "seeds": {k: int(v) for k, v in vars(args).items()
                  if "seed" in k and v is not None},
        "inputs": {str(p): _sha256(p) for p in sorted(set(inputs))},
        "outputs": {str(p): _sha256(p) for p in sorted(set(outputs))},
        "wall_time_sec": time.time() - started,
    }
    dest.write_text(json.dumps(doc, indent=2) + "\n")


def _list_wavs(wav_dir: Path) -> list[Path]:
    if not wav_dir.is_dir():
        raise MissingFile(f"wav directory {wav_dir} not found")
    wavs = sorted(wav_dir.glob("*.wav"))
    if not wavs:
        raise MissingFile(f"no .wav files in {wav_dir}")
    return wavs


def _exporter_hint(wav_dir: Path, apef_dir: Path) -> str:
    return f"run: export_wav2vec --in {wav_dir} --out {apef_dir}"


def cmd_synth(args) -> int:
    t0 = time.time()
    out = Path(args.out)
    if not 1 <= args.classes <= 8:
        raise ValueError(f"--classes must be in [1, 8], got {args.classes}")
    if args.clips < 5:
        raise ValueError(f"--clips must be >= 5, got {args.clips}")
    wav_dir, tsv = synth.synth_corpus(out, args.seed, args.clips, args.classes)
    outputs = sorted(wav_dir.glob("*.wav")) + [tsv]
    _write_run_manifest(out / "synth.run.json", "synth", args, [], outputs, t0)
    print(f"wrote {args.clips} clips and {tsv}")
    return 0


def cmd_prep(args) -> int:
    t0 = time.time()
    raw = Path(args.in_dir)
    out = Path(args.out)
    wav_in = raw / "wav" if (raw / "wav").is_dir() else raw
    wavs = _list_wavs(wav_in)
    tsv = Path(args.tsv) if args.tsv else raw / "annotations.tsv"
    if not tsv.exists():
        raise MissingFile(f"annotation file {tsv} not found")

    wav_out = out / "wav"
    label_out = out / "labels"
    wav_out.mkdir(parents=True, exist_ok=True)
    label_out.mkdir(parents=True, exist_ok=True)

    def canonize(path: Path) -> Path:
        clip = audio_ingest.load_wav(path)
        dest = wav_out / f"{clip.clip_id}.wav"
        audio_ingest.write_wav(dest, audio_ingest.canonicalize(clip))
        return dest

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        canonical = list(pool.map(canonize, wavs))

    units = parse_annotations(tsv)
    by_clip: dict[str, list] = {}
    for u in units:
        by_clip.setdefault(u.clip_id, []).append(u)
    known = {p.stem for p in canonical}
    for clip_id in by_clip:
        if clip_id not in known:
            raise MissingFile(f"annotations reference clip {clip_id} with no wav")
    vocab = build_vocab(units)
    write_vocab(out / "vocab.json", vocab)
    apels = []
    for dest in canonical:
        clip = audio_ingest.load_wav(dest)
        grid = audio_ingest.frame_grid(clip)
        track = rasterize(by_clip.get(clip.clip_id, []), grid, vocab)
        apel = label_out / f"{clip.clip_id}.apel"
        write_apel(apel, track)
        apels.append(apel)

    outputs = canonical + apels + [out / "vocab.json"]
    _write_run_manifest(out / "prep.run.json", "prep", args,
                        wavs + [tsv], outputs, t0)
    print(f"prepared {len(canonical)} clips into {out}")
    return 0


def cmd_annotate(args) -> int:
    t0 = time.time()
    wav_dir = Path(args.wavs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wavs = _list_wavs(wav_dir)
    tsv = Path(args.tsv)
    units = parse_annotations(tsv)
    by_clip: dict[str, list] = {}
    for u in units:
        by_clip.setdefault(u.clip_id, []).append(u)
    known = {p.stem for p in wavs}
    for clip_id in by_clip:
        if clip_id not in known:
            raise MissingFile(f"annotations reference clip {clip_id} with no wav")
    vocab = build_vocab(units)
    write_vocab(out / "vocab.json", vocab)
    apels = []
    for path in wavs:
        clip = audio_ingest.load_wav(path)
        if clip.sample_rate != audio_ingest.CANONICAL_RATE:
            raise UnsupportedFormat(
                f"{path}: sample rate {clip.sample_rate}, expected "
                f"{audio_ingest.CANONICAL_RATE}; run prep first"
            )
        grid = audio_ingest.frame_grid(clip)
        track = rasterize(by_clip.get(clip.clip_id, []), grid, vocab)
        apel = out / f"{clip.clip_id}.apel"
        write_apel(apel, track)
        apels.append(apel)
    _write_run_manifest(out / "annotate.run.json", "annotate", args,
                        wavs + [tsv], apels + [out / "vocab.json"], t0)
    print(f"rasterized {len(apels)} label tracks into {out}")
    return 0


def cmd_featurize(args) -> int:
    t0 = time.time()
    corpus_dir = Path(args.corpus)
    kind = args.kind
    wav_dir = corpus_dir / "wav"
    label_dir = corpus_dir / "labels"
    vocab_path = corpus_dir / "vocab.json"
    wavs = _list_wavs(wav_dir)
    if not vocab_path.exists():
        raise MissingFile(f"{vocab_path} not found; run prep first")
    vocab = read_vocab(vocab_path)
    feat_dir = corpus_dir / "features" / kind
    feat_dir.mkdir(parents=True, exist_ok=True)

    apef_in = Path(args.apef_in) if args.apef_in else None
    if kind == "external" and apef_in is None:
        raise MissingFile(
            "external features need --apef-in; "
            + _exporter_hint(wav_dir, corpus_dir / "exported")
        )

    def one_clip(path: Path):
        clip = audio_ingest.load_wav(path)
        if clip.sample_rate != audio_ingest.CANONICAL_RATE:
            raise UnsupportedFormat(
                f"{path}: sample rate {clip.sample_rate}, expected "
                f"{audio_ingest.CANONICAL_RATE}; run prep first"
            )
        grid = audio_ingest.frame_grid(clip)
        if kind == "external":
            src = apef_in / f"{clip.clip_id}.apef"
            if not src.exists():
                raise MissingFile(
                    f"{src} not found; " + _exporter_hint(wav_dir, apef_in)
                )
            fm = featurize.load_external_features(src, grid)
        else:
            fm = featurize.featurize_clip(clip, grid, kind)
        apel = label_dir / f"{clip.clip_id}.apel"
        if not apel.exists():
            raise MissingFile(f"{apel} not found; run prep first")
        labels, _ = read_apel(apel)
        if len(labels) != fm.num_frames:
            raise FeatureKindMismatch(
                f"clip {clip.clip_id}: {fm.num_frames} feature rows vs "
                f"{len(labels)} label frames"
            )
        dest = feat_dir / f"{clip.clip_id}.apef"
        featurize.write_apef(dest, kind, fm.values)
        return ClipEntry(clip.clip_id, path, dest, apel)

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        entries = list(pool.map(one_clip, wavs))

    corpus = Corpus(corpus_dir.name, kind, vocab, tuple(entries))
    manifest_path = (Path(args.manifest_out) if args.manifest_out
                     else corpus_dir / f"manifest_{kind}.json")
    write_manifest(manifest_path, corpus, vocab_path)
    outputs = [e.apef for e in entries] + [manifest_path]
    inputs = list(wavs) + [e.apel for e in entries] + [vocab_path]
    _write_run_manifest(feat_dir / "featurize.run.json", "featurize", args,
                        inputs, outputs, t0)
    print(f"wrote {len(entries)} {kind} feature files and {manifest_path}")
    return 0


def cmd_split(args) -> int:
    t0 = time.time()
    corpus = read_manifest(args.manifest)
    split = make_split(corpus, args.seed)
    out = Path(args.out)
    write_split(out, split)
    _write_run_manifest(out.with_suffix(".run.json"), "split", args,
                        [Path(args.manifest)], [out], t0)
    print(f"split {len(corpus.entries)} clips into "
          f"{len(split.train)}/{len(split.val)}/{len(split.test)}")
    return 0


def _model_config_from_args(args, corpus) -> ModelConfig:
    num_class = 2 if args.binary else corpus.vocab.num_classes + 1
    return ModelConfig(
        arch=args.arch,
        input_dim=featurize.feature_dim(corpus.feature_kind),
        hidden_size=args.hidden,
        heads=args.heads,
        layers=args.layers,
        num_class=num_class,
        dropout=args.dropout,
    )


def cmd_train(args) -> int:
    t0 = time.time()
    corpus = read_manifest(args.manifest)
    if args.feature and args.feature != corpus.feature_kind:
        raise FeatureKindMismatch(
            f"--feature {args.feature} but manifest says {corpus.feature_kind}"
        )
    split = read_split(args.split)
    train_config = TrainConfig(
        batch_size=args.batch_size,
        dropout=args.dropout,
        max_epochs=args.epochs,
        patience=args.patience,
        learning_rate=args.lr,
        seed=args.seed,
        balance_weights=not args.no_balance,
        binary=args.binary,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        model, log = resume(args.resume, corpus, split, train_config)
    else:
        model_config = _model_config_from_args(args, corpus)
        model, log = train(corpus, split, model_config, train_config)
    vocab = BINARY_VOCAB if args.binary else corpus.vocab
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(ckpt, model, vocab, corpus.feature_kind,
                    train_seed=args.seed, epoch=log.best_epoch,
                    val_f1=log.best_val_f1)
    log_path = out_dir / "trainlog.jsonl"
    with open(log_path, "w") as f:
        for rec in log.records:
            f.write(json.dumps(rec) + "\n")
        f.write(json.dumps({
            "best_epoch": log.best_epoch,
            "best_val_f1": log.best_val_f1,
            "stopped_reason": log.stopped_reason,
            "clip_events": log.clip_events,
        }) + "\n")
    inputs = [Path(args.manifest), Path(args.split)]
    _write_run_manifest(out_dir / "train.run.json", "train", args,
                        inputs, [ckpt, log_path], t0)
    print(f"best epoch {log.best_epoch} val_f1 {log.best_val_f1:.4f} "
          f"({log.stopped_reason}); saved {ckpt}")
    return 0


def _load_eval_pairs(ckpt_meta, model, corpus, ids):
    if ckpt_meta["feature_kind"] != corpus.feature_kind:
        raise FeatureKindMismatch(
            f"checkpoint features are {ckpt_meta['feature_kind']}, corpus "
            f"is {corpus.feature_kind}"
        )
    pairs = load_pairs(corpus, list(ids))
    n_class = model.config.num_class
    if n_class == 2 and corpus.vocab.num_classes != 1:
        pairs = [(fm, to_binary(lt)) for fm, lt in pairs]
    elif n_class != corpus.vocab.num_classes + 1:
        raise ClassArityMismatch(
            f"checkpoint has {n_class} classes, corpus has "
            f"{corpus.vocab.num_classes + 1}"
        )
    return pairs


def cmd_eval(args) -> int:
    t0 = time.time()
    model, meta = load_checkpoint(args.ckpt)
    corpus = read_manifest(args.manifest)
    split = read_split(args.split)
    ids = getattr(split, args.partition)
    pairs = _load_eval_pairs(meta, model, corpus, ids)
    preds = [forward(model, fm, train_mode=False) for fm, _ in pairs]
    report = metrics.evaluate(preds, [lt for _, lt in pairs])
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _write_run_manifest(out.with_suffix(".run.json"), "eval", args,
                        [Path(args.ckpt), Path(args.manifest), Path(args.split)],
                        [out], t0)
    aucpr = "n/a" if report.aucpr is None else f"{report.aucpr:.4f}"
    print(f"accuracy {report.accuracy:.4f} weighted_f1 {report.weighted_f1:.4f} "
          f"aucpr {aucpr} over {report.num_frames} frames")
    return 0


def cmd_predict(args) -> int:
    t0 = time.time()
    model, meta = load_checkpoint(args.ckpt)
    clip = audio_ingest.canonicalize(audio_ingest.load_wav(args.wav))
    grid = audio_ingest.frame_grid(clip)
    kind = meta["feature_kind"]
    if kind == "external":
        if not args.apef:
            raise MissingFile(
                "external-feature checkpoints need --apef; "
                + _exporter_hint(Path(args.wav).parent, Path("exported"))
            )
        fm = featurize.load_external_features(args.apef, grid)
    else:
        fm = featurize.featurize_clip(clip, grid, kind)
    posteriors = forward(model, fm, train_mode=False)
    segments = metrics.to_segments(posteriors, min_dur=args.min_dur)
    names = {int(v): k for k, v in meta["vocab"].items()}
    rows = ["clip_id\tstart\tend\tlabel\tconfidence"]
    for seg in segments:
        rows.append(f"{seg.clip_id}\t{seg.start:.2f}\t{seg.end:.2f}"
                    f"\t{names[seg.class_index]}\t{seg.mean_posterior:.4f}")
    out = Path(args.out)
    out.write_text("\n".join(rows) + "\n")
    inputs = [Path(args.ckpt), Path(args.wav)]
    if args.apef:
        inputs.append(Path(args.apef))
    _write_run_manifest(out.with_suffix(".run.json"), "predict", args,
                        inputs, [out], t0)
    print(f"wrote {len(segments)} segments to {out}")
    return 0


def cmd_transfer(args) -> int:
    t0 = time.time()
    job = TransferJob(
        checkpoint=Path(args.ckpt),
        manifest=Path(args.manifest),
        split=Path(args.split),
        partition=args.partition,
        mode="binary" if args.binary else "",
    )
    report = transfer_eval(job)
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    _write_run_manifest(out.with_suffix(".run.json"), "transfer", args,
                        [job.checkpoint, job.manifest, job.split], [out], t0)
    aucpr = "n/a" if report.aucpr is None else f"{report.aucpr:.4f}"
    print(f"transfer accuracy {report.accuracy:.4f} weighted_f1 "
          f"{report.weighted_f1:.4f} aucpr {aucpr}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apesed",
        description="Frame-level call detection and classification in raw audio.",
    )
    parser.add_argument("--version", action="version",
                        version=f"apesed {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="canonicalize audio and rasterize labels")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", default=None,
                   help="annotation TSV (default <in>/annotations.tsv)")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("annotate", help="rasterize a TSV against canonical wavs")
    p.add_argument("--wavs", required=True)
    p.add_argument("--tsv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("featurize", help="write per-clip feature files")
    p.add_argument("--corpus", required=True, help="directory made by prep")
    p.add_argument("--kind", required=True,
                   choices=("waveform", "spectrogram", "external"))
    p.add_argument("--apef-in", default=None,
                   help="directory of exported APEF files (kind=external)")
    p.add_argument("--manifest-out", default=None)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("split", help="seeded 80/10/10 clip split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--arch", default="lstm",
                   choices=("lstm", "blstm", "transformer", "ar_lstm", "ar_blstm"))
    p.add_argument("--feature", default=None,
                   choices=("waveform", "spectrogram", "external"),
                   help="assert the manifest's feature kind")
    p.add_argument("--binary", action="store_true",
                   help="collapse labels to call vs. non-call")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--dropout", type=float, default=0.4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--no-balance", action="store_true",
                   help="disable reciprocal class weighting")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split partition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment calls in one wav file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--apef", default=None,
                   help="pre-exported APEF file (external-feature checkpoints)")
    p.add_argument("--min-dur", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("transfer", help="zero-shot eval on another corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", default="test", choices=("train", "val", "test"))
    p.add_argument("--binary", action="store_true", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ApesedError as err:
        print(f"error: code={err.exit_code} kind={type(err).__name__} "
              f"msg={err}", file=sys.stderr)
        return err.exit_code
    except ValueError as err:
        print(f"error: code=2 kind=ValueError msg={err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: code=5 kind={type(err).__name__} msg={err}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())

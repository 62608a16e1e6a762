"""Zero-shot cross-corpus evaluation: run a trained binary checkpoint on
another corpus's clips without any weight update."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .annotations import to_binary
from .dataset import load_pairs, read_manifest, read_split
from .errors import BadConfig, ClassArityMismatch, FeatureKindMismatch
from .metrics import EvalReport, evaluate
from .neural.checkpoint import load_checkpoint
from .neural.model import forward

PARTITIONS = ("train", "val", "test")


@dataclass(frozen=True)
class TransferJob:
    checkpoint: Path
    manifest: Path
    split: Path
    partition: str = "test"
    mode: str = "binary"


def transfer_eval(job: TransferJob) -> EvalReport:
    """Evaluate a binary checkpoint on a target corpus partition.

    Target labels are collapsed to call vs. non-call; the checkpoint is
    only read, never written.
    """
    if job.mode != "binary":
        raise BadConfig(f"unsupported transfer mode {job.mode!r}")
    if job.partition not in PARTITIONS:
        raise BadConfig(f"unknown partition {job.partition!r}")
    model, meta = load_checkpoint(job.checkpoint)
    if model.config.num_class != 2:
        raise ClassArityMismatch(
            f"binary transfer needs a 2-class checkpoint, got "
            f"{model.config.num_class} classes"
        )
    corpus = read_manifest(job.manifest)
    if meta["feature_kind"] != corpus.feature_kind:
        raise FeatureKindMismatch(
            f"checkpoint features are {meta['feature_kind']}, target corpus "
            f"is {corpus.feature_kind}"
        )
    split = read_split(job.split)
    ids = getattr(split, job.partition)
    pairs = load_pairs(corpus, list(ids))
    golds = [to_binary(lt) for _, lt in pairs]
    preds = [forward(model, fm, train_mode=False) for fm, _ in pairs]
    return evaluate(preds, golds)

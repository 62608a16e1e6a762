"""Batch export of frozen wav2vec 2.0 embeddings to APEF feature files."""

from .errors import ExporterError, InputNotCanonical, ModelLoadFailure
from .export import ExportJob, export_features

__all__ = [
    "ExportJob",
    "export_features",
    "ExporterError",
    "InputNotCanonical",
    "ModelLoadFailure",
]

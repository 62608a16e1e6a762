"""Sequence models, exact reverse-mode gradients, and checkpoints."""

from .model import (  # noqa: F401
    ModelConfig,
    PosteriorMatrix,
    SequenceModel,
    backward,
    build_loss,
    class_weights,
    forward,
    init,
    loss,
)

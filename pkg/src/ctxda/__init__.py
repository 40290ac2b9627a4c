"""ctxda: dialogue act classification from character-level utterance vectors.

The pipeline has three stages: a byte-level multiplicative LSTM language
model turns each utterance into a fixed-length vector, a small recurrent
classifier reads the current utterance plus a window of preceding ones,
and a training/experiment driver reports accuracy over repeated seeded
runs. Everything is built on dense numpy kernels with hand-derived
gradients; see `ctxda.numkernel` for the numeric conventions.
"""

__version__ = "0.1.0"

from ctxda.numkernel import (
    AdamState,
    Rng,
    adam_step,
    clip_global_norm,
    cross_entropy,
    finite_difference_check,
    softmax,
)

__all__ = [
    "AdamState",
    "Rng",
    "adam_step",
    "clip_global_norm",
    "cross_entropy",
    "finite_difference_check",
    "softmax",
]

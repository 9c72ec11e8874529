"""Companion trainer for the merging toolkit's bench tasks.

Trains real toy-transformer experts with torch and exports them in the shared
`.st` checkpoint format.  Communicates with the toolkit only through files:
checkpoints, the canonical model-config JSON, and JSONL datasets.
"""

from .model import TinyDecoder, TrainerModelConfig
from .train import TrainSpec, train_expert

__version__ = "0.1.0"

"""MAG fusion in a small from-scratch transformer for sentiment-intensity regression."""

from magfuse._kernels import BACKEND
from magfuse.data import Corpus, GenConfig, MultimodalInstance, SplitSpec, Vocabulary
from magfuse.encoder import EncoderConfig
from magfuse.mag import MagConfig
from magfuse.metrics import MetricsReport
from magfuse.model import MagFuseModel, ModelConfig
from magfuse.train import RunLog, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Corpus",
    "EncoderConfig",
    "GenConfig",
    "MagConfig",
    "MagFuseModel",
    "MetricsReport",
    "ModelConfig",
    "MultimodalInstance",
    "RunLog",
    "SplitSpec",
    "TrainConfig",
    "Vocabulary",
]

"""Language-and-visual relationship graph navigator on synthetic worlds."""
from .agent import Agent, ModelConfig
from .config import DataConfig, ExperimentConfig, TrainConfig
from .dataset import Dataset, build_dataset

__version__ = "0.1.0"

__all__ = ["Agent", "ModelConfig", "DataConfig", "ExperimentConfig", "TrainConfig", "Dataset",
           "build_dataset", "__version__"]

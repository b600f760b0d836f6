"""Temporal link prediction with a masked graph transformer over sampled neighborhoods."""
from .data import SplitSpec, chronological_split, make_planted
from .events import EventStore, InteractionHistory, from_arrays, load_dataset, read_jodie_csv
from .model import CorDGT, ModelConfig
from .proximity import TdParams
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

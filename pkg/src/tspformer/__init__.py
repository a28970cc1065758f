"""Transformer encoder/decoder solver for the Euclidean TSP on a numpy autograd."""

from .inference import greedy_decode, multi_start_decode
from .model import ModelConfig, TSPTransformer
from .oracle import brute_force, held_karp, nearest_neighbor, two_opt
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .tsp import DatasetRecord, Instance, Tour, gen_instance, optimality_gap, read_dataset, tour_length, write_dataset

__version__ = "0.1.0"

__all__ = [
    "DatasetRecord",
    "Instance",
    "ModelConfig",
    "TSPTransformer",
    "Tour",
    "TrainConfig",
    "brute_force",
    "gen_instance",
    "greedy_decode",
    "held_karp",
    "load_checkpoint",
    "multi_start_decode",
    "nearest_neighbor",
    "optimality_gap",
    "read_dataset",
    "save_checkpoint",
    "tour_length",
    "train",
    "two_opt",
    "write_dataset",
]

"""Neural-network interatomic potential engine with charge equilibration,
electro-chemo-mechanics analyzers, and a charge/discharge cycling simulator."""

__version__ = "0.1.0"

from .calculators import LennardJonesCalculator, PotentialCalculator
from .descriptors import AcsfParams, compute_acsf
from .estimator import AcsfFeaturizer, NeuralPotential
from .neighbors import NeighborList, build_neighbor_list
from .potential import PotentialModel, Prediction, predict
from .structure import Region, Structure, apply_strain, replicate
from .training import Sample, TrainConfig, evaluate, load_dataset, train
from .xyz import parse_frames, parse_structure, write_frame

__all__ = [
    "AcsfFeaturizer",
    "AcsfParams",
    "LennardJonesCalculator",
    "NeighborList",
    "NeuralPotential",
    "PotentialCalculator",
    "PotentialModel",
    "Prediction",
    "Region",
    "Sample",
    "Structure",
    "TrainConfig",
    "apply_strain",
    "build_neighbor_list",
    "compute_acsf",
    "evaluate",
    "load_dataset",
    "parse_frames",
    "parse_structure",
    "predict",
    "replicate",
    "train",
    "write_frame",
]

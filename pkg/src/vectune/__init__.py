"""Multi-objective auto-tuning of vector database index and system knobs."""

from .space import ConfigSpace, Configuration, default_config, demo_space, load_space
from .pareto import ObjectiveVector, ParetoArchive, balanced_anchor, hypervolume_2d
from .backends import CommandBackend, SimSpec, SimulatedBackend
from .tuner import ObjectiveSpec, PollingTuner, TunerConfig, random_search, run

__version__ = "0.1.0"

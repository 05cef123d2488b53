from .base import PAD, ConfigError, Environment, InvalidActionError, StepResult, states_equal, take
from .dag import DagEnvironment, LocalScoreCache, ScoreParams
from .hypergrid import HypergridEnvironment, HypergridParams, grid_exact_distribution, grid_log_reward
from .ising import IsingEnvironment
from .phylo import PhyloEnvironment, PhyloParams, SpeciesData
from .sequences import SequenceEnvironment, SequenceParams, bitseq_environment

__all__ = [
    "PAD", "ConfigError", "Environment", "InvalidActionError", "StepResult", "states_equal", "take",
    "DagEnvironment", "LocalScoreCache", "ScoreParams",
    "HypergridEnvironment", "HypergridParams", "grid_exact_distribution", "grid_log_reward",
    "IsingEnvironment", "PhyloEnvironment", "PhyloParams", "SpeciesData",
    "SequenceEnvironment", "SequenceParams", "bitseq_environment",
]

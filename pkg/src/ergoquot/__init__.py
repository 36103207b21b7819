"""Coherent-structure detection from time-averaged Fourier observables.

Trajectories are mapped to vectors of trajectory averages of Fourier
observables, compared with a negative-order Sobolev distance, embedded with
Diffusion Maps and clustered with k-means.
"""

from .archive import Archive, verify_archive
from .clustering import ClusterResult, kmeans, kmeans_oracle
from .config import RunConfig, load_config, sample_initial_conditions
from .diffmaps import DiffusionEmbedding, diffusion_map
from .dynamics import (
    ExtendedSystem,
    FlowSystem,
    builtin_abc,
    builtin_hill,
    builtin_oscillator,
    expression_system,
    extend_periodic,
)
from .integrator import AveragingConfig, QuotientSample, run_ensemble, run_until_converged
from .metric import DistanceMatrix, distance, pairwise_matrix, sobolev_params
from .observables import ObservableBasis, WaveLattice, eval_basis, make_basis, make_lattice
from .pipeline import export_pointcloud, run_pipeline

__version__ = "0.1.0"

"""Simulator for atom networks coupled to semi-infinite and infinite waveguides."""
from .network import Atom, CouplingPoint, InvalidNetworkError, Network, Port, WaveguideKind, validate
from .kernels import (
    Channel,
    CoefficientTable,
    DelayKernel,
    DeltaTerm,
    channel_kernel,
    commutator_kernel,
    gauge_coefficients,
    is_markovian,
    ito_table,
)
from .dynamics import build_hamiltonian, evolve_master, rhs_three_atom
from .filtering import filter_step, run_ensemble, run_trajectory
from .io_relations import equivalence_check, output_relation
from .config import RunConfig, load_config, preset

__version__ = "0.1.0"

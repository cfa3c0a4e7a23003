"""Normalized NLS ground states and mountain-pass solutions on metric graphs."""

__version__ = "0.1.0"

from .errors import GraphNLSError  # noqa: E402
from .metric_graph import MetricGraph, build_standard, classify, load_graph  # noqa: E402
from .discretization import Mesh, GridFunction, energy, norms  # noqa: E402
from .solver import SolverConfig, StationarySolution, newton_constrained  # noqa: E402
from .mountain_pass import MPConfig, auto_path, minmax_relax, path_max_energy  # noqa: E402

"""Network lasso: joint clustering and per-node model fitting on graphs."""

from .admm import (
    EdgeUpdateResult,
    InfeasibleError,
    SolverConfig,
    SolverResult,
    extract_clusters,
    network_lasso_objective,
    residuals,
    solve,
    u_update,
    x_update,
    z_update,
)
from .graph import ADMMState, DuplicateEdgeError, GraphError, GraphParseError, ProblemGraph, build_graph, neighbors
from .nonconvex import NonconvexConfig, PhiLog, solve_nonconvex, z_update_log
from .objectives import (
    EventObjective,
    NodeObjective,
    ProxError,
    QuadraticObjective,
    RegressionObjective,
    SvmObjective,
    ZeroObjective,
)

__version__ = "0.1.0"

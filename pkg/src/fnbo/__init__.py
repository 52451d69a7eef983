"""Cost-aware Bayesian optimization of function networks.

The objective is a DAG of scalar node functions; individual nodes can be
evaluated at chosen inputs for node-specific costs. Per-node GP surrogates
induce a posterior over the final output, and acquisition policies (fast and
original cost-normalized knowledge gradient, network expected improvement,
plus black-box baselines) decide what to evaluate next.
"""

from .discrete import DiscreteSetConfig, batch_thompson, build_set, local_points
from .errors import FnboError
from .gp import GPState, KernelConfig, fit, fantasize, posterior, sample_path
from .harness import (
    ExperimentConfig,
    TraceRecord,
    TrialResult,
    initial_design,
    run_experiment,
    run_trial,
    summarize,
)
from .netposterior import NetworkPosterior, fit_node
from .network import (
    NetworkSpec,
    NodeInput,
    assemble_node_input,
    evaluate_network,
    network_from_json,
    network_to_json,
    validate,
)
from .problems import ProblemSpec, ackmat, get_problem, load_custom, manu

__all__ = [
    "DiscreteSetConfig",
    "ExperimentConfig",
    "FnboError",
    "GPState",
    "KernelConfig",
    "NetworkPosterior",
    "NetworkSpec",
    "NodeInput",
    "ProblemSpec",
    "TraceRecord",
    "TrialResult",
    "ackmat",
    "assemble_node_input",
    "batch_thompson",
    "build_set",
    "evaluate_network",
    "fantasize",
    "fit",
    "fit_node",
    "get_problem",
    "initial_design",
    "load_custom",
    "local_points",
    "manu",
    "network_from_json",
    "network_to_json",
    "posterior",
    "run_experiment",
    "run_trial",
    "sample_path",
    "summarize",
    "validate",
]

__version__ = "0.1.0"

"""Benchmark function networks and the loader for user-defined ones."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnknownFunctionKind
from .network import NetworkSpec, network_from_json, propagate_functions, validate


@dataclass
class ProblemSpec:
    """A network plus ground-truth node functions and benchmark defaults."""

    spec: NetworkSpec
    truth: list
    name: str
    default_budget: float

    @property
    def default_costs(self):
        return self.spec.costs

    def evaluate_node(self, k, z):
        """Ground-truth partial evaluation of node k at raw input z."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        out = np.asarray(self.truth[k](np.atleast_2d(z)), dtype=float).reshape(-1)
        return float(out[0]) if single else out

    def truth_outputs(self, X):
        """All node outputs of the true network at each row of X: (K, m)."""
        return propagate_functions(self.spec, self.truth, np.atleast_2d(X))

    def truth_final(self, X):
        """True objective values y_K at each row of X."""
        return self.truth_outputs(X)[self.spec.K - 1]


def ackley6(Z):
    """Six-dimensional Ackley bowl, zero at the origin, nonnegative."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    quad = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(Z ** 2, axis=1)))
    osc = -np.exp(np.mean(np.cos(2.0 * math.pi * Z), axis=1))
    return quad + osc + 20.0 + math.e


def negated_matyas(Z):
    """-0.26(a^2 + b^2) + 0.48 a b; negative definite with maximum 0 at 0."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return -0.26 * (Z[:, 0] ** 2 + Z[:, 1] ** 2) + 0.48 * Z[:, 0] * Z[:, 1]


def ackmat():
    """Two-node cascade: Ackley feeds a negated-Matyas merge with one extra
    input. Costs 1 and 49, budget 700."""
    spec = validate(
        NetworkSpec(
            K=2,
            parents=[[], [0]],
            ext_inputs=[[0, 1, 2, 3, 4, 5], [6]],
            domain=[[-2.0, 2.0]] * 6 + [[-10.0, 10.0]],
            parent_ranges=[np.zeros((0, 2)), [[0.0, 20.0]]],
            costs=[1.0, 49.0],
        )
    )
    return ProblemSpec(spec=spec, truth=[ackley6, negated_matyas], name="ackmat",
                       default_budget=700.0)


def _matern52_prior_path(lengthscale, outputscale, dim, seed, n_features=4096):
    """A fixed draw from a zero-mean Matern-5/2 prior via Fourier features."""
    rng = np.random.default_rng(seed)
    chi = rng.chisquare(5.0, n_features)
    freq = rng.standard_normal((n_features, dim)) * np.sqrt(5.0 / chi)[:, None]
    freq /= lengthscale
    phases = rng.uniform(0.0, 2.0 * math.pi, n_features)
    weights = rng.standard_normal(n_features)
    amp = math.sqrt(2.0 * outputscale / n_features)

    def path(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return amp * (np.cos(Z @ freq.T + phases) @ weights)

    return path


def manu(seed=0):
    """Four-node manufacturing-style network with GP-prior-drawn truths.

    Two chains (one two-stage, one single-stage) merge in a final node.
    Lengthscales (0.631, 1, 1, 3) and outputscales (0.631, 0.631, 0.631, 10);
    intermediate outputs are clamped into their declared ranges. Deterministic
    per seed.
    """
    spec = validate(
        NetworkSpec(
            K=4,
            parents=[[], [0], [], [1, 2]],
            ext_inputs=[[0], [], [1], []],
            domain=[[-1.0, 1.0], [-1.0, 1.0]],
            parent_ranges=[
                np.zeros((0, 2)),
                [[-2.0, 2.0]],
                np.zeros((0, 2)),
                [[-1.0, 1.0], [-1.0, 1.0]],
            ],
            costs=[5.0, 10.0, 10.0, 45.0],
        )
    )
    lengthscales = [0.631, 1.0, 1.0, 3.0]
    outputscales = [0.631, 0.631, 0.631, 10.0]
    clamps = [(-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0), None]
    seeds = np.random.SeedSequence(seed).spawn(4)
    truth = []
    for k in range(4):
        path = _matern52_prior_path(lengthscales[k], outputscales[k], spec.node_dim(k),
                                    seeds[k])
        clamp = clamps[k]
        if clamp is None:
            truth.append(path)
        else:
            truth.append(lambda Z, p=path, c=clamp: np.clip(p(Z), c[0], c[1]))
    return ProblemSpec(spec=spec, truth=truth, name="manu", default_budget=700.0)


# ---------------------------------------------------------------------------
# User-defined problems
# ---------------------------------------------------------------------------

_BUILTINS = {"ackley6": ackley6, "negated_matyas": negated_matyas}


def _function_from_descriptor(desc, node_dim):
    kind = desc.get("kind")
    if kind == "polynomial":
        terms = desc.get("terms")
        if not terms:
            raise ParseError("polynomial descriptor needs a nonempty 'terms' list")
        parsed = []
        for t in terms:
            expo = [int(e) for e in t["exponents"]]
            if len(expo) != node_dim:
                raise ParseError(
                    f"polynomial term has {len(expo)} exponents, node takes {node_dim}"
                )
            parsed.append((float(t["coef"]), expo))

        def poly(Z, parsed=parsed):
            Z = np.atleast_2d(np.asarray(Z, dtype=float))
            out = np.zeros(Z.shape[0])
            for coef, expo in parsed:
                term = np.full(Z.shape[0], coef)
                for d, e in enumerate(expo):
                    if e:
                        term = term * Z[:, d] ** e
                out += term
            return out

        return poly
    if kind == "table":
        if node_dim != 1:
            raise ParseError("tabulated nodes support 1-d inputs only")
        pts = sorted((float(a), float(b)) for a, b in desc["points"])
        grid = np.array([p[0] for p in pts])
        vals = np.array([p[1] for p in pts])
        if grid.size < 2:
            raise ParseError("tabulated node needs at least two grid points")

        def table(Z, grid=grid, vals=vals):
            Z = np.atleast_2d(np.asarray(Z, dtype=float))
            return np.interp(Z[:, 0], grid, vals)

        return table
    if kind == "builtin":
        name = desc.get("name")
        if name not in _BUILTINS:
            raise UnknownFunctionKind(f"unknown builtin function {name!r}")
        return _BUILTINS[name]
    raise UnknownFunctionKind(f"unknown node function kind {kind!r}")


def load_custom(path):
    """Load a user-defined problem from a JSON file.

    The document carries the 1-based network description under "network",
    one function descriptor per node under "functions" (kinds: polynomial,
    table, builtin), and optionally "name" and "budget".
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}") from e
    if "network" not in doc or "functions" not in doc:
        raise ParseError("document needs 'network' and 'functions' keys")
    spec = network_from_json(doc["network"])
    descs = doc["functions"]
    if len(descs) != spec.K:
        raise ParseError(f"need {spec.K} function descriptors, got {len(descs)}")
    truth = [
        _function_from_descriptor(descs[k], spec.node_dim(k)) for k in range(spec.K)
    ]
    name = doc.get("name", os.path.splitext(os.path.basename(path))[0])
    budget = float(doc.get("budget", 10.0 * spec.total_cost()))
    return ProblemSpec(spec=spec, truth=truth, name=name, default_budget=budget)


def get_problem(name_or_path, seed=0):
    """Resolve a builtin problem name or a path to a custom JSON problem."""
    if name_or_path == "ackmat":
        return ackmat()
    if name_or_path == "manu":
        return manu(seed=seed)
    if os.path.exists(name_or_path):
        return load_custom(name_or_path)
    raise ParseError(f"unknown problem {name_or_path!r} (not a builtin, not a file)")
